"""Batch execution of validated scenarios and result files."""
from __future__ import annotations

import csv
import io
import json
import math
import os
import re
import tempfile
import time
import traceback
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Sequence

from . import langevin, markov, non_hermitian, quantum
from .config import (
    BUILDERS,
    ConfigError,
    ScenarioConfig,
    _as_int,
    as_number,
    override,
    _scenario,
)
from .info_geometry import check_inequality

SCHEMA_VERSION = 1
EXIT_OK, EXIT_VIOLATION, EXIT_ERROR = 0, 1, 2


@dataclass
class RunSummary:
    id: str
    kind: str
    status: str  # "pass", "fail" or "error"
    checks: list[dict[str, Any]] = field(default_factory=list)
    diagnostics: dict[str, Any] = field(default_factory=dict)
    wall_time: float = 0.0
    csv: str | None = None
    error: str | None = None

    @property
    def passed(self) -> bool:
        return self.status == "pass"

    def to_dict(self) -> dict[str, Any]:
        return {
            "id": self.id,
            "kind": self.kind,
            "status": self.status,
            "passed": self.passed,
            "checks": self.checks,
            "diagnostics": self.diagnostics,
            "wall_time": self.wall_time,
            "csv": self.csv,
            "error": self.error,
        }


def exit_status(summaries: Iterable[RunSummary]) -> int:
    statuses = {s.status for s in summaries}
    if "error" in statuses:
        return EXIT_ERROR
    if "fail" in statuses:
        return EXIT_VIOLATION
    return EXIT_OK


# -- file output -------------------------------------------------------------------

def format_float(x: float) -> str:
    return "%.17g" % x


def atomic_write(path: Path, data: str) -> None:
    """Write to a temporary file in the target directory, then rename over ``path``."""
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def table_csv(table: dict[str, Sequence[Any]]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\r\n")
    cols = list(table)
    writer.writerow(cols)
    n = len(table[cols[0]]) if cols else 0
    for i in range(n):
        writer.writerow([_cell(table[c][i]) for c in cols])
    return buf.getvalue()


def _cell(value: Any) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return format_float(value)
    return str(value)


def _json_safe(value: Any) -> Any:
    """Replace non-finite floats by strings so the summary stays strict JSON."""
    if isinstance(value, dict):
        return {str(k): _json_safe(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_json_safe(v) for v in value]
    if hasattr(value, "item") and not isinstance(value, (str, bytes)):
        value = value.item()
    if isinstance(value, float) and not math.isfinite(value):
        return "nan" if math.isnan(value) else ("inf" if value > 0 else "-inf")
    return value


def summary_json(summaries: Sequence[RunSummary], status: int) -> str:
    doc = {"schema_version": SCHEMA_VERSION, "status": status, "scenarios": [s.to_dict() for s in summaries]}
    return json.dumps(_json_safe(doc), indent=2, allow_nan=False) + "\n"


def _filename(sid: str) -> str:
    return re.sub(r"[^A-Za-z0-9_.\-=@+]", "_", sid) + ".csv"


# -- execution ---------------------------------------------------------------------

def _langevin(cfg: ScenarioConfig):
    model, initial = BUILDERS["langevin"](cfg)
    dt = model.max_stable_dt() if cfg.dt == "max_stable" else cfg.dt
    run = langevin.run_langevin_experiment(
        model, initial, cfg.tau, dt, cfg.t0, bound_scale=cfg.bound_scale, name=cfg.id, **cfg.tolerances.run_kwargs()
    )
    if cfg.mc is not None:
        seed = 0 if cfg.seed is None else cfg.seed
        fpe_dt = as_number(cfg.mc["fpe_dt"]) if "fpe_dt" in cfg.mc else None
        est = langevin.path_fisher_mc(
            model, initial, as_number(cfg.mc["t"]), as_number(cfg.mc["dt"]), _as_int(cfg.mc["trajectories"]), seed, fpe_dt=fpe_dt
        )
        half_entropy = est.entropy / 2.0
        # two-sided identity, recorded as the distance to the band edge
        band = cfg.tolerances.mc_sigmas * est.std_error
        run.report.add(
            check_inequality(
                "path_fisher_identity",
                band,
                abs(est.estimate - half_entropy),
                0.0,
                note=f"estimate {est.estimate!r} +/- {est.std_error!r} vs Sigma/2 = {half_entropy!r}",
            )
        )
        run.report.metadata.update(
            {"mc_estimate": est.estimate, "mc_std_error": est.std_error, "mc_trajectories": est.n_trajectories, "mc_seed": seed}
        )
    return run


def _markov(cfg: ScenarioConfig):
    model, probs = BUILDERS["markov"](cfg)
    return markov.run_markov_experiment(
        model, probs, cfg.tau, cfg.dt, cfg.t0, bound_scale=cfg.bound_scale, name=cfg.id, **cfg.tolerances.run_kwargs()
    )


def _open_quantum(cfg: ScenarioConfig):
    system = BUILDERS["open_quantum"](cfg)
    return quantum.run_open_quantum_experiment(
        system, cfg.tau, cfg.dt, bound_scale=cfg.bound_scale, name=cfg.id, **cfg.tolerances.run_kwargs()
    )


def _non_hermitian(cfg: ScenarioConfig):
    model, rho0 = BUILDERS["non_hermitian"](cfg)
    return non_hermitian.run_nh_experiment(
        model, rho0, cfg.tau, cfg.dt, bound_scale=cfg.bound_scale, name=cfg.id, **cfg.tolerances.run_kwargs()
    )


RUNNERS = {"langevin": _langevin, "markov": _markov, "open_quantum": _open_quantum, "non_hermitian": _non_hermitian}


def execute(cfg: ScenarioConfig, out_dir: str | os.PathLike | None) -> RunSummary:
    """Run one scenario and write its series CSV. Errors become an ``error`` summary."""
    start = time.perf_counter()
    try:
        run = RUNNERS[cfg.kind](cfg)
        csv_name = None
        if out_dir is not None:
            csv_name = _filename(cfg.id)
            atomic_write(Path(out_dir) / csv_name, table_csv(run.table))
        report = run.report
        return RunSummary(
            cfg.id,
            cfg.kind,
            "pass" if report.passed else "fail",
            [c.to_dict() for c in report.checks],
            dict(report.metadata),
            time.perf_counter() - start,
            csv_name,
        )
    except Exception as exc:  # a scenario failure must not take its siblings down
        return RunSummary(
            cfg.id,
            cfg.kind,
            "error",
            wall_time=time.perf_counter() - start,
            error=f"{type(exc).__name__}: {exc}",
            diagnostics={"traceback": traceback.format_exc(limit=5)},
        )


def _resolve_out(cfg: ScenarioConfig, out_dir: str | os.PathLike | None) -> str | None:
    if out_dir is not None:
        return os.fspath(out_dir)
    return cfg.output_dir


def run_scenarios(
    configs: Sequence[ScenarioConfig],
    jobs: int = 1,
    out_dir: str | os.PathLike | None = None,
    summary_name: str = "summary.json",
) -> tuple[list[RunSummary], int]:
    """Run every scenario, scenarios in parallel when ``jobs > 1``.

    Results keep the config order. When an output directory is known the
    summary JSON is written there as well.
    """
    if jobs < 1:
        raise ValueError("jobs must be >= 1")
    outs = [_resolve_out(c, out_dir) for c in configs]
    if jobs == 1 or len(configs) <= 1:
        summaries = [execute(c, o) for c, o in zip(configs, outs)]
    else:
        with ProcessPoolExecutor(max_workers=min(jobs, len(configs))) as pool:
            summaries = list(pool.map(execute, configs, outs))
    status = exit_status(summaries)
    summary_dir = out_dir if out_dir is not None else next((o for o in outs if o is not None), None)
    if summary_dir is not None:
        atomic_write(Path(summary_dir) / summary_name, summary_json(summaries, status))
    return summaries, status


# -- sweeps ---------------------------------------------------------------------------

def parse_values(text: str) -> list[Any]:
    """Split ``v1,v2,...``; integers stay integers, other entries go through the expression parser."""
    out: list[Any] = []
    for part in (p.strip() for p in text.split(",")):
        if not part:
            continue
        if re.fullmatch(r"[+-]?\d+", part):
            out.append(int(part))
        else:
            try:
                out.append(as_number(part))
            except ValueError:
                out.append(part)
    return out


def sweep_configs(configs: Sequence[ScenarioConfig], param: str, values: Sequence[Any]) -> list[ScenarioConfig]:
    """One config per (scenario, value); the parameter is a dotted path such as ``model.g``."""
    issues: list[str] = []
    out: list[ScenarioConfig] = []
    for index, cfg in enumerate(configs):
        for value in values:
            try:
                raw = override(cfg.raw, param, value)
            except KeyError:
                issues.append(f"scenario {cfg.id!r}: parameter {param!r} is not addressable")
                break
            raw["id"] = f"{cfg.id}@{param}={_cell(value)}"
            try:
                new = _scenario(raw, index)
            except Exception as exc:
                detail = "; ".join(m for _, m in getattr(exc, "issues", [])) or str(exc)
                issues.append(f"scenario {cfg.id!r}, {param}={value!r}: {detail}")
                continue
            out.append(new.with_seed(cfg.seed) if cfg.kind == "langevin" else new)
    if issues:
        raise ConfigError(issues)
    return out


def richardson(slacks: Sequence[float]) -> list[float | None]:
    """``(s[i-2] - s[i-1]) / (s[i-1] - s[i])``: about 2^p for an order-p method under step halving."""
    out: list[float | None] = [None] * len(slacks)
    for i in range(2, len(slacks)):
        den = slacks[i - 1] - slacks[i]
        num = slacks[i - 2] - slacks[i - 1]
        out[i] = num / den if den != 0.0 else (math.inf if num != 0.0 else math.nan)
    return out


def sweep_table(
    base_ids: Sequence[str], param: str, values: Sequence[Any], summaries: Sequence[RunSummary]
) -> dict[str, list[Any]]:
    """Wide table, one row per (scenario, value): slack of every check plus its Richardson ratio."""
    n_values = len(values)
    check_names: list[str] = []
    for s in summaries:
        for c in s.checks:
            if c["name"] not in check_names:
                check_names.append(c["name"])
    cols = ["scenario", "param", "value", "status"]
    for name in check_names:
        cols += [f"{name}_slack", f"{name}_richardson"]
    table: dict[str, list[Any]] = {c: [] for c in cols}
    for b, base in enumerate(base_ids):
        group = summaries[b * n_values : (b + 1) * n_values]
        ratios = {}
        for name in check_names:
            slacks = [next((c["slack"] for c in s.checks if c["name"] == name), math.nan) for s in group]
            ratios[name] = (slacks, richardson(slacks))
        for i, s in enumerate(group):
            table["scenario"].append(base)
            table["param"].append(param)
            table["value"].append(float(values[i]) if isinstance(values[i], (int, float)) else values[i])
            table["status"].append(s.status)
            for name in check_names:
                slack = ratios[name][0][i]
                table[f"{name}_slack"].append(None if math.isnan(slack) else slack)
                r = ratios[name][1][i]
                table[f"{name}_richardson"].append(None if r is None or math.isnan(r) else r)
    return table


def run_sweep(
    configs: Sequence[ScenarioConfig],
    param: str,
    values: Sequence[Any],
    jobs: int = 1,
    out_dir: str | os.PathLike = "results",
) -> tuple[dict[str, list[Any]], list[RunSummary], int]:
    swept = sweep_configs(configs, param, values)
    summaries, status = run_scenarios(swept, jobs, out_dir)
    table = sweep_table([c.id for c in configs], param, values, summaries)
    atomic_write(Path(out_dir) / "sweep.csv", table_csv(table))
    return table, summaries, status
