"""Declarative scenario configs.

A config file holds a list of scenarios, either as TOML ``[[scenario]]`` tables
or as JSON ``{"scenario": [...]}`` (a bare JSON list is accepted too). Parsing
is strict: unknown keys, unknown presets and constraint violations are all
collected and reported together with the line they come from.

Numeric fields accept plain numbers or short arithmetic strings such as
``"pi/4"`` or ``"2*sqrt(2)"``. Complex matrix entries may be written as strings
like ``"1-2j"``.
"""
from __future__ import annotations

import ast
import copy
import inspect
import json
import math
import operator
import re
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from . import langevin, markov, non_hermitian, quantum
from .info_geometry import Boundary, GridDensity, UniformGrid

KINDS = ("langevin", "markov", "open_quantum", "non_hermitian")

MARKOV_PRESETS: dict[str, tuple[Callable[..., markov.MarkovModel], tuple[str, ...]]] = {
    "two_state": (markov.MarkovModel.two_state, ("k12", "k21")),
    "ring": (markov.MarkovModel.ring, ("n", "forward", "backward")),
}

PRESETS: dict[str, dict[str, tuple[Callable[..., Any], tuple[str, ...]]]] = {
    "langevin": langevin.FORCE_PRESETS,
    "markov": MARKOV_PRESETS,
    "open_quantum": quantum.QUANTUM_PRESETS,
    "non_hermitian": non_hermitian.NH_PRESETS,
}

# explicit (non-preset) model keys per kind
EXPLICIT_MODEL_KEYS = {
    "langevin": ("coefficients",),
    "markov": ("rates", "offdiagonal"),
    "open_quantum": ("dim_s", "dim_e", "h_s", "h_e", "h_se"),
    "non_hermitian": ("generator", "hamiltonian", "dissipator"),
}

SCENARIO_KEYS = {
    "id", "kind", "tau", "dt", "t0", "seed", "bound_scale", "output_dir",
    "model", "initial", "tolerances", "grid", "diffusion", "boundary", "mc",
}
KIND_ONLY_KEYS = {
    "grid": {"langevin"},
    "diffusion": {"langevin"},
    "boundary": {"langevin"},
    "mc": {"langevin"},
    "seed": {"langevin"},
    "t0": {"langevin", "markov"},
}
INITIAL_TYPES = {
    "langevin": {"gaussian": {"mean", "var"}, "stationary": set(), "uniform": set()},
    "markov": {"probs": {"probs"}, "stationary": set(), "delta": {"index"}},
    "open_quantum": {"preset": set(), "ket": {"ket"}, "matrix": {"matrix"}},
    "non_hermitian": {"mixed": set(), "ket": {"ket"}, "matrix": {"matrix"}},
}
TOLERANCE_DEFAULTS = {"pointwise_rel": 1e-6, "pointwise_abs": 1e-9, "integrated_tol": 1e-4, "mc_sigmas": 3.0}
MC_KEYS = {"trajectories", "t", "dt", "fpe_dt"}
GRID_KEYS = {"lower", "upper", "cells"}


class ConfigError(ValueError):
    """All problems found in a config, each with its location."""

    def __init__(self, issues: list[str]):
        self.issues = list(issues)
        super().__init__("\n".join(self.issues))


# -- safe arithmetic -----------------------------------------------------------

_BINOPS = {ast.Add: operator.add, ast.Sub: operator.sub, ast.Mult: operator.mul, ast.Div: operator.truediv, ast.Pow: operator.pow}
_UNARY = {ast.UAdd: operator.pos, ast.USub: operator.neg}
_NAMES = {"pi": math.pi, "e": math.e}
_FUNCS = {"sqrt": math.sqrt, "exp": math.exp, "log": math.log, "sin": math.sin, "cos": math.cos}


def evaluate_expression(text: str) -> float:
    """Evaluate a tiny arithmetic language: numbers, ``pi``, ``e``, + - * / ** and a few functions."""

    def ev(node: ast.AST) -> float:
        if isinstance(node, ast.Expression):
            return ev(node.body)
        if isinstance(node, ast.Constant) and isinstance(node.value, (int, float)) and not isinstance(node.value, bool):
            return node.value
        if isinstance(node, ast.Name) and node.id in _NAMES:
            return _NAMES[node.id]
        if isinstance(node, ast.BinOp) and type(node.op) in _BINOPS:
            return _BINOPS[type(node.op)](ev(node.left), ev(node.right))
        if isinstance(node, ast.UnaryOp) and type(node.op) in _UNARY:
            return _UNARY[type(node.op)](ev(node.operand))
        if (
            isinstance(node, ast.Call)
            and isinstance(node.func, ast.Name)
            and node.func.id in _FUNCS
            and len(node.args) == 1
            and not node.keywords
        ):
            return _FUNCS[node.func.id](ev(node.args[0]))
        raise ValueError(f"unsupported expression {text!r}")

    try:
        tree = ast.parse(text.strip(), mode="eval")
    except SyntaxError:
        raise ValueError(f"cannot parse number {text!r}") from None
    value = ev(tree)
    if not math.isfinite(value):
        raise ValueError(f"{text!r} is not finite")
    return value


def as_number(value: Any) -> float:
    if isinstance(value, bool):
        raise ValueError(f"expected a number, got {value!r}")
    if isinstance(value, (int, float)):
        if not math.isfinite(value):
            raise ValueError(f"{value!r} is not finite")
        return value
    if isinstance(value, str):
        return evaluate_expression(value)
    raise ValueError(f"expected a number, got {value!r}")


def _as_int(value: Any) -> int:
    v = as_number(value)
    if float(v) != int(v):
        raise ValueError(f"expected an integer, got {value!r}")
    return int(v)


def _as_complex(value: Any) -> complex:
    if isinstance(value, str):
        try:
            return complex(value.replace(" ", ""))
        except ValueError:
            return complex(evaluate_expression(value))
    return complex(as_number(value))


def as_matrix(value: Any, dtype: type = complex) -> np.ndarray:
    if not isinstance(value, list) or not value or not all(isinstance(r, list) for r in value):
        raise ValueError("expected a matrix given as a list of rows")
    conv = _as_complex if dtype is complex else as_number
    m = np.array([[conv(x) for x in row] for row in value], dtype=dtype)
    if m.ndim != 2:
        raise ValueError("matrix rows have unequal length")
    return m


def as_vector(value: Any, dtype: type = float) -> np.ndarray:
    if not isinstance(value, list) or not value:
        raise ValueError("expected a non-empty list")
    conv = _as_complex if dtype is complex else as_number
    return np.array([conv(x) for x in value], dtype=dtype)


# -- scenario type ---------------------------------------------------------------

@dataclass(frozen=True)
class Tolerances:
    pointwise_rel: float = 1e-6
    pointwise_abs: float = 1e-9
    integrated_tol: float = 1e-4
    mc_sigmas: float = 3.0

    def run_kwargs(self) -> dict[str, float]:
        return {"pointwise_rel": self.pointwise_rel, "pointwise_abs": self.pointwise_abs, "integrated_tol": self.integrated_tol}


@dataclass(frozen=True)
class ScenarioConfig:
    """One validated scenario. ``raw`` keeps the source table for sweeps."""

    id: str
    kind: str
    tau: float
    dt: float | str
    model: dict[str, Any]
    initial: dict[str, Any]
    t0: float | None = None
    tolerances: Tolerances = Tolerances()
    bound_scale: float = 1.0
    seed: int | None = None
    output_dir: str | None = None
    grid: dict[str, Any] | None = None
    diffusion: float = 1.0
    boundary: str = "reflecting"
    mc: dict[str, Any] | None = None
    raw: dict[str, Any] = field(default_factory=dict, repr=False, compare=False)

    def with_seed(self, seed: int | None) -> "ScenarioConfig":
        if seed is None:
            return self
        return ScenarioConfig(**{**self.__dict__, "seed": int(seed)})


# -- building runtime objects ----------------------------------------------------

def _preset_call(kind: str, name: str, params: dict[str, Any]) -> Any:
    table = PRESETS[kind]
    if name not in table:
        raise ValueError(f"unknown {kind} preset {name!r}; choose from {sorted(table)}")
    factory, names = table[name]
    unknown = sorted(set(params) - set(names))
    if unknown:
        raise ValueError(f"preset {name!r} has no parameter(s) {unknown}; it takes {list(names)}")
    sig = inspect.signature(factory)
    required = [p for p in names if sig.parameters[p].default is inspect.Parameter.empty]
    missing = [p for p in required if p not in params]
    if missing:
        raise ValueError(f"preset {name!r} is missing parameter(s) {missing}")
    kwargs = {}
    for key, val in params.items():
        if key == "coefficients":
            kwargs[key] = [float(v) for v in as_vector(val)]
        elif key in ("n", "dim_e"):
            kwargs[key] = _as_int(val)
        else:
            kwargs[key] = as_number(val)
    return factory(**kwargs)


def _split_model(kind: str, model: dict[str, Any]) -> tuple[str | None, dict[str, Any]]:
    params = dict(model)
    preset = params.pop("preset", None)
    own = PRESETS[kind][preset][1] if preset in PRESETS[kind] else ()
    explicit = [k for k in EXPLICIT_MODEL_KEYS[kind] if k in params and k not in own]
    if preset is not None and explicit and not (kind == "langevin" and preset == "polynomial"):
        raise ValueError(f"model gives both preset {preset!r} and explicit field(s) {explicit}; pick one")
    if preset is None and not explicit:
        raise ValueError("model needs a 'preset' or explicit fields " + ", ".join(EXPLICIT_MODEL_KEYS[kind]))
    return preset, params


def build_grid(cfg: ScenarioConfig) -> UniformGrid:
    g = cfg.grid or {}
    if set(g) != GRID_KEYS:
        raise ValueError(f"grid needs exactly {sorted(GRID_KEYS)}")

    def vec(v: Any, conv: Callable[[Any], Any]) -> tuple:
        return tuple(conv(x) for x in v) if isinstance(v, list) else (conv(v),)

    return UniformGrid(vec(g["lower"], as_number), vec(g["upper"], as_number), vec(g["cells"], _as_int))


def build_langevin(cfg: ScenarioConfig) -> tuple[langevin.LangevinModel, GridDensity]:
    preset, params = _split_model("langevin", cfg.model)
    if preset is None:
        preset = "polynomial"
    force = _preset_call("langevin", preset, params)
    grid = build_grid(cfg)
    model = langevin.LangevinModel(force, float(as_number(cfg.diffusion)), grid, Boundary(cfg.boundary))
    init = cfg.initial
    kind = init.get("type", "gaussian")
    if kind == "stationary":
        density = langevin.stationary_density(model)
    elif kind == "uniform":
        density = GridDensity.from_values(grid, np.ones(grid.shape), model.boundary)
    else:
        mean = as_vector(init["mean"]) if isinstance(init["mean"], list) else np.full(grid.ndim, as_number(init["mean"]))
        var = as_vector(init["var"]) if isinstance(init["var"], list) else np.full(grid.ndim, as_number(init["var"]))
        if mean.size != grid.ndim or var.size != grid.ndim:
            raise ValueError("gaussian mean/var must match the grid dimension")
        if np.any(var <= 0):
            raise ValueError("gaussian variance must be positive")

        def gauss(*xs: np.ndarray) -> np.ndarray:
            return np.exp(-sum((x - m) ** 2 / (2 * v) for x, m, v in zip(xs, mean, var)))

        density = GridDensity.from_function(grid, gauss, model.boundary)
    return model, density


def build_markov(cfg: ScenarioConfig) -> tuple[markov.MarkovModel, np.ndarray]:
    preset, params = _split_model("markov", cfg.model)
    if preset is not None:
        model = _preset_call("markov", preset, params)
    else:
        if set(params) - {"rates", "offdiagonal"} or len(params) != 1:
            raise ValueError("explicit Markov model takes exactly one of 'rates' or 'offdiagonal'")
        if "rates" in params:
            model = markov.MarkovModel(as_matrix(params["rates"], float))
        else:
            model = markov.MarkovModel.from_offdiagonal(as_matrix(params["offdiagonal"], float))
    init = cfg.initial
    kind = init.get("type", "probs")
    if kind == "stationary":
        probs = model.stationary().probs
    elif kind == "delta":
        idx = _as_int(init["index"])
        if not 0 <= idx < model.n:
            raise ValueError(f"delta index {idx} out of range for {model.n} states")
        probs = np.zeros(model.n)
        probs[idx] = 1.0
    else:
        probs = as_vector(init["probs"])
        if probs.size != model.n:
            raise ValueError(f"initial probs have {probs.size} entries, model has {model.n} states")
    markov.MarkovState.initial(probs)
    return model, probs


def _density_from_initial(init: dict[str, Any], dim: int) -> quantum.DensityOperator:
    kind = init.get("type")
    if kind == "ket":
        ket = as_vector(init["ket"], complex)
        if ket.size != dim:
            raise ValueError(f"ket has {ket.size} entries, expected {dim}")
        return quantum.DensityOperator.pure(ket)
    if kind == "matrix":
        return quantum.DensityOperator(as_matrix(init["matrix"]))
    return quantum.DensityOperator.maximally_mixed(dim)


def build_open_quantum(cfg: ScenarioConfig) -> quantum.CompositeSystem:
    preset, params = _split_model("open_quantum", cfg.model)
    init = cfg.initial
    if preset is not None:
        system = _preset_call("open_quantum", preset, params)
        if init.get("type", "preset") == "preset":
            return system
        n = system.dim_s * system.dim_e
        return quantum.CompositeSystem(system.dim_s, system.dim_e, system.h_s, system.h_e, system.h_se, _density_from_initial(init, n))
    missing = [k for k in EXPLICIT_MODEL_KEYS["open_quantum"] if k not in params]
    if missing:
        raise ValueError(f"explicit open_quantum model is missing {missing}")
    if init.get("type", "preset") == "preset":
        raise ValueError("explicit open_quantum model needs an initial 'ket' or 'matrix'")
    ds, de = _as_int(params["dim_s"]), _as_int(params["dim_e"])
    rho = _density_from_initial(init, ds * de)
    return quantum.CompositeSystem(ds, de, as_matrix(params["h_s"]), as_matrix(params["h_e"]), as_matrix(params["h_se"]), rho)


def build_non_hermitian(cfg: ScenarioConfig) -> tuple[non_hermitian.NonHermitianModel, quantum.DensityOperator]:
    preset, params = _split_model("non_hermitian", cfg.model)
    if preset is not None:
        model = _preset_call("non_hermitian", preset, params)
    elif "generator" in params:
        if len(params) != 1:
            raise ValueError("give either 'generator' or 'hamiltonian' plus 'dissipator'")
        model = non_hermitian.NonHermitianModel(as_matrix(params["generator"]))
    else:
        if set(params) != {"hamiltonian", "dissipator"}:
            raise ValueError("explicit non_hermitian model needs both 'hamiltonian' and 'dissipator'")
        h, g = as_matrix(params["hamiltonian"]), as_matrix(params["dissipator"])
        for name, m in (("hamiltonian", h), ("dissipator", g)):
            if np.abs(m - m.conj().T).max() > quantum.HERMITIAN_TOL * max(1.0, float(np.abs(m).max())):
                raise ValueError(f"{name} is not Hermitian")
        model = non_hermitian.NonHermitianModel.from_parts(h, g)
    return model, _density_from_initial(cfg.initial, model.dim)


BUILDERS: dict[str, Callable[[ScenarioConfig], Any]] = {
    "langevin": build_langevin,
    "markov": build_markov,
    "open_quantum": build_open_quantum,
    "non_hermitian": build_non_hermitian,
}


# -- parsing ---------------------------------------------------------------------

class _Locator:
    """Best-effort mapping from (scenario index, key) to a source line."""

    def __init__(self, text: str, fmt: str):
        self.lines = text.splitlines()
        self.fmt = fmt
        pattern = r"^\s*\[\[\s*scenario\s*\]\]" if fmt == "toml" else r"\"kind\"\s*:"
        self.starts = [i for i, line in enumerate(self.lines) if re.search(pattern, line)]

    def line(self, index: int | None, key: str | None) -> int | None:
        if index is None or index >= len(self.starts):
            return None
        start = self.starts[index]
        stop = self.starts[index + 1] if index + 1 < len(self.starts) else len(self.lines)
        if key:
            leaf = key.split(".")[-1]
            pat = rf"^\s*{re.escape(leaf)}\s*=" if self.fmt == "toml" else rf"\"{re.escape(leaf)}\"\s*:"
            lo = max(0, start - 1) if self.fmt == "json" else start
            if self.fmt == "json":
                # the scenario object may open a few lines before "kind"
                while lo > 0 and "{" not in self.lines[lo]:
                    lo -= 1
            for i in range(lo, stop):
                if re.search(pat, self.lines[i]):
                    return i + 1
            if self.fmt == "toml":
                # a sub-table such as [scenario.model]
                table = r"^\s*\[\s*scenario\." + re.escape(key.split(".")[0]) + r"\s*\]"
                for i in range(start, stop):
                    if re.search(table, self.lines[i]):
                        return i + 1
        return start + 1

    def where(self, index: int | None, key: str | None = None) -> str:
        parts = []
        if index is not None:
            parts.append(f"scenario {index}")
        if key:
            parts.append(f"'{key}'")
        ln = self.line(index, key)
        if ln is not None:
            parts.append(f"line {ln}: {self.lines[ln - 1].strip()}")
        return ", ".join(parts)


def _detect_format(text: str, fmt: str | None) -> str:
    if fmt:
        fmt = fmt.lower().lstrip(".")
        if fmt not in ("toml", "json"):
            raise ConfigError([f"unsupported config format {fmt!r}"])
        return fmt
    # a TOML table header is "[name]" or "[[name]]"; JSON opens with "{", "[{", "[]" or "[" alone on a line
    return "json" if re.match(r"\s*(\{|\[\s*(\{|\]|\[\s*[\[{\]]|\d|\"|$))", text) else "toml"


def _load(text: str, fmt: str) -> list[Any]:
    if fmt == "json":
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            line = text.splitlines()[exc.lineno - 1].strip() if text.splitlines() else ""
            raise ConfigError([f"JSON syntax error at line {exc.lineno}, column {exc.colno}: {exc.msg}: {line}"]) from None
    else:
        try:
            data = tomllib.loads(text)
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError([f"TOML syntax error: {exc}"]) from None
    if isinstance(data, list):
        return data
    if not isinstance(data, dict):
        raise ConfigError(["config must be a table with a 'scenario' list"])
    extra = sorted(set(data) - {"scenario"})
    if extra:
        raise ConfigError([f"unknown top-level key(s) {extra}; only 'scenario' is allowed"])
    scenarios = data.get("scenario", [])
    if not isinstance(scenarios, list):
        raise ConfigError(["'scenario' must be an array of tables ([[scenario]])"])
    return scenarios


def _scenario(raw: Any, index: int) -> ScenarioConfig:
    """Validate one raw table; raises ``_Issue`` lists through ``ConfigError``."""
    issues: list[tuple[str | None, str]] = []
    if not isinstance(raw, dict):
        raise ConfigError([f"scenario {index}: must be a table"])

    unknown = sorted(set(raw) - SCENARIO_KEYS)
    for key in unknown:
        issues.append((key, f"unknown field {key!r}"))
    kind = raw.get("kind")
    if kind is None:
        issues.append(("kind", "missing required field 'kind'"))
    elif kind not in KINDS:
        issues.append(("kind", f"unknown kind {kind!r}; choose from {list(KINDS)}"))
        kind = None
    if kind is not None:
        for key, kinds in KIND_ONLY_KEYS.items():
            if key in raw and kind not in kinds:
                issues.append((key, f"field {key!r} does not apply to kind {kind!r}"))
    for key in ("tau", "dt"):
        if key not in raw:
            issues.append((key, f"missing required field {key!r}"))
    if kind == "langevin" and "grid" not in raw:
        issues.append(("grid", "missing required field 'grid'"))
    if "model" not in raw:
        issues.append(("model", "missing required field 'model'"))

    def number(key: str, default: Any = None, positive: bool = False) -> Any:
        if key not in raw:
            return default
        try:
            v = as_number(raw[key])
        except ValueError as exc:
            issues.append((key, str(exc)))
            return default
        if positive and not v > 0:
            issues.append((key, f"{key} must be > 0, got {v!r}"))
        return v

    tau = number("tau")
    dt: Any = None
    if raw.get("dt") == "max_stable" and kind == "langevin":
        dt = "max_stable"
    else:
        dt = number("dt", positive=True)
    t0 = number("t0")
    if tau is not None and not tau > 0:
        issues.append(("tau", f"tau must be > 0, got {tau!r}"))
    if t0 is not None:
        if t0 < 0:
            issues.append(("t0", f"t0 must be >= 0, got {t0!r}"))
        elif tau is not None and not tau > t0:
            issues.append(("t0", f"need tau > t0, got tau={tau!r}, t0={t0!r}"))
    elif kind in ("langevin", "markov") and isinstance(dt, float) and tau is not None and tau > 0 and not tau > 10 * dt:
        issues.append(("dt", f"the default t0 = 10*dt = {10 * dt!r} must stay below tau; set t0 explicitly"))
    bound_scale = number("bound_scale", 1.0, positive=True)
    diffusion = number("diffusion", 1.0, positive=True)
    seed = None
    if "seed" in raw:
        try:
            seed = _as_int(raw["seed"])
            if seed < 0:
                raise ValueError("seed must be non-negative")
        except ValueError as exc:
            issues.append(("seed", str(exc)))

    tol = dict(TOLERANCE_DEFAULTS)
    tol_raw = raw.get("tolerances", {})
    if not isinstance(tol_raw, dict):
        issues.append(("tolerances", "tolerances must be a table"))
        tol_raw = {}
    for key, val in tol_raw.items():
        if key not in tol:
            issues.append((f"tolerances.{key}", f"unknown tolerance {key!r}; known: {sorted(tol)}"))
            continue
        try:
            tol[key] = float(as_number(val))
            if not tol[key] > 0:
                issues.append((f"tolerances.{key}", f"tolerance {key} must be > 0"))
        except ValueError as exc:
            issues.append((f"tolerances.{key}", str(exc)))

    for key, allowed in (("grid", GRID_KEYS), ("mc", MC_KEYS)):
        sub = raw.get(key)
        if sub is None:
            continue
        if not isinstance(sub, dict):
            issues.append((key, f"{key} must be a table"))
            continue
        for k in sorted(set(sub) - allowed):
            issues.append((f"{key}.{k}", f"unknown field {k!r} in {key}; known: {sorted(allowed)}"))
    mc = raw.get("mc")
    if isinstance(mc, dict):
        for k in ("trajectories", "t", "dt"):
            if k not in mc:
                issues.append((f"mc.{k}", f"mc needs {k!r}"))

    boundary = raw.get("boundary", "reflecting")
    if boundary not in {b.value for b in Boundary}:
        issues.append(("boundary", f"unknown boundary {boundary!r}"))

    model = raw.get("model", {})
    if not isinstance(model, dict):
        issues.append(("model", "model must be a table"))
        model = {}
    initial = raw.get("initial", {})
    if not isinstance(initial, dict):
        issues.append(("initial", "initial must be a table"))
        initial = {}
    if kind is not None and initial:
        types = INITIAL_TYPES[kind]
        default_type = next(iter(types))
        itype = initial.get("type", default_type)
        if itype not in types:
            issues.append(("initial.type", f"unknown initial type {itype!r} for {kind}; choose from {sorted(types)}"))
        else:
            extra = sorted(set(initial) - types[itype] - {"type"})
            missing = sorted(types[itype] - set(initial))
            for k in extra:
                issues.append((f"initial.{k}", f"initial type {itype!r} takes no field {k!r}"))
            for k in missing:
                issues.append((f"initial.{k}", f"initial type {itype!r} needs {k!r}"))
    if kind == "langevin" and not initial:
        issues.append(("initial", "langevin scenarios need an 'initial' table"))
    if kind == "markov" and not initial:
        issues.append(("initial", "markov scenarios need an 'initial' table"))

    output_dir = raw.get("output_dir")
    if output_dir is not None and not isinstance(output_dir, str):
        issues.append(("output_dir", "output_dir must be a string"))
    sid = raw.get("id", f"{kind or 'scenario'}_{index}")
    if not isinstance(sid, str) or not re.fullmatch(r"[A-Za-z0-9_.\-\[\]=@+]+", sid):
        issues.append(("id", f"id must be a non-empty string of letters, digits and _.-[]=@+, got {sid!r}"))

    if issues:
        raise _ScenarioIssues(index, issues)

    cfg = ScenarioConfig(
        id=sid,
        kind=kind,
        tau=float(tau),
        dt=dt if dt == "max_stable" else float(dt),
        model=model,
        initial=initial,
        t0=None if t0 is None else float(t0),
        tolerances=Tolerances(**tol),
        bound_scale=float(bound_scale),
        seed=seed,
        output_dir=output_dir,
        grid=raw.get("grid"),
        diffusion=float(diffusion),
        boundary=boundary,
        mc=mc,
        raw=copy.deepcopy(raw),
    )
    try:
        built = BUILDERS[kind](cfg)
        if kind == "langevin" and cfg.mc is not None:
            mc_t = as_number(cfg.mc["t"])
            if not 0 < mc_t <= cfg.tau:
                raise ValueError("mc.t must lie in (0, tau]")
            if _as_int(cfg.mc["trajectories"]) < langevin.MIN_TRAJECTORIES:
                raise ValueError(f"mc.trajectories must be at least {langevin.MIN_TRAJECTORIES}")
            if not as_number(cfg.mc["dt"]) > 0:
                raise ValueError("mc.dt must be > 0")
        del built
    except (ValueError, KeyError, TypeError) as exc:
        msg = exc.args[0] if isinstance(exc, KeyError) else str(exc)
        raise _ScenarioIssues(index, [("model", f"invalid model or initial condition: {msg}")]) from None
    return cfg


class _ScenarioIssues(Exception):
    def __init__(self, index: int, issues: list[tuple[str | None, str]]):
        self.index = index
        self.issues = issues


def parse_config(text: str, fmt: str | None = None) -> list[ScenarioConfig]:
    """Parse and validate every scenario, or raise :class:`ConfigError` listing all problems."""
    fmt = _detect_format(text, fmt)
    scenarios = _load(text, fmt)
    locator = _Locator(text, fmt)
    configs: list[ScenarioConfig] = []
    problems: list[str] = []
    for i, raw in enumerate(scenarios):
        try:
            configs.append(_scenario(raw, i))
        except _ScenarioIssues as exc:
            problems.extend(f"{locator.where(exc.index, key)}: {msg}" for key, msg in exc.issues)
        except ConfigError as exc:
            problems.extend(exc.issues)
    ids = [c.id for c in configs]
    for sid in sorted({s for s in ids if ids.count(s) > 1}):
        problems.append(f"duplicate scenario id {sid!r}")
    if problems:
        raise ConfigError(problems)
    return configs


def load_config(path: str | Path) -> list[ScenarioConfig]:
    path = Path(path)
    fmt = {".toml": "toml", ".json": "json"}.get(path.suffix.lower())
    try:
        text = path.read_text(encoding="utf-8")
    except (OSError, UnicodeDecodeError) as exc:
        raise ConfigError([f"cannot read {path}: {exc}"]) from None
    return parse_config(text, fmt)


def override(raw: dict[str, Any], path: str, value: Any) -> dict[str, Any]:
    """Copy of ``raw`` with the dotted ``path`` set to ``value``.

    Every table on the way must already exist; the leaf itself may be new, in
    which case strict validation decides whether it is a real field.
    """
    out = copy.deepcopy(raw)
    keys = path.split(".")
    node = out
    for k in keys[:-1]:
        if not isinstance(node.get(k), dict):
            raise KeyError(path)
        node = node[k]
    node[keys[-1]] = value
    return out
