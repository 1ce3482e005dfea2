"""Probability containers, temporal Fisher information and statistical distances.

Everything here is shared by the four dynamics modules: the containers hold a
distribution at one instant, the estimators turn a distribution and its time
derivative into the temporal Fisher information, and the report types record
how a measured length compares with a distance between two end states.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from functools import cached_property
from typing import Any, Callable, Sequence

import numpy as np

EPS_FLOOR = 1e-12
SUM_TOL = 1e-12
GRID_NORM_TOL = 1e-8
DERIV_SUM_TOL = 1e-10


class Boundary(str, Enum):
    REFLECTING = "reflecting"
    PERIODIC = "periodic"


@dataclass(frozen=True)
class DiscreteDistribution:
    """Normalized probability vector."""

    probs: np.ndarray

    def __post_init__(self) -> None:
        probs = np.asarray(self.probs, dtype=float).reshape(-1)
        if probs.size == 0:
            raise ValueError("distribution must have at least one state")
        if np.any(~np.isfinite(probs)) or np.any(probs < 0.0):
            raise ValueError("probabilities must be finite and non-negative")
        if abs(math.fsum(probs) - 1.0) > SUM_TOL:
            raise ValueError(f"probabilities sum to {math.fsum(probs)!r}, not 1")
        probs.setflags(write=False)
        object.__setattr__(self, "probs", probs)

    @classmethod
    def from_unnormalized(cls, weights: Sequence[float], clip: float = 1e-10) -> "DiscreteDistribution":
        """Normalize ``weights``; entries in ``[-clip, 0)`` are treated as round-off."""
        w = np.asarray(weights, dtype=float).reshape(-1)
        if np.any(w < -clip):
            raise ValueError(f"negative weight {w.min()!r} beyond round-off")
        w = np.clip(w, 0.0, None)
        total = math.fsum(w)
        if total <= 0.0:
            raise ValueError("weights sum to zero")
        return cls(w / total)

    @property
    def dim(self) -> int:
        return self.probs.size


@dataclass(frozen=True)
class UniformGrid:
    """Cell-centred uniform grid; ``cells[k]`` cells span ``[lower[k], upper[k]]``."""

    lower: tuple[float, ...]
    upper: tuple[float, ...]
    cells: tuple[int, ...]

    def __post_init__(self) -> None:
        lower = tuple(float(v) for v in np.atleast_1d(self.lower))
        upper = tuple(float(v) for v in np.atleast_1d(self.upper))
        cells = tuple(int(v) for v in np.atleast_1d(self.cells))
        if not (len(lower) == len(upper) == len(cells)):
            raise ValueError("lower, upper and cells must have the same length")
        if any(hi <= lo for lo, hi in zip(lower, upper)):
            raise ValueError("each axis needs upper > lower")
        if any(n < 3 for n in cells):
            raise ValueError("each axis needs at least 3 cells")
        object.__setattr__(self, "lower", lower)
        object.__setattr__(self, "upper", upper)
        object.__setattr__(self, "cells", cells)

    @property
    def ndim(self) -> int:
        return len(self.cells)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.cells

    @cached_property
    def spacing(self) -> tuple[float, ...]:
        return tuple((hi - lo) / n for lo, hi, n in zip(self.lower, self.upper, self.cells))

    @property
    def cell_volume(self) -> float:
        return float(np.prod(self.spacing))

    @cached_property
    def centers(self) -> tuple[np.ndarray, ...]:
        return tuple(
            lo + (np.arange(n) + 0.5) * h for lo, n, h in zip(self.lower, self.cells, self.spacing)
        )

    @cached_property
    def edges(self) -> tuple[np.ndarray, ...]:
        return tuple(lo + np.arange(n + 1) * h for lo, n, h in zip(self.lower, self.cells, self.spacing))

    def mesh(self) -> list[np.ndarray]:
        return np.meshgrid(*self.centers, indexing="ij")

    def points(self) -> np.ndarray:
        """Cell centres as an ``(n_cells, ndim)`` array in C order."""
        return np.stack([m.reshape(-1) for m in self.mesh()], axis=1)


@dataclass(frozen=True)
class GridDensity:
    """Probability density sampled at the cells of a :class:`UniformGrid`."""

    values: np.ndarray
    grid: UniformGrid
    boundary: Boundary = Boundary.REFLECTING

    def __post_init__(self) -> None:
        values = np.array(self.values, dtype=float)
        if values.shape != self.grid.shape:
            raise ValueError(f"values shape {values.shape} does not match grid {self.grid.shape}")
        if np.any(~np.isfinite(values)) or np.any(values < 0.0):
            raise ValueError("density values must be finite and non-negative")
        mass = float(values.sum() * self.grid.cell_volume)
        if abs(mass - 1.0) > GRID_NORM_TOL:
            raise ValueError(f"density integrates to {mass!r}, not 1")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "boundary", Boundary(self.boundary))

    @classmethod
    def from_function(
        cls,
        grid: UniformGrid,
        func: Callable[..., np.ndarray],
        boundary: Boundary | str = Boundary.REFLECTING,
    ) -> "GridDensity":
        """Sample ``func(*mesh)`` at cell centres and renormalize on the grid."""
        values = np.asarray(func(*grid.mesh()), dtype=float)
        return cls.from_values(grid, values, boundary)

    @classmethod
    def from_values(
        cls, grid: UniformGrid, values: np.ndarray, boundary: Boundary | str = Boundary.REFLECTING
    ) -> "GridDensity":
        values = np.clip(np.asarray(values, dtype=float), 0.0, None)
        mass = values.sum() * grid.cell_volume
        if not mass > 0.0:
            raise ValueError("density has no mass on the grid")
        return cls(values / mass, grid, Boundary(boundary))

    @property
    def floor(self) -> float:
        return EPS_FLOOR / self.grid.cell_volume

    def mass(self) -> float:
        return float(self.values.sum() * self.grid.cell_volume)

    def moments(self) -> tuple[np.ndarray, np.ndarray]:
        """Mean vector and covariance matrix."""
        pts = self.grid.points()
        w = self.values.reshape(-1) * self.grid.cell_volume
        mean = w @ pts
        centred = pts - mean
        cov = (centred * w[:, None]).T @ centred
        return mean, cov


def _same_grid(p: GridDensity, q: GridDensity) -> None:
    if p.grid != q.grid:
        raise ValueError("densities live on different grids")


def temporal_fisher_discrete(p: DiscreteDistribution, dp_dt: Sequence[float]) -> float:
    """Temporal Fisher information ``sum_i (dp_i/dt)**2 / p_i``.

    States with ``p_i < EPS_FLOOR`` are left out of the sum.
    """
    dp = np.asarray(dp_dt, dtype=float).reshape(-1)
    if dp.size != p.dim:
        raise ValueError(f"derivative has {dp.size} entries, distribution has {p.dim}")
    scale = max(1.0, float(np.abs(dp).max(initial=0.0)))
    if abs(math.fsum(dp)) > DERIV_SUM_TOL * scale:
        raise ValueError(f"derivative sums to {math.fsum(dp)!r}; the flow does not conserve probability")
    mask = p.probs >= EPS_FLOOR
    return float(np.sum(dp[mask] ** 2 / p.probs[mask]))


def temporal_fisher_grid(p: GridDensity, dp_dt: np.ndarray) -> float:
    """Riemann-sum temporal Fisher information of a grid density."""
    dp = np.asarray(dp_dt, dtype=float)
    if dp.shape != p.grid.shape:
        raise ValueError(f"derivative shape {dp.shape} does not match grid {p.grid.shape}")
    vol = p.grid.cell_volume
    if abs(dp.sum() * vol) > GRID_NORM_TOL:
        raise ValueError(f"derivative integrates to {dp.sum() * vol!r}, not 0")
    mask = p.values >= p.floor
    return float(np.sum(dp[mask] ** 2 / p.values[mask]) * vol)


def _arccos_from_chord(chord_sq: float) -> float:
    # arccos(1 - c^2/2) = 2 arcsin(c/2) for normalized p, q; stays accurate near 0
    return min(2.0 * math.asin(min(1.0, 0.5 * math.sqrt(max(chord_sq, 0.0)))), math.pi / 2)


def bhattacharyya_arccos(p: DiscreteDistribution | Sequence[float], q: DiscreteDistribution | Sequence[float]) -> float:
    """``arccos(sum_i sqrt(p_i q_i))``, in ``[0, pi/2]``.

    Evaluated through the chord ``|sqrt(p) - sqrt(q)|`` so that nearby
    distributions do not lose half their digits to the arccos.
    """
    pv = p.probs if isinstance(p, DiscreteDistribution) else np.asarray(p, dtype=float)
    qv = q.probs if isinstance(q, DiscreteDistribution) else np.asarray(q, dtype=float)
    if pv.shape != qv.shape:
        raise ValueError(f"dimension mismatch: {pv.shape} vs {qv.shape}")
    diff = np.sqrt(np.clip(pv, 0.0, None)) - np.sqrt(np.clip(qv, 0.0, None))
    return _arccos_from_chord(math.fsum(diff * diff))


def bhattacharyya_arccos_grid(p: GridDensity, q: GridDensity) -> float:
    _same_grid(p, q)
    diff = np.sqrt(p.values) - np.sqrt(q.values)
    return _arccos_from_chord(float(np.sum(diff * diff)) * p.grid.cell_volume)


def wasserstein_1d(p: GridDensity, q: GridDensity) -> float:
    """Squared 2-Wasserstein distance between two 1D grid densities.

    Each density is read as piecewise constant on its cells, so both quantile
    functions are piecewise linear and the quantile integral is evaluated exactly
    between the merged breakpoints of the two CDFs.
    """
    _same_grid(p, q)
    if p.grid.ndim != 1:
        raise ValueError("wasserstein_1d needs a one-dimensional grid")
    edges = p.grid.edges[0]
    dx = p.grid.spacing[0]

    def cdf(values: np.ndarray) -> np.ndarray:
        c = np.concatenate(([0.0], np.cumsum(values * dx)))
        return c / c[-1]

    cp, cq = cdf(p.values), cdf(q.values)
    u = np.unique(np.concatenate((cp, cq)))
    a, b = u[:-1], u[1:]
    h = b - a
    mid = 0.5 * (a + b)

    def quantile(c: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        # returns the quantile at the interval midpoint and its rise across the interval
        idx = np.clip(np.searchsorted(c, mid, side="right") - 1, 0, edges.size - 2)
        mass = c[idx + 1] - c[idx]
        frac = np.divide(mid - c[idx], mass, out=np.zeros_like(mass), where=mass > 0.0)
        rise = np.divide(h, mass, out=np.zeros_like(mass), where=mass > 0.0)
        return edges[idx] + frac * dx, rise * dx

    xp, rp = quantile(cp)
    xq, rq = quantile(cq)
    gap, drise = xp - xq, rp - rq
    return float(np.sum(h * (gap**2 + drise**2 / 12.0)))


def uniform_steps(tau: float, dt: float) -> tuple[int, float]:
    """Step count and the step actually used so that a run ends exactly at ``tau``."""
    if not (tau > 0.0 and dt > 0.0):
        raise ValueError("tau and dt must be positive")
    n = max(1, math.ceil(tau / dt - 1e-9))
    return n, tau / n


def tau_min(distance: float, avg_sqrt_bound: float) -> float:
    """Minimal transformation time ``2 * distance / mean(sqrt(bound))``."""
    if not avg_sqrt_bound > 0.0:
        raise ValueError("time-averaged sqrt bound must be positive")
    return 2.0 * distance / avg_sqrt_bound


@dataclass
class BoundSeries:
    """Time series of Fisher information and its upper bound with running lengths.

    ``fisher_length`` and ``bound_length`` are ``0.5 * integral(sqrt(.) dt)``
    accumulated by the trapezoidal rule from the first recorded time.
    """

    times: list[float] = field(default_factory=list)
    fisher: list[float] = field(default_factory=list)
    bound: list[float] = field(default_factory=list)
    fisher_lengths: list[float] = field(default_factory=list)
    bound_lengths: list[float] = field(default_factory=list)

    def append(self, t: float, fisher: float, bound: float) -> "BoundSeries":
        if self.times and not t > self.times[-1]:
            raise ValueError(f"time {t!r} does not increase past {self.times[-1]!r}")
        if not (fisher >= 0.0 and bound >= 0.0):
            raise ValueError(f"fisher={fisher!r} and bound={bound!r} must be non-negative")
        if self.times:
            dt = t - self.times[-1]
            fl = self.fisher_lengths[-1] + 0.25 * dt * (math.sqrt(self.fisher[-1]) + math.sqrt(fisher))
            bl = self.bound_lengths[-1] + 0.25 * dt * (math.sqrt(self.bound[-1]) + math.sqrt(bound))
        else:
            fl = bl = 0.0
        self.times.append(float(t))
        self.fisher.append(float(fisher))
        self.bound.append(float(bound))
        self.fisher_lengths.append(fl)
        self.bound_lengths.append(bl)
        return self

    def __len__(self) -> int:
        return len(self.times)

    @property
    def fisher_length(self) -> float:
        return self.fisher_lengths[-1] if self.times else 0.0

    @property
    def bound_length(self) -> float:
        return self.bound_lengths[-1] if self.times else 0.0

    def avg_sqrt_bound(self) -> float:
        if len(self.times) < 2:
            return 0.0
        return 2.0 * self.bound_length / (self.times[-1] - self.times[0])

    def scaled(self, factor: float) -> "BoundSeries":
        """Copy with every bound value multiplied by ``factor``."""
        out = BoundSeries()
        for t, f, b in zip(self.times, self.fisher, self.bound):
            out.append(t, f, b * factor)
        return out


def accumulate_lengths(series: BoundSeries, t_new: float, fisher_new: float, bound_new: float) -> BoundSeries:
    return series.append(t_new, fisher_new, bound_new)


@dataclass(frozen=True)
class CheckResult:
    """One inequality ``lhs >= rhs`` with ``slack = lhs - rhs``."""

    name: str
    lhs: float
    rhs: float
    slack: float
    tolerance: float
    passed: bool
    note: str = ""

    def to_dict(self) -> dict[str, Any]:
        return {
            "name": self.name,
            "lhs": self.lhs,
            "rhs": self.rhs,
            "slack": self.slack,
            "tolerance": self.tolerance,
            "passed": self.passed,
            "note": self.note,
        }


def check_inequality(name: str, lhs: float, rhs: float, tol: float, note: str = "") -> CheckResult:
    """Record ``lhs >= rhs - tol``; any NaN makes the check fail."""
    lhs, rhs = float(lhs), float(rhs)
    slack = lhs - rhs
    passed = bool(np.isfinite(slack) and slack >= -tol)
    return CheckResult(name, lhs, rhs, slack, float(tol), passed, note)


def check_speed_limit(bound_length: float, distance: float, tol: float = 1e-4, name: str = "speed_limit") -> CheckResult:
    return check_inequality(name, bound_length, distance, tol)


def check_pointwise(
    name: str,
    times: Sequence[float],
    upper: Sequence[float],
    lower: Sequence[float],
    rel_tol: float = 1e-6,
    abs_tol: float = 1e-9,
) -> CheckResult:
    """Check ``upper(t) >= lower(t)`` at every sample; the worst sample is reported."""
    up = np.asarray(upper, dtype=float)
    lo = np.asarray(lower, dtype=float)
    if up.size == 0:
        return CheckResult(name, 0.0, 0.0, 0.0, abs_tol, True, "no samples")
    tol = rel_tol * np.abs(up) + abs_tol
    margin = up - lo + tol
    if np.any(~np.isfinite(margin)):
        k = int(np.flatnonzero(~np.isfinite(margin))[0])
        return CheckResult(name, float(up[k]), float(lo[k]), math.nan, float(tol[k]), False, f"non-finite at t={times[k]!r}")
    k = int(np.argmin(margin))
    n_bad = int(np.count_nonzero(margin < 0.0))
    note = f"worst at t={times[k]!r}; {n_bad} of {up.size} samples violate"
    slack = float(up[k] - lo[k])
    return CheckResult(name, float(up[k]), float(lo[k]), slack, float(tol[k]), bool(slack >= -tol[k]), note)


@dataclass
class VerificationReport:
    scenario: str = ""
    checks: list[CheckResult] = field(default_factory=list)
    metadata: dict[str, Any] = field(default_factory=dict)

    def add(self, check: CheckResult) -> CheckResult:
        self.checks.append(check)
        return check

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def __getitem__(self, name: str) -> CheckResult:
        for c in self.checks:
            if c.name == name:
                return c
        raise KeyError(name)

    def to_dict(self) -> dict[str, Any]:
        return {
            "scenario": self.scenario,
            "passed": self.passed,
            "checks": [c.to_dict() for c in self.checks],
            "metadata": self.metadata,
        }
