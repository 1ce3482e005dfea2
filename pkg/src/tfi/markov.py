"""Continuous-time Markov jump processes on a finite state space.

Rates follow the column convention ``W[i, j]`` = rate of the jump ``j -> i``,
with ``W[i, i] = -sum_{j != i} W[j, i]`` so that ``dp/dt = W @ p``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import NamedTuple, Sequence

import numpy as np

from .info_geometry import (
    EPS_FLOOR,
    BoundSeries,
    DiscreteDistribution,
    VerificationReport,
    bhattacharyya_arccos,
    check_inequality,
    check_pointwise,
    check_speed_limit,
    temporal_fisher_discrete,
    uniform_steps,
)

STEP_GUARD = 0.1

# 4-point Gauss-Legendre rule on [0, 1]
_GL_X, _GL_W = np.polynomial.legendre.leggauss(4)
_GL_X = 0.5 * (_GL_X + 1.0)
_GL_W = 0.5 * _GL_W
# geometric grading of a step whose start has an empty state fed by a jump
_GRADED_LEVELS = 40


class StepSizeError(ValueError):
    pass


@dataclass(frozen=True)
class MarkovModel:
    """Time-independent generator of a Markov jump process."""

    rates: np.ndarray

    def __post_init__(self) -> None:
        w = np.array(self.rates, dtype=float)
        if w.ndim != 2 or w.shape[0] != w.shape[1]:
            raise ValueError("rate matrix must be square")
        off = w - np.diag(np.diag(w))
        if np.any(off < 0.0):
            raise ValueError("off-diagonal rates must be non-negative")
        scale = max(1.0, float(np.abs(w).max()))
        if np.any(np.abs(w.sum(axis=0)) > 1e-12 * scale):
            raise ValueError("columns of the rate matrix must sum to zero")
        if np.any((off > 0.0) != (off.T > 0.0)):
            raise ValueError("every jump needs its reverse jump (W_ij > 0 iff W_ji > 0)")
        w.setflags(write=False)
        object.__setattr__(self, "rates", w)

    @classmethod
    def from_offdiagonal(cls, off: Sequence[Sequence[float]]) -> "MarkovModel":
        w = np.array(off, dtype=float)
        np.fill_diagonal(w, 0.0)
        np.fill_diagonal(w, -w.sum(axis=0))
        return cls(w)

    @classmethod
    def two_state(cls, k12: float, k21: float) -> "MarkovModel":
        """``k12`` is the rate 2 -> 1 and ``k21`` the rate 1 -> 2."""
        return cls.from_offdiagonal([[0.0, k12], [k21, 0.0]])

    @classmethod
    def ring(cls, n: int, forward: float, backward: float) -> "MarkovModel":
        if n < 3:
            raise ValueError("a ring needs at least 3 states")
        off = np.zeros((n, n))
        for i in range(n):
            off[(i + 1) % n, i] = forward
            off[(i - 1) % n, i] = backward
        return cls.from_offdiagonal(off)

    @property
    def n(self) -> int:
        return self.rates.shape[0]

    def stationary(self) -> DiscreteDistribution:
        vals, vecs = np.linalg.eig(self.rates)
        v = np.real(vecs[:, np.argmin(np.abs(vals))])
        return DiscreteDistribution.from_unnormalized(v / v.sum())


@dataclass(frozen=True)
class MarkovState:
    probs: DiscreteDistribution
    time: float = 0.0
    accumulated_entropy: float = 0.0
    accumulated_pseudo_entropy: float = 0.0
    accumulated_activity: float = 0.0

    @classmethod
    def initial(cls, probs: Sequence[float] | DiscreteDistribution) -> "MarkovState":
        if not isinstance(probs, DiscreteDistribution):
            probs = DiscreteDistribution(probs)
        return cls(probs)


def _probs(state: MarkovState | DiscreteDistribution | np.ndarray) -> np.ndarray:
    if isinstance(state, MarkovState):
        return state.probs.probs
    if isinstance(state, DiscreteDistribution):
        return state.probs
    return np.asarray(state, dtype=float)


def _pair_fluxes(w: np.ndarray, p: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Fluxes ``a = W_ij p_j`` and ``b = W_ji p_i`` over pairs ``i > j`` with an edge.

    Works on a single distribution ``(n,)`` or a stack ``(m, n)``; the third
    array flags pairs where an endpoint sits below the probability floor.
    """
    i, j = np.tril_indices(w.shape[0], k=-1)
    edge = w[i, j] > 0.0
    i, j = i[edge], j[edge]
    a = w[i, j] * p[..., j]
    b = w[j, i] * p[..., i]
    masked = (p[..., i] < EPS_FLOOR) | (p[..., j] < EPS_FLOOR)
    return a, b, masked


def _ep_terms(a: np.ndarray, b: np.ndarray, masked: np.ndarray) -> np.ndarray:
    ok = ~masked & (a > 0.0) & (b > 0.0)
    out = np.zeros(np.broadcast(a, b).shape)
    out[ok] = (a[ok] - b[ok]) * np.log(a[ok] / b[ok])
    return out


def _ps_terms(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    s = a + b
    return np.divide(2.0 * (a - b) ** 2, s, out=np.zeros_like(s), where=s > 0.0)


def entropy_production_rate(state, model: MarkovModel) -> float:
    """``sum_{i != j} W_ij p_j ln(W_ij p_j / (W_ji p_i))``.

    Pairs with an endpoint below the probability floor are dropped.
    """
    a, b, masked = _pair_fluxes(model.rates, _probs(state))
    return float(_ep_terms(a, b, masked).sum())


def pseudo_entropy_production_rate(state, model: MarkovModel) -> float:
    """``2 sum_{i > j} (a - b)^2 / (a + b)`` with ``a = W_ij p_j``, ``b = W_ji p_i``."""
    a, b, _ = _pair_fluxes(model.rates, _probs(state))
    return float(_ps_terms(a, b).sum())


def dynamical_activity_rate(state, model: MarkovModel) -> float:
    """Mean jump rate ``sum_{i != j} W_ij p_j``."""
    w = model.rates
    off = w - np.diag(np.diag(w))
    return float(off.sum(axis=0) @ _probs(state))


def _rates_at(p: np.ndarray, model: MarkovModel) -> np.ndarray:
    """EP, pseudo-EP and activity rates for a stack of distributions ``(m, n)``."""
    a, b, masked = _pair_fluxes(model.rates, p)
    w = model.rates
    activity = p @ (w - np.diag(np.diag(w))).sum(axis=0)
    return np.stack([_ep_terms(a, b, masked).sum(axis=-1), _ps_terms(a, b).sum(axis=-1), activity], axis=-1)


def _is_singular_start(p: np.ndarray, model: MarkovModel) -> bool:
    # an empty state receiving probability makes the EP integrand log-singular
    a, b, masked = _pair_fluxes(model.rates, p)
    return bool(np.any(masked & ((a > 0.0) | (b > 0.0))))


def _step_nodes(singular: bool) -> tuple[np.ndarray, np.ndarray]:
    if not singular:
        return _GL_X, _GL_W
    lo = np.concatenate(([0.0], 0.5 ** np.arange(_GRADED_LEVELS, 0, -1)))
    hi = np.concatenate((lo[1:], [1.0]))
    width = (hi - lo)[:, None]
    return (lo[:, None] + width * _GL_X).ravel(), (width * _GL_W).ravel()


def _accumulate(p0, f0, p1, f1, h, model, singular) -> np.ndarray:
    """Integrals of the three rates over one step on the cubic Hermite interpolant."""
    x, wts = _step_nodes(singular)
    x = x[:, None]
    x2, x3 = x * x, x * x * x
    p = (2 * x3 - 3 * x2 + 1) * p0 + (x3 - 2 * x2 + x) * h * f0 + (-2 * x3 + 3 * x2) * p1 + (x3 - x2) * h * f1
    p = np.clip(p, 0.0, None)
    return h * (wts @ _rates_at(p, model))


def _rk4(p: np.ndarray, w: np.ndarray, dt: float) -> np.ndarray:
    k1 = w @ p
    k2 = w @ (p + 0.5 * dt * k1)
    k3 = w @ (p + 0.5 * dt * k2)
    k4 = w @ (p + dt * k3)
    return p + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)


def master_step(state: MarkovState, model: MarkovModel, dt: float) -> MarkovState:
    """Advance the master equation by one RK4 step and integrate the three costs."""
    w = model.rates
    if dt * float(np.abs(np.diag(w)).max(initial=0.0)) > STEP_GUARD:
        raise StepSizeError(f"dt={dt!r} too large: dt * max|W_ii| must stay below {STEP_GUARD}")
    p0 = state.probs.probs
    p1 = _rk4(p0, w, dt)
    new_probs = DiscreteDistribution.from_unnormalized(p1)
    inc = _accumulate(p0, w @ p0, new_probs.probs, w @ new_probs.probs, dt, model, _is_singular_start(p0, model))
    return MarkovState(
        new_probs,
        state.time + dt,
        state.accumulated_entropy + float(inc[0]),
        state.accumulated_pseudo_entropy + float(inc[1]),
        state.accumulated_activity + float(inc[2]),
    )


def _require_positive_time(state: MarkovState) -> float:
    if not state.time > 0.0:
        raise ValueError("the bound is undefined at t = 0")
    return state.time


def lambda_markov(state: MarkovState) -> float:
    t = _require_positive_time(state)
    return state.accumulated_entropy / (2.0 * t * t)


def lambda_markov_activity(state: MarkovState) -> float:
    t = _require_positive_time(state)
    return state.accumulated_activity / (t * t)


def fisher(state: MarkovState, model: MarkovModel) -> float:
    return temporal_fisher_discrete(state.probs, model.rates @ state.probs.probs)


class MarkovRun(NamedTuple):
    ep_series: BoundSeries
    activity_series: BoundSeries
    report: VerificationReport
    table: dict[str, list[float]]
    final: MarkovState


MARKOV_COLUMNS = (
    "t",
    "sigma",
    "sigma_ps",
    "activity",
    "fisher",
    "lambda_ma",
    "lambda_ma_activity",
    "fisher_length",
    "bound_length_ep",
    "bound_length_activity",
)


def run_markov_experiment(
    model: MarkovModel,
    initial: Sequence[float] | DiscreteDistribution,
    tau: float,
    dt: float,
    t0: float | None = None,
    *,
    pointwise_rel: float = 1e-6,
    pointwise_abs: float = 1e-9,
    integrated_tol: float = 1e-4,
    bound_scale: float = 1.0,
    name: str = "markov",
) -> MarkovRun:
    """Evolve the master equation over ``[0, tau]`` and check both speed limits.

    Bounds are recorded from ``t0`` (default ``10 * dt``) because both
    ``Sigma/2t^2`` and ``A/t^2`` are 0/0 at the start. ``bound_scale`` multiplies
    the recorded bounds and exists only to exercise the failure path.
    """
    n_steps, h = uniform_steps(tau, dt)
    if t0 is None:
        t0 = 10.0 * h
    if not tau > t0 > 0.0:
        raise ValueError("need tau > t0 > 0")
    state = MarkovState.initial(initial)
    p_start = state.probs
    ep, act = BoundSeries(), BoundSeries()
    table: dict[str, list[float]] = {c: [] for c in MARKOV_COLUMNS}
    p_window_start = None

    for k in range(1, n_steps + 1):
        state = replace(master_step(state, model, h), time=k * h)
        if state.time < t0 * (1.0 - 1e-12):
            continue
        if p_window_start is None:
            p_window_start = state.probs
        f = fisher(state, model)
        lam = bound_scale * lambda_markov(state)
        lam_a = bound_scale * lambda_markov_activity(state)
        ep.append(state.time, f, lam)
        act.append(state.time, f, lam_a)
        row = (
            state.time,
            state.accumulated_entropy,
            state.accumulated_pseudo_entropy,
            state.accumulated_activity,
            f,
            lam,
            lam_a,
            ep.fisher_length,
            ep.bound_length,
            act.bound_length,
        )
        for col, val in zip(MARKOV_COLUMNS, row):
            table[col].append(val)

    distance = bhattacharyya_arccos(p_start, state.probs)
    report = VerificationReport(name)
    report.add(check_pointwise("fisher_le_lambda_ma", ep.times, ep.bound, ep.fisher, pointwise_rel, pointwise_abs))
    report.add(check_pointwise("fisher_le_lambda_ma_activity", act.times, act.bound, act.fisher, pointwise_rel, pointwise_abs))
    report.add(check_speed_limit(ep.bound_length, distance, integrated_tol, "speed_limit_entropy"))
    report.add(check_speed_limit(act.bound_length, distance, integrated_tol, "speed_limit_activity"))
    window_distance = bhattacharyya_arccos(p_window_start, state.probs) if p_window_start is not None else 0.0
    report.add(check_speed_limit(ep.fisher_length, window_distance, integrated_tol, "fisher_length_ge_distance"))
    report.add(check_inequality("entropy_ge_pseudo_entropy", state.accumulated_entropy, state.accumulated_pseudo_entropy, 1e-12))
    report.add(check_inequality("activity_ge_half_pseudo_entropy", state.accumulated_activity, 0.5 * state.accumulated_pseudo_entropy, 1e-12))

    sigma_t0 = table["sigma"][0] if table["sigma"] else 0.0
    act_t0 = table["activity"][0] if table["activity"] else 0.0
    report.metadata.update(
        {
            "kind": "markov",
            "dt": h,
            "steps": n_steps,
            "t0": t0,
            "distance": distance,
            "window_distance": window_distance,
            "omitted_head_entropy": math.sqrt(max(sigma_t0, 0.0) / 2.0),
            "omitted_head_activity": math.sqrt(max(act_t0, 0.0)),
            "normalization_drift": abs(math.fsum(state.probs.probs) - 1.0),
        }
    )
    return MarkovRun(ep, act, report, table, state)
