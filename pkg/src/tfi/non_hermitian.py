"""Trace-normalized evolution under a non-Hermitian generator.

A generator ``K`` splits as ``K = H - i*gamma`` with both parts Hermitian. The
unnormalized state obeys ``i drho/dt = K rho - rho K^dagger``; the normalized
state ``rho / Tr rho`` follows the nonlinear flow

    d rho/dt = -i (K rho - rho K^dagger) + 2 <gamma> rho,

which is what gets integrated here. The raw trace is carried along through
``d ln Tr rho / dt = -2 <gamma>``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, NamedTuple

import numpy as np

from .info_geometry import (
    BoundSeries,
    VerificationReport,
    check_pointwise,
    check_speed_limit,
    uniform_steps,
)
from .quantum import (
    HERMITIAN_TOL,
    SIGMA_X,
    SIGMA_Z,
    DensityOperator,
    SpectralFisher,
    bures_angle,
    check_purity_speed_limit,
    residual_bures,
    spectral_fisher,
)

STEP_GUARD = 0.05
TRACE_FLOOR = 1e-12


class StepSizeError(ValueError):
    pass


class TraceCollapseError(RuntimeError):
    pass


def decompose(generator: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Hermitian part ``(K + K^dagger)/2`` and dissipator ``i (K - K^dagger)/2``."""
    k = np.asarray(generator, dtype=complex)
    if k.ndim != 2 or k.shape[0] != k.shape[1]:
        raise ValueError("generator must be a square matrix")
    return 0.5 * (k + k.conj().T), 0.5j * (k - k.conj().T)


@dataclass(frozen=True, eq=False)
class NonHermitianModel:
    generator: np.ndarray

    def __post_init__(self) -> None:
        k = np.array(self.generator, dtype=complex)
        h, gamma = decompose(k)
        scale = max(1.0, float(np.abs(k).max(initial=0.0)))
        if np.abs(h - 1j * gamma - k).max() > HERMITIAN_TOL * scale:
            raise ValueError("decomposition does not reconstruct the generator")
        k.setflags(write=False)
        object.__setattr__(self, "generator", k)
        object.__setattr__(self, "hamiltonian", h)
        object.__setattr__(self, "dissipator", gamma)
        object.__setattr__(self, "norm", float(np.linalg.norm(k, 2)))

    @classmethod
    def from_parts(cls, hamiltonian: np.ndarray, dissipator: np.ndarray) -> "NonHermitianModel":
        return cls(np.asarray(hamiltonian, dtype=complex) - 1j * np.asarray(dissipator, dtype=complex))

    @property
    def dim(self) -> int:
        return self.generator.shape[0]


@dataclass(frozen=True, eq=False)
class NormalizedState:
    rho_hat: DensityOperator
    raw_trace: float = 1.0
    time: float = 0.0
    trace_drift: float = 0.0

    def __post_init__(self) -> None:
        if not self.raw_trace > 0.0:
            raise TraceCollapseError("raw trace must stay positive")


def _mean_gamma(rho: np.ndarray, gamma: np.ndarray) -> float:
    return float(np.trace(gamma @ rho).real)


def normalized_rhs(rho: np.ndarray, model: NonHermitianModel) -> np.ndarray:
    k = model.generator
    return -1j * (k @ rho - rho @ k.conj().T) + 2.0 * _mean_gamma(rho, model.dissipator) * rho


def normalized_second_derivative(rho: np.ndarray, model: NonHermitianModel) -> np.ndarray:
    """Derivative of the flow along itself."""
    k, gamma = model.generator, model.dissipator
    x = normalized_rhs(rho, model)
    return -1j * (k @ x - x @ k.conj().T) + 2.0 * _mean_gamma(x, gamma) * rho + 2.0 * _mean_gamma(rho, gamma) * x


def evolve_normalized(state: NormalizedState, model: NonHermitianModel, dt: float) -> NormalizedState:
    """One RK4 step; the mean dissipation is re-evaluated at every stage."""
    if abs(dt) * model.norm > STEP_GUARD * (1.0 + 1e-12):
        raise StepSizeError(f"dt * |K| = {abs(dt) * model.norm:.3g} exceeds {STEP_GUARD}")
    gamma = model.dissipator
    r0 = state.rho_hat.matrix
    k1 = normalized_rhs(r0, model)
    r1 = r0 + 0.5 * dt * k1
    k2 = normalized_rhs(r1, model)
    r2 = r0 + 0.5 * dt * k2
    k3 = normalized_rhs(r2, model)
    r3 = r0 + dt * k3
    k4 = normalized_rhs(r3, model)
    new = r0 + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    g = [_mean_gamma(r, gamma) for r in (r0, r1, r2, r3)]
    dlog = -2.0 * (dt / 6.0) * (g[0] + 2.0 * g[1] + 2.0 * g[2] + g[3])

    new = 0.5 * (new + new.conj().T)
    trace = float(np.trace(new).real)
    raw = state.raw_trace * math.exp(dlog)
    if raw < TRACE_FLOOR:
        raise TraceCollapseError(f"raw trace {raw!r} fell below {TRACE_FLOOR}")
    return NormalizedState(
        DensityOperator.from_matrix(new / trace),
        raw,
        state.time + dt,
        max(state.trace_drift, abs(trace - 1.0)),
    )


def gamma_std(state: NormalizedState, model: NonHermitianModel) -> float:
    """Standard deviation of the dissipator in the normalized state."""
    rho, gamma = state.rho_hat.matrix, model.dissipator
    delta = gamma - _mean_gamma(rho, gamma) * np.eye(model.dim)
    return math.sqrt(max(float(np.trace(delta @ delta @ rho).real), 0.0))


def lambda_nh(state: NormalizedState, model: NonHermitianModel) -> float:
    return 4.0 * gamma_std(state, model) ** 2


def eigen_rates_nh(state: NormalizedState, model: NonHermitianModel) -> np.ndarray:
    """``-<p_i| {delta gamma, rho} |p_i>`` in the instantaneous eigenbasis (ascending)."""
    rho, gamma = state.rho_hat.matrix, model.dissipator
    delta = gamma - _mean_gamma(rho, gamma) * np.eye(model.dim)
    anti = delta @ rho + rho @ delta
    vecs = state.rho_hat.eigenvectors
    return -np.einsum("ki,kl,li->i", vecs.conj(), anti, vecs).real


def nh_fisher(state: NormalizedState, model: NonHermitianModel) -> SpectralFisher:
    rho = state.rho_hat.matrix
    return spectral_fisher(state.rho_hat, normalized_rhs(rho, model), normalized_second_derivative(rho, model))


# -- presets -------------------------------------------------------------------

def diag_decay(g: float) -> NonHermitianModel:
    """``K = -i diag(0, g)``: the second level decays, no coherent part."""
    return NonHermitianModel(-1j * np.diag([0.0, g]))


def pt_like(omega: float, g: float) -> NonHermitianModel:
    """``H = omega sigma_x`` with loss ``gamma = g (1 - sigma_z)/2`` on the second level."""
    return NonHermitianModel.from_parts(omega * SIGMA_X, 0.5 * g * (np.eye(2) - SIGMA_Z))


NH_PRESETS: dict[str, tuple[Callable[..., NonHermitianModel], tuple[str, ...]]] = {
    "diag_decay": (diag_decay, ("g",)),
    "pt_like": (pt_like, ("omega", "g")),
}


# -- experiment ------------------------------------------------------------------

class NonHermitianRun(NamedTuple):
    series: BoundSeries
    report: VerificationReport
    table: dict[str, list[float]]
    final: NormalizedState


def nh_columns(dim: int) -> tuple[str, ...]:
    return ("t", *(f"p{i}" for i in range(dim)), "fisher", "lambda_nh", "gamma_std", "raw_trace", "purity", "fisher_length", "bound_length")


def run_nh_experiment(
    model: NonHermitianModel,
    initial: DensityOperator | np.ndarray,
    tau: float,
    dt: float,
    *,
    pointwise_rel: float = 1e-6,
    pointwise_abs: float = 1e-9,
    integrated_tol: float = 1e-4,
    bound_scale: float = 1.0,
    name: str = "non_hermitian",
) -> NonHermitianRun:
    """Evolve the normalized state over ``[0, tau]`` and check the dissipative speed limits."""
    if not tau > 0.0:
        raise ValueError("need tau > 0")
    rho0 = initial if isinstance(initial, DensityOperator) else DensityOperator(initial)
    if rho0.dim != model.dim:
        raise ValueError(f"initial state has dimension {rho0.dim}, generator {model.dim}")
    n_steps, h = uniform_steps(tau, dt)
    state = NormalizedState(rho0)
    series = BoundSeries()
    columns = nh_columns(model.dim)
    table: dict[str, list[float]] = {c: [] for c in columns}
    std_integral, prev_std = 0.0, None
    degenerate_steps = 0

    for k in range(n_steps + 1):
        if k:
            state = evolve_normalized(state, model, h)
            state = NormalizedState(state.rho_hat, state.raw_trace, k * h, state.trace_drift)
        fi = nh_fisher(state, model)
        degenerate_steps += fi.degenerate
        std = math.sqrt(bound_scale) * gamma_std(state, model)
        if prev_std is not None:
            std_integral += 0.5 * h * (prev_std + std)
        prev_std = std
        series.append(state.time, fi.value, 4.0 * std * std)
        row = (
            state.time,
            *state.rho_hat.eigenvalues,
            fi.value,
            4.0 * std * std,
            std,
            state.raw_trace,
            state.rho_hat.purity(),
            series.fisher_length,
            series.bound_length,
        )
        for col, val in zip(columns, row):
            table[col].append(float(val))

    residual = residual_bures(rho0, state.rho_hat)
    report = VerificationReport(name)
    report.add(check_pointwise("fisher_le_lambda_nh", series.times, series.bound, series.fisher, pointwise_rel, pointwise_abs))
    report.add(check_speed_limit(std_integral, residual, integrated_tol, "speed_limit_dissipator"))
    report.add(check_speed_limit(series.bound_length, residual, integrated_tol, "speed_limit_residual_bures"))
    report.add(check_speed_limit(series.fisher_length, residual, integrated_tol, "fisher_length_ge_residual"))
    report.add(check_purity_speed_limit(series.bound_length, rho0.purity(), state.rho_hat.purity(), integrated_tol))
    report.metadata.update(
        {
            "kind": "non_hermitian",
            "dt": h,
            "steps": n_steps,
            "residual_distance": residual,
            "bures_angle": bures_angle(rho0, state.rho_hat),
            "dissipator_integral": std_integral,
            "purity_start": rho0.purity(),
            "purity_end": state.rho_hat.purity(),
            "degenerate_steps": degenerate_steps,
            "trace_drift": state.trace_drift,
            "raw_trace_final": state.raw_trace,
        }
    )
    return NonHermitianRun(series, report, table, state)
