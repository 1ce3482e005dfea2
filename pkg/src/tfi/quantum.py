"""System plus environment under a joint unitary, seen through the reduced state.

Conventions: hbar = 1, the system factor comes first in every tensor product
(``kron(system, environment)``), Pauli ``sigma_z = diag(1, -1)``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace
from functools import cached_property
from typing import Callable, NamedTuple

import numpy as np

from .info_geometry import (
    EPS_FLOOR,
    BoundSeries,
    CheckResult,
    VerificationReport,
    bhattacharyya_arccos,
    check_inequality,
    check_pointwise,
    check_speed_limit,
    uniform_steps,
)

HERMITIAN_TOL = 1e-12
TRACE_TOL = 1e-12
PSD_TOL = 1e-10
DELTA_GAP = 1e-8
# eigenvalues below ROUNDOFF_FACTOR * dim * eps * max eigenvalue are treated as zero
ROUNDOFF_FACTOR = 16.0

SIGMA_X = np.array([[0, 1], [1, 0]], dtype=complex)
SIGMA_Y = np.array([[0, -1j], [1j, 0]], dtype=complex)
SIGMA_Z = np.array([[1, 0], [0, -1]], dtype=complex)


def _hermitian_error(m: np.ndarray) -> float:
    return float(np.abs(m - m.conj().T).max(initial=0.0))


def _hermitize(m: np.ndarray) -> np.ndarray:
    return 0.5 * (m + m.conj().T)


def repair_psd(matrix: np.ndarray) -> tuple[np.ndarray, float]:
    """Clip round-off negative eigenvalues and renormalize the trace.

    Returns the repaired matrix and the total weight that was clipped.
    Eigenvalues below ``-PSD_TOL`` are a contract violation, not round-off.
    """
    m = _hermitize(np.asarray(matrix, dtype=complex))
    vals, vecs = np.linalg.eigh(m)
    if vals.min() < -PSD_TOL:
        raise ValueError(f"matrix has eigenvalue {vals.min()!r} below -{PSD_TOL}")
    clipped = float(-vals[vals < 0.0].sum())
    if clipped == 0.0:
        return m / np.trace(m).real, 0.0
    vals = np.clip(vals, 0.0, None)
    vals /= vals.sum()
    return (vecs * vals) @ vecs.conj().T, clipped


@dataclass(frozen=True, eq=False)
class DensityOperator:
    """Hermitian, unit-trace, positive semidefinite matrix."""

    matrix: np.ndarray

    def __post_init__(self) -> None:
        m = np.array(self.matrix, dtype=complex)
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise ValueError("density operator must be a square matrix")
        if _hermitian_error(m) > HERMITIAN_TOL:
            raise ValueError("density operator is not Hermitian")
        if abs(np.trace(m) - 1.0) > TRACE_TOL:
            raise ValueError(f"trace is {np.trace(m)!r}, not 1")
        m.setflags(write=False)
        object.__setattr__(self, "matrix", m)
        if self.eigenvalues.min() < -PSD_TOL:
            raise ValueError(f"eigenvalue {self.eigenvalues.min()!r} below -{PSD_TOL}")

    @classmethod
    def from_matrix(cls, matrix: np.ndarray) -> "DensityOperator":
        """Build from a nearly valid matrix, repairing round-off."""
        return cls(repair_psd(matrix)[0])

    @classmethod
    def pure(cls, ket: np.ndarray) -> "DensityOperator":
        v = np.asarray(ket, dtype=complex).reshape(-1)
        v = v / np.linalg.norm(v)
        return cls(np.outer(v, v.conj()))

    @classmethod
    def maximally_mixed(cls, dim: int) -> "DensityOperator":
        return cls(np.eye(dim, dtype=complex) / dim)

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    @cached_property
    def _spectrum(self) -> tuple[np.ndarray, np.ndarray]:
        return np.linalg.eigh(self.matrix)

    @property
    def eigenvalues(self) -> np.ndarray:
        """Ascending eigenvalues."""
        return self._spectrum[0]

    @property
    def eigenvectors(self) -> np.ndarray:
        return self._spectrum[1]

    def sqrt(self) -> np.ndarray:
        vals, vecs = self._spectrum
        return (vecs * np.sqrt(np.clip(vals, 0.0, None))) @ vecs.conj().T

    def purity(self) -> float:
        return float(np.real(np.vdot(self.matrix, self.matrix)))

    def spectrum_distribution(self) -> np.ndarray:
        """Eigenvalues as a probability vector; round-off sized ones become exact zeros.

        Without this a zero eigenvalue computed as 1e-17 in one basis and 3e-16
        in another puts ~1e-8 into any square-root based distance.
        """
        vals = self.eigenvalues
        noise = ROUNDOFF_FACTOR * self.dim * np.finfo(float).eps * max(float(vals[-1]), 0.0)
        vals = np.where(vals > noise, vals, 0.0)
        return vals / vals.sum()


def _as_matrix(rho: DensityOperator | np.ndarray) -> np.ndarray:
    return rho.matrix if isinstance(rho, DensityOperator) else np.asarray(rho, dtype=complex)


def _as_operator(rho: DensityOperator | np.ndarray) -> DensityOperator:
    return rho if isinstance(rho, DensityOperator) else DensityOperator(rho)


# -- distances ---------------------------------------------------------------

def purity(rho: DensityOperator | np.ndarray) -> float:
    m = _as_matrix(rho)
    return float(np.real(np.vdot(m, m)))


def fidelity(rho: DensityOperator | np.ndarray, sigma: DensityOperator | np.ndarray) -> float:
    """``(Tr sqrt(sqrt(rho) sigma sqrt(rho)))**2`` clamped to ``[0, 1]``.

    The trace is taken as the sum of singular values of ``sqrt(rho) sqrt(sigma)``,
    the same number, but symmetric in the arguments up to round-off.
    """
    a, b = _as_operator(rho), _as_operator(sigma)
    if a.dim != b.dim:
        raise ValueError("density operators have different dimensions")
    f = float(np.sum(np.linalg.svd(a.sqrt() @ b.sqrt(), compute_uv=False)) ** 2)
    return min(max(f, 0.0), 1.0)


def bures_angle(rho: DensityOperator | np.ndarray, sigma: DensityOperator | np.ndarray) -> float:
    return math.acos(min(1.0, math.sqrt(fidelity(rho, sigma))))


def residual_bures(rho: DensityOperator | np.ndarray, sigma: DensityOperator | np.ndarray) -> float:
    """Bures angle between unitary orbits: arccos distance of the ascending spectra."""
    a, b = _as_operator(rho), _as_operator(sigma)
    if a.dim != b.dim:
        raise ValueError("density operators have different dimensions")
    return bhattacharyya_arccos(np.sort(a.spectrum_distribution()), np.sort(b.spectrum_distribution()))


def check_purity_speed_limit(
    bound_length: float, purity_start: float, purity_end: float, tol: float = 1e-4, name: str = "purity_speed_limit"
) -> CheckResult:
    """``2 sin(min(L, pi/2)) >= |P(tau) - P(0)|``."""
    if bound_length < 0.0:
        raise ValueError("bound length must be non-negative")
    lhs = 2.0 * math.sin(min(bound_length, math.pi / 2))
    return check_inequality(name, lhs, abs(purity_end - purity_start), tol)


# -- spectral Fisher information ------------------------------------------------

class SpectralFisher(NamedTuple):
    value: float
    degenerate: bool


def _clusters(vals: np.ndarray, gap: float) -> list[np.ndarray]:
    groups, start = [], 0
    for i in range(1, vals.size + 1):
        if i == vals.size or vals[i] - vals[i - 1] >= gap:
            groups.append(np.arange(start, i))
            start = i
    return groups


def spectral_fisher(
    rho: DensityOperator | np.ndarray,
    drho: np.ndarray,
    d2rho: np.ndarray | None = None,
    gap: float = DELTA_GAP,
) -> SpectralFisher:
    """Temporal Fisher information of the eigenvalue distribution of ``rho``.

    Eigenvalues closer than ``gap`` are grouped; a group with common value
    ``lam`` contributes ``Tr((P drho P)^2) / lam``, which is what the individual
    ``dp_i^2 / p_i`` add up to whichever way the degeneracy splits. Eigenvalues
    below ``EPS_FLOOR`` leave zero quadratically; their limit
    ``2 Tr(P d2rho P) - 4 sum_j |<j|drho|k>|^2 / lam_j`` needs ``d2rho`` and is
    skipped when it is not given.
    """
    op = _as_operator(rho)
    vals, vecs = op.eigenvalues, op.eigenvectors
    d1 = vecs.conj().T @ np.asarray(drho, dtype=complex) @ vecs
    groups = _clusters(vals, gap)
    live = vals >= EPS_FLOOR
    scale = max(1.0, float(np.abs(d1).max()))
    total, degenerate = 0.0, False
    for idx in groups:
        lam = float(vals[idx].mean())
        block = d1[np.ix_(idx, idx)]
        if lam >= EPS_FLOOR:
            degenerate |= idx.size > 1
            total += float(np.sum(np.abs(block) ** 2)) / lam
            continue
        if d2rho is None:
            continue
        if np.abs(block).max() > 1e-8 * scale:
            # an empty level that opens linearly has unbounded Fisher information
            return SpectralFisher(math.inf, degenerate)
        d2 = vecs[:, idx].conj().T @ np.asarray(d2rho, dtype=complex) @ vecs[:, idx]
        coupling = np.abs(d1[np.ix_(idx, np.flatnonzero(live))]) ** 2 / vals[live]
        total += 2.0 * float(np.trace(d2).real) - 4.0 * float(coupling.sum())
    return SpectralFisher(max(total, 0.0), degenerate)


# -- composite system ----------------------------------------------------------

def partial_trace_environment(matrix: np.ndarray, dim_s: int, dim_e: int) -> np.ndarray:
    m = np.asarray(matrix)
    if m.shape != (dim_s * dim_e, dim_s * dim_e):
        raise ValueError(f"matrix of shape {m.shape} does not factor as {dim_s} x {dim_e}")
    return np.einsum("iaja->ij", m.reshape(dim_s, dim_e, dim_s, dim_e))


def partial_trace_E(rho_se: DensityOperator | np.ndarray, dim_s: int, dim_e: int) -> DensityOperator:
    """Reduced state of the system factor."""
    return DensityOperator.from_matrix(partial_trace_environment(_as_matrix(rho_se), dim_s, dim_e))


def propagator(hamiltonian: np.ndarray, dt: float) -> np.ndarray:
    """``exp(-i H dt)`` from the Hermitian eigendecomposition of ``H``."""
    h = np.asarray(hamiltonian, dtype=complex)
    if _hermitian_error(h) > HERMITIAN_TOL * max(1.0, float(np.abs(h).max(initial=0.0))):
        raise ValueError("Hamiltonian is not Hermitian")
    vals, vecs = np.linalg.eigh(_hermitize(h))
    return (vecs * np.exp(-1j * vals * dt)) @ vecs.conj().T


@dataclass(frozen=True, eq=False)
class CompositeSystem:
    dim_s: int
    dim_e: int
    h_s: np.ndarray
    h_e: np.ndarray
    h_se: np.ndarray
    rho: DensityOperator
    time: float = 0.0

    def __post_init__(self) -> None:
        n = self.dim_s * self.dim_e
        for name, m, d in (("h_s", self.h_s, self.dim_s), ("h_e", self.h_e, self.dim_e), ("h_se", self.h_se, n)):
            arr = np.asarray(m, dtype=complex)
            if arr.shape != (d, d):
                raise ValueError(f"{name} must be {d}x{d}, got {arr.shape}")
            if _hermitian_error(arr) > HERMITIAN_TOL * max(1.0, float(np.abs(arr).max())):
                raise ValueError(f"{name} is not Hermitian")
            object.__setattr__(self, name, arr)
        rho = _as_operator(self.rho)
        if rho.dim != n:
            raise ValueError(f"composite state has dimension {rho.dim}, expected {n}")
        object.__setattr__(self, "rho", rho)

    @cached_property
    def hamiltonian(self) -> np.ndarray:
        return (
            np.kron(self.h_s, np.eye(self.dim_e))
            + np.kron(np.eye(self.dim_s), self.h_e)
            + self.h_se
        )

    def with_state(self, rho: DensityOperator, time: float) -> "CompositeSystem":
        new = replace(self, rho=rho, time=time)
        if "hamiltonian" in self.__dict__:
            new.__dict__["hamiltonian"] = self.hamiltonian
        return new

    def reduced(self) -> DensityOperator:
        return partial_trace_E(self.rho, self.dim_s, self.dim_e)

    def reduced_derivatives(self) -> tuple[np.ndarray, np.ndarray]:
        """First and second time derivative of the reduced state."""
        h, r = self.hamiltonian, self.rho.matrix
        d1 = -1j * (h @ r - r @ h)
        d2 = -1j * (h @ d1 - d1 @ h)
        return (
            partial_trace_environment(d1, self.dim_s, self.dim_e),
            partial_trace_environment(d2, self.dim_s, self.dim_e),
        )


def evolve_composite(sys: CompositeSystem, dt: float, unitary: np.ndarray | None = None) -> CompositeSystem:
    """Apply ``U = exp(-i H dt)`` to the joint state."""
    u = propagator(sys.hamiltonian, dt) if unitary is None else unitary
    m = _hermitize(u @ sys.rho.matrix @ u.conj().T)
    return sys.with_state(DensityOperator(m / np.trace(m).real), sys.time + dt)


class SpectralTrack(NamedTuple):
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray
    rates: np.ndarray
    degenerate: bool


def _centred_interaction(sys: CompositeSystem) -> np.ndarray:
    mean = np.trace(sys.h_se @ sys.rho.matrix).real
    return sys.h_se - mean * np.eye(sys.h_se.shape[0])


def eigen_rates(sys: CompositeSystem, gap: float = DELTA_GAP) -> SpectralTrack:
    """Eigenvalues of the reduced state and their rates ``-i <p|Tr_E[[dH, rho]]|p>``.

    ``degenerate`` flags spectra with two eigenvalues closer than ``gap``;
    individual rates are then basis dependent.
    """
    delta = _centred_interaction(sys)
    r = sys.rho.matrix
    comm = partial_trace_environment(delta @ r - r @ delta, sys.dim_s, sys.dim_e)
    reduced = sys.reduced()
    vecs = reduced.eigenvectors
    rates = -1j * np.einsum("ki,kl,li->i", vecs.conj(), comm, vecs)
    vals = reduced.eigenvalues
    degenerate = bool(np.any(np.diff(vals) < gap))
    return SpectralTrack(vals, vecs, rates.real, degenerate)


def interaction_std(sys: CompositeSystem) -> float:
    """Standard deviation of the interaction Hamiltonian in the joint state."""
    delta = _centred_interaction(sys)
    return math.sqrt(max(float(np.trace(delta @ delta @ sys.rho.matrix).real), 0.0))


def lambda_oq(sys: CompositeSystem) -> float:
    return 4.0 * interaction_std(sys) ** 2


def quantum_fisher(sys: CompositeSystem) -> SpectralFisher:
    """Temporal Fisher information of the reduced spectrum."""
    d1, d2 = sys.reduced_derivatives()
    return spectral_fisher(sys.reduced(), d1, d2)


# -- presets -------------------------------------------------------------------

def two_qubit_xx(g: float, omega: float = 0.0) -> CompositeSystem:
    """``H_SE = g sigma_x (x) sigma_x`` from ``|00>``; ``omega`` adds ``omega sigma_z / 2`` on the system."""
    ket = np.zeros(4)
    ket[0] = 1.0
    return CompositeSystem(2, 2, 0.5 * omega * SIGMA_Z, np.zeros((2, 2)), g * np.kron(SIGMA_X, SIGMA_X), DensityOperator.pure(ket))


def qubit_env(g: float, omega_s: float, omega_e: float, dim_e: int = 2) -> CompositeSystem:
    """Qubit coupled through ``sigma_x (x) (a + a^dagger)`` to a truncated oscillator.

    Starts in ``|0>`` for the qubit and the oscillator ground state.
    """
    dim_e = int(dim_e)
    if dim_e < 2:
        raise ValueError("environment needs at least two levels")
    lower = np.diag(np.sqrt(np.arange(1, dim_e)), k=1).astype(complex)
    ket = np.zeros(2 * dim_e)
    ket[0] = 1.0
    return CompositeSystem(
        2,
        dim_e,
        0.5 * omega_s * SIGMA_Z,
        omega_e * np.diag(np.arange(dim_e)).astype(complex),
        g * np.kron(SIGMA_X, lower + lower.conj().T),
        DensityOperator.pure(ket),
    )


QUANTUM_PRESETS: dict[str, tuple[Callable[..., CompositeSystem], tuple[str, ...]]] = {
    "two_qubit_xx": (two_qubit_xx, ("g", "omega")),
    "qubit_env": (qubit_env, ("g", "omega_s", "omega_e", "dim_e")),
}


# -- experiment ------------------------------------------------------------------

class QuantumRun(NamedTuple):
    series: BoundSeries
    report: VerificationReport
    table: dict[str, list[float]]
    final: CompositeSystem


def quantum_columns(dim_s: int) -> tuple[str, ...]:
    return ("t", *(f"p{i}" for i in range(dim_s)), "fisher", "lambda_oq", "interaction_std", "purity", "fisher_length", "bound_length")


def run_open_quantum_experiment(
    sys: CompositeSystem,
    tau: float,
    dt: float,
    *,
    pointwise_rel: float = 1e-6,
    pointwise_abs: float = 1e-9,
    integrated_tol: float = 1e-4,
    bound_scale: float = 1.0,
    name: str = "open_quantum",
) -> QuantumRun:
    """Evolve the joint state over ``[0, tau]`` and check the interaction speed limits.

    The bound is finite at ``t = 0``, so recording starts there. Steps whose
    reduced spectrum is degenerate are kept (the grouped Fisher estimator is
    well defined there) and counted in the metadata.
    """
    if not tau > 0.0:
        raise ValueError("need tau > 0")
    n_steps, h = uniform_steps(tau, dt)
    u = propagator(sys.hamiltonian, h)
    unitarity = float(np.abs(u.conj().T @ u - np.eye(u.shape[0])).max())
    start = sys
    rho_s0 = sys.reduced()
    series = BoundSeries()
    columns = quantum_columns(sys.dim_s)
    table: dict[str, list[float]] = {c: [] for c in columns}
    std_integral, prev_std = 0.0, None
    degenerate_steps = 0

    for k in range(n_steps + 1):
        if k:
            sys = evolve_composite(sys, h, u)
            sys = sys.with_state(sys.rho, k * h)
        reduced = sys.reduced()
        fi = quantum_fisher(sys)
        degenerate_steps += fi.degenerate
        std = math.sqrt(bound_scale) * interaction_std(sys)
        if prev_std is not None:
            std_integral += 0.5 * h * (prev_std + std)
        prev_std = std
        series.append(sys.time, fi.value, 4.0 * std * std)
        row = (
            sys.time,
            *reduced.eigenvalues,
            fi.value,
            4.0 * std * std,
            std,
            reduced.purity(),
            series.fisher_length,
            series.bound_length,
        )
        for col, val in zip(columns, row):
            table[col].append(float(val))

    rho_s1 = sys.reduced()
    residual = residual_bures(rho_s0, rho_s1)
    report = VerificationReport(name)
    report.add(check_pointwise("fisher_le_lambda_oq", series.times, series.bound, series.fisher, pointwise_rel, pointwise_abs))
    report.add(check_speed_limit(std_integral, residual, integrated_tol, "speed_limit_interaction"))
    report.add(check_speed_limit(series.bound_length, residual, integrated_tol, "speed_limit_residual_bures"))
    report.add(check_speed_limit(series.fisher_length, residual, integrated_tol, "fisher_length_ge_residual"))
    report.add(check_purity_speed_limit(series.bound_length, rho_s0.purity(), rho_s1.purity(), integrated_tol))
    report.metadata.update(
        {
            "kind": "open_quantum",
            "dt": h,
            "steps": n_steps,
            "residual_distance": residual,
            "bures_angle": bures_angle(rho_s0, rho_s1),
            "interaction_integral": std_integral,
            "purity_start": rho_s0.purity(),
            "purity_end": rho_s1.purity(),
            "degenerate_steps": degenerate_steps,
            "unitarity_error": unitarity,
            "composite_purity_drift": abs(sys.rho.purity() - start.rho.purity()),
        }
    )
    return QuantumRun(series, report, table, sys)
