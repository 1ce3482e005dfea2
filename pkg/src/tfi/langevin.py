"""Overdamped Langevin dynamics on a grid.

The Fokker-Planck equation is advanced with a conservative finite-volume
scheme: probability moves between neighbouring cells through face fluxes

    J = F_face * (p_left + p_right) / 2 - D * (p_right - p_left) / dx

so the total mass changes only by round-off. Reflecting walls carry zero flux,
periodic boundaries wrap the last face onto the first cell.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from functools import cached_property
from typing import Callable, NamedTuple

import numpy as np
from scipy.interpolate import RegularGridInterpolator

from .info_geometry import (
    EPS_FLOOR,
    Boundary,
    BoundSeries,
    GridDensity,
    UniformGrid,
    VerificationReport,
    bhattacharyya_arccos_grid,
    check_inequality,
    check_pointwise,
    check_speed_limit,
    temporal_fisher_grid,
    uniform_steps,
    wasserstein_1d,
)

# dt * D * sum(1/dx^2) must stay below this
DIFFUSIVE_LIMIT = 0.25
# dt * max|F| / dx must stay below this
ADVECTIVE_LIMIT = 0.5
# max|F| dx / (2D); above 1 the central flux can drive the density negative
PECLET_LIMIT = 1.0
NEGATIVE_TOL = 1e-12
MC_CHUNK = 10_000
MIN_TRAJECTORIES = 1000

Force = Callable[[np.ndarray], np.ndarray]


class StepSizeError(ValueError):
    pass


# -- force presets -----------------------------------------------------------

def ou_force(k: float) -> Force:
    """Linear restoring force ``-k x``."""
    return lambda x: -k * x


def double_well_force(a: float, b: float) -> Force:
    """``-a x^3 + b x`` in each coordinate."""
    return lambda x: -a * x**3 + b * x


def zero_force() -> Force:
    return lambda x: np.zeros_like(x)


def polynomial_force(coefficients: list[float]) -> Force:
    """``sum_n c_n x^n`` in each coordinate, lowest order first."""
    coeffs = [float(c) for c in coefficients]
    return lambda x: np.polynomial.polynomial.polyval(x, coeffs)


def rotational_force(k: float, omega: float) -> Force:
    """Planar ``-k x + omega * (-y, x)``; non-conservative when ``omega != 0``."""

    def force(x: np.ndarray) -> np.ndarray:
        if x.shape[1] != 2:
            raise ValueError("rotational force is two-dimensional")
        return -k * x + omega * np.stack([-x[:, 1], x[:, 0]], axis=1)

    return force


FORCE_PRESETS: dict[str, tuple[Callable[..., Force], tuple[str, ...]]] = {
    "ou": (ou_force, ("k",)),
    "double_well": (double_well_force, ("a", "b")),
    "zero": (zero_force, ()),
    "polynomial": (polynomial_force, ("coefficients",)),
    "rotational": (rotational_force, ("k", "omega")),
}


def make_force(name: str, **params: float) -> Force:
    try:
        factory, names = FORCE_PRESETS[name]
    except KeyError:
        raise ValueError(f"unknown force preset {name!r}; choose from {sorted(FORCE_PRESETS)}") from None
    if set(params) != set(names):
        raise ValueError(f"force {name!r} takes parameters {list(names)}, got {sorted(params)}")
    return factory(**params)


# -- model and state ---------------------------------------------------------

@dataclass(frozen=True)
class LangevinModel:
    """Time-independent drift ``force``, diffusion constant and the grid it lives on."""

    force: Force
    diffusion: float
    grid: UniformGrid
    boundary: Boundary = Boundary.REFLECTING

    def __post_init__(self) -> None:
        if not self.diffusion > 0.0:
            raise ValueError("diffusion constant must be positive")
        object.__setattr__(self, "boundary", Boundary(self.boundary))
        centre_force = self.force_at(self.grid.points())
        if centre_force.shape != (self.grid.points().shape[0], self.grid.ndim):
            raise ValueError("force must map an (m, ndim) array to an (m, ndim) array")
        if not np.all(np.isfinite(centre_force)) or not all(np.all(np.isfinite(f)) for f in self.face_force):
            raise ValueError("force is not finite on the grid")
        peclet = max(float(np.max(np.abs(f))) * h for f, h in zip(self.face_force, self.grid.spacing)) / (2 * self.diffusion)
        if peclet > PECLET_LIMIT:
            raise ValueError(f"cell Peclet number {peclet:.3g} exceeds {PECLET_LIMIT}; refine the grid")

    def force_at(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return np.asarray(self.force(x), dtype=float).reshape(x.shape)

    @cached_property
    def face_force(self) -> tuple[np.ndarray, ...]:
        """Force component normal to the right face of every cell, one array per axis."""
        out = []
        for axis, h in enumerate(self.grid.spacing):
            pts = self.grid.points().copy()
            pts[:, axis] += 0.5 * h
            out.append(self.force_at(pts)[:, axis].reshape(self.grid.shape))
        return tuple(out)

    def max_stable_dt(self) -> float:
        inv_sq = sum(1.0 / h**2 for h in self.grid.spacing)
        dt_diff = DIFFUSIVE_LIMIT / (self.diffusion * inv_sq)
        speed = max(float(np.max(np.abs(f)) / h) for f, h in zip(self.face_force, self.grid.spacing))
        return dt_diff if speed == 0.0 else min(dt_diff, ADVECTIVE_LIMIT / speed)


def _fluxes(values: np.ndarray, model: LangevinModel) -> list[np.ndarray]:
    """Right-face flux of every cell along each axis."""
    out = []
    periodic = model.boundary is Boundary.PERIODIC
    for axis, h in enumerate(model.grid.spacing):
        right = np.roll(values, -1, axis=axis)
        flux = model.face_force[axis] * 0.5 * (values + right) - model.diffusion * (right - values) / h
        if not periodic:
            idx = [slice(None)] * values.ndim
            idx[axis] = -1
            flux[tuple(idx)] = 0.0
        out.append(flux)
    return out


def _divergence(fluxes: list[np.ndarray], model: LangevinModel) -> np.ndarray:
    rhs = np.zeros(model.grid.shape)
    for axis, (flux, h) in enumerate(zip(fluxes, model.grid.spacing)):
        rhs -= (flux - np.roll(flux, 1, axis=axis)) / h
    return rhs


def _rate_from_fluxes(values: np.ndarray, fluxes: list[np.ndarray], model: LangevinModel) -> float:
    # (1/D) * integral of |nu|^2 p, with nu = J / p evaluated on faces
    floor = EPS_FLOOR / model.grid.cell_volume
    total = 0.0
    for axis, flux in enumerate(fluxes):
        face_p = 0.5 * (values + np.roll(values, -1, axis=axis))
        mask = face_p >= floor
        total += float(np.sum(flux[mask] ** 2 / face_p[mask]))
    return total * model.grid.cell_volume / model.diffusion



def stationary_density(model: LangevinModel) -> GridDensity:
    """Zero-flux density of the discretized equation on a reflecting 1D grid."""
    if model.grid.ndim != 1 or model.boundary is not Boundary.REFLECTING:
        raise ValueError("zero-flux stationary density needs a reflecting 1D grid")
    h = model.grid.spacing[0]
    f = model.face_force[0][:-1]
    a = model.diffusion / h
    log_ratio = np.log((a + 0.5 * f) / (a - 0.5 * f))
    logp = np.concatenate([[0.0], np.cumsum(log_ratio)])
    return GridDensity.from_values(model.grid, np.exp(logp - logp.max()), model.boundary)


def fpe_rhs(values: np.ndarray, model: LangevinModel) -> np.ndarray:
    """Time derivative of the density under the discretized Fokker-Planck equation."""
    return _divergence(_fluxes(np.asarray(values, dtype=float), model), model)


@dataclass(frozen=True)
class FokkerPlanckState:
    density: GridDensity
    time: float = 0.0
    accumulated_entropy: float = 0.0
    entropy_rate: float = 0.0
    time_derivative: np.ndarray = field(default=None, repr=False, compare=False)
    mass_drift: float = 0.0
    clipped_mass: float = 0.0

    @classmethod
    def initial(cls, density: GridDensity, model: LangevinModel) -> "FokkerPlanckState":
        if density.grid != model.grid:
            raise ValueError("density and model use different grids")
        fluxes = _fluxes(density.values, model)
        return cls(
            density,
            entropy_rate=_rate_from_fluxes(density.values, fluxes, model),
            time_derivative=_divergence(fluxes, model),
        )


def fpe_step(state: FokkerPlanckState, model: LangevinModel, dt: float) -> FokkerPlanckState:
    """One RK4 step; the entropy accumulator uses the trapezoid rule."""
    if dt > model.max_stable_dt() * (1.0 + 1e-12):
        raise StepSizeError(f"dt={dt!r} exceeds the stable step {model.max_stable_dt()!r}")
    p = state.density.values
    k1 = state.time_derivative if state.time_derivative is not None else fpe_rhs(p, model)
    k2 = fpe_rhs(p + 0.5 * dt * k1, model)
    k3 = fpe_rhs(p + 0.5 * dt * k2, model)
    k4 = fpe_rhs(p + dt * k3, model)
    new = p + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)

    clipped = 0.0
    low = new.min()
    if low < 0.0:
        scale = max(1.0, float(new.max()))
        if low < -NEGATIVE_TOL * scale:
            clipped = float(-new[new < 0.0].sum() * model.grid.cell_volume)
        new = np.clip(new, 0.0, None)
    mass = float(new.sum() * model.grid.cell_volume)
    new = new / mass

    fluxes = _fluxes(new, model)
    rate = _rate_from_fluxes(new, fluxes, model)
    return FokkerPlanckState(
        GridDensity(new, model.grid, model.boundary),
        state.time + dt,
        state.accumulated_entropy + 0.5 * dt * (state.entropy_rate + rate),
        rate,
        _divergence(fluxes, model),
        state.mass_drift + abs(mass - 1.0),
        state.clipped_mass + clipped,
    )


def entropy_production_rate(state: FokkerPlanckState, model: LangevinModel) -> float:
    """Entropy production rate ``(1/D) * integral |nu|^2 p`` from the face fluxes."""
    return _rate_from_fluxes(state.density.values, _fluxes(state.density.values, model), model)


def local_mean_velocity(state: FokkerPlanckState, model: LangevinModel) -> tuple[np.ndarray, np.ndarray]:
    """``F - D grad ln p`` at cell centres by central differences.

    Returns the field with shape ``grid.shape + (ndim,)`` and a boolean mask of
    cells where it was evaluated; elsewhere the field is zero.
    """
    p = state.density.values
    grid = model.grid
    ok = p >= state.density.floor
    logp = np.log(np.where(ok, p, 1.0))
    force = model.force_at(grid.points()).reshape(grid.shape + (grid.ndim,))
    nu = np.zeros_like(force)
    valid = ok.copy()
    for axis, h in enumerate(grid.spacing):
        if model.boundary is Boundary.PERIODIC:
            grad = (np.roll(logp, -1, axis) - np.roll(logp, 1, axis)) / (2.0 * h)
            valid &= np.roll(ok, -1, axis) & np.roll(ok, 1, axis)
        else:
            grad = np.gradient(logp, h, axis=axis, edge_order=2)
            n = grid.shape[axis]
            nb = np.ones_like(ok)
            lo = [slice(None)] * p.ndim
            hi = [slice(None)] * p.ndim
            lo[axis], hi[axis] = slice(1, n), slice(0, n - 1)
            nb[tuple(lo)] &= ok[tuple(hi)]
            nb[tuple(hi)] &= ok[tuple(lo)]
            valid &= nb
        nu[..., axis] = force[..., axis] - model.diffusion * grad
    nu[~valid] = 0.0
    return nu, valid


def lambda_langevin(state: FokkerPlanckState) -> float:
    """``Sigma(t) / (2 t^2)``."""
    if not state.time > 0.0:
        raise ValueError("the Langevin bound is undefined at t = 0")
    return state.accumulated_entropy / (2.0 * state.time**2)


def fisher(state: FokkerPlanckState, model: LangevinModel) -> float:
    dp = state.time_derivative if state.time_derivative is not None else fpe_rhs(state.density.values, model)
    return temporal_fisher_grid(state.density, dp)


def tail_mass(density: GridDensity) -> float:
    """Probability in the outermost layer of cells."""
    inner = density.values[tuple(slice(1, n - 1) for n in density.grid.shape)]
    return density.mass() - float(inner.sum() * density.grid.cell_volume)


# -- experiment --------------------------------------------------------------

class LangevinRun(NamedTuple):
    series: BoundSeries
    report: VerificationReport
    table: dict[str, list[float]]
    final: FokkerPlanckState


LANGEVIN_COLUMNS = ("t", "sigma", "fisher", "lambda_la", "fisher_length", "bound_length")


def run_langevin_experiment(
    model: LangevinModel,
    initial: GridDensity,
    tau: float,
    dt: float,
    t0: float | None = None,
    *,
    pointwise_rel: float = 1e-6,
    pointwise_abs: float = 1e-9,
    integrated_tol: float = 1e-4,
    bound_scale: float = 1.0,
    name: str = "langevin",
) -> LangevinRun:
    """Evolve the density over ``[0, tau]`` and check the Langevin speed limits.

    Bounds are recorded from ``t0`` (default ``10 * dt``). The transport check
    is only made on one-dimensional grids.
    """
    n_steps, h = uniform_steps(tau, dt)
    if t0 is None:
        t0 = 10.0 * h
    if not tau > t0 > 0.0:
        raise ValueError("need tau > t0 > 0")
    state = FokkerPlanckState.initial(initial, model)
    start = state
    series = BoundSeries()
    table: dict[str, list[float]] = {c: [] for c in LANGEVIN_COLUMNS}
    window_start = None
    entropy_integral = 0.0
    second_law_ok = True

    for k in range(1, n_steps + 1):
        prev_sigma = state.accumulated_entropy
        state = replace(fpe_step(state, model, h), time=k * h)
        entropy_integral += 0.5 * h * (prev_sigma + state.accumulated_entropy)
        second_law_ok &= state.accumulated_entropy >= prev_sigma
        if state.time < t0 * (1.0 - 1e-12):
            continue
        if window_start is None:
            window_start = state.density
        f = fisher(state, model)
        lam = bound_scale * lambda_langevin(state)
        series.append(state.time, f, lam)
        row = (state.time, state.accumulated_entropy, f, lam, series.fisher_length, series.bound_length)
        for col, val in zip(LANGEVIN_COLUMNS, row):
            table[col].append(val)

    distance = bhattacharyya_arccos_grid(start.density, state.density)
    window_distance = bhattacharyya_arccos_grid(window_start, state.density)
    report = VerificationReport(name)
    report.add(check_pointwise("fisher_le_lambda_la", series.times, series.bound, series.fisher, pointwise_rel, pointwise_abs))
    report.add(check_speed_limit(series.bound_length, distance, integrated_tol, "speed_limit_entropy"))
    report.add(check_speed_limit(series.fisher_length, window_distance, integrated_tol, "fisher_length_ge_distance"))
    report.add(check_inequality("entropy_non_decreasing", 1.0 if second_law_ok else 0.0, 1.0, 0.0))
    if model.grid.ndim == 1:
        # total entropy production bounds the transport cost: W^2 <= D * tau * Sigma(tau)
        w2 = wasserstein_1d(start.density, state.density)
        report.add(
            check_inequality(
                "wasserstein_comparison",
                bound_scale * state.accumulated_entropy,
                w2 / (model.diffusion * tau),
                integrated_tol,
            )
        )
        report.metadata["wasserstein_sq"] = w2

    report.metadata.update(
        {
            "kind": "langevin",
            "dt": h,
            "steps": n_steps,
            "t0": t0,
            "distance": distance,
            "window_distance": window_distance,
            "entropy_time_integral": entropy_integral,
            "omitted_head": math.sqrt(start.entropy_rate / 2.0) * 2.0 * math.sqrt(t0),
            "mass_drift": state.mass_drift,
            "clipped_mass": state.clipped_mass,
            "tail_mass": max(tail_mass(start.density), tail_mass(state.density)),
        }
    )
    return LangevinRun(series, report, table, state)


# -- Monte Carlo path Fisher information ---------------------------------------

@dataclass(frozen=True)
class PathFisherEstimate:
    """Variance of the path score at zero perturbation, with its standard error."""

    estimate: float
    std_error: float
    n_trajectories: int
    dt: float
    scores: np.ndarray = field(repr=False)
    entropy: float = math.nan
    temporal_fisher: float = math.nan


def _sample_initial(density: GridDensity, n: int, rng: np.random.Generator) -> np.ndarray:
    grid = density.grid
    w = density.values.reshape(-1) * grid.cell_volume
    cdf = np.cumsum(w)
    cells = np.minimum(np.searchsorted(cdf, rng.random(n) * cdf[-1], side="right"), w.size - 1)
    idx = np.unravel_index(cells, grid.shape)
    offsets = rng.random((n, grid.ndim)) - 0.5
    return np.stack(
        [grid.centers[a][idx[a]] + offsets[:, a] * grid.spacing[a] for a in range(grid.ndim)], axis=1
    )


def _fold(x: np.ndarray, grid: UniformGrid, boundary: Boundary) -> np.ndarray:
    lo = np.asarray(grid.lower)
    width = np.asarray(grid.upper) - lo
    if boundary is Boundary.PERIODIC:
        return lo + np.mod(x - lo, width)
    # mirror at both walls
    y = np.mod(x - lo, 2.0 * width)
    return lo + np.where(y > width, 2.0 * width - y, y)


def _velocity_sampler(nu: np.ndarray, grid: UniformGrid) -> Callable[[np.ndarray], np.ndarray]:
    if grid.ndim == 1:
        xs = grid.centers[0]
        return lambda x: np.interp(x[:, 0], xs, nu[:, 0])[:, None]
    interp = RegularGridInterpolator(grid.centers, nu, bounds_error=False, fill_value=None)
    return interp


def path_fisher_mc(
    model: LangevinModel,
    initial: GridDensity,
    t: float,
    dt: float,
    n_traj: int,
    seed: int,
    *,
    fpe_dt: float | None = None,
) -> PathFisherEstimate:
    """Monte Carlo Fisher information of the trajectory ensemble at zero perturbation.

    Euler-Maruyama paths are sampled while the density is evolved on the grid
    between sampling instants. Each path accumulates the score
    ``sum_k nu(x_k, t_k) . (dx_k - F(x_k) dt) / (2D)``; the estimate is the
    sample variance of the scores. Trajectories are drawn in fixed blocks of
    ``MC_CHUNK``, each with its own stream spawned from ``seed``, so results do
    not depend on how the work is split.
    """
    if n_traj < MIN_TRAJECTORIES:
        raise ValueError(f"need at least {MIN_TRAJECTORIES} trajectories, got {n_traj}")
    if initial.grid != model.grid:
        raise ValueError("initial density and model use different grids")
    n_steps, h = uniform_steps(t, dt)
    stable = model.max_stable_dt()
    sub = max(1, math.ceil(h / (fpe_dt if fpe_dt is not None else stable) - 1e-9))
    h_fpe = h / sub
    if h_fpe > stable * (1.0 + 1e-12):
        raise StepSizeError(f"grid step {h_fpe!r} exceeds the stable step {stable!r}")

    sizes = [min(MC_CHUNK, n_traj - s) for s in range(0, n_traj, MC_CHUNK)]
    streams = [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(len(sizes))]
    x = np.concatenate([_sample_initial(initial, m, g) for m, g in zip(sizes, streams)])
    scores = np.zeros(n_traj)
    noise_scale = math.sqrt(2.0 * model.diffusion * h)

    state = FokkerPlanckState.initial(initial, model)
    for _ in range(n_steps):
        nu, _ = local_mean_velocity(state, model)
        velocity = _velocity_sampler(nu, model.grid)(x)
        xi = np.concatenate([g.standard_normal((m, model.grid.ndim)) for m, g in zip(sizes, streams)])
        noise = noise_scale * xi
        # dx - F dt is exactly the noise increment
        scores += np.einsum("ij,ij->i", velocity, noise) / (2.0 * model.diffusion)
        x = _fold(x + model.force_at(x) * h + noise, model.grid, model.boundary)
        for _ in range(sub):
            state = fpe_step(state, model, h_fpe)

    mean = math.fsum(scores) / n_traj
    centred = scores - mean
    var = math.fsum(centred**2) / (n_traj - 1)
    m4 = math.fsum(centred**4) / n_traj
    std_error = math.sqrt(max(m4 - var**2, 0.0) / n_traj)
    return PathFisherEstimate(var, std_error, n_traj, h, scores, state.accumulated_entropy, fisher(state, model))
