import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tfi.info_geometry import Boundary, GridDensity, UniformGrid
from tfi.langevin import (
    FokkerPlanckState,
    LangevinModel,
    StepSizeError,
    double_well_force,
    entropy_production_rate,
    fisher,
    fpe_step,
    lambda_langevin,
    local_mean_velocity,
    make_force,
    ou_force,
    path_fisher_mc,
    polynomial_force,
    rotational_force,
    run_langevin_experiment,
    stationary_density,
    zero_force,
)

# quadrature of (1 - s^2)^2 / s^2 with s^2 = 1 - 0.75 exp(-2t) over [0, 1]
OU_SIGMA_1 = 0.3153828115776914


def gaussian(mu, var):
    return lambda x: np.exp(-((x - mu) ** 2) / (2 * var)) / np.sqrt(2 * np.pi * var)


def ou_var(t, var0=0.25):
    return 1 + (var0 - 1) * math.exp(-2 * t)


def ou_fisher(t):
    return (1.5 * math.exp(-2 * t)) ** 2 / (2 * ou_var(t) ** 2)


def ou_rate(t):
    return (1 - ou_var(t)) ** 2 / ou_var(t)


def evolve(model, density, t_end):
    dt = model.max_stable_dt()
    n = math.ceil(t_end / dt)
    state = FokkerPlanckState.initial(density, model)
    for _ in range(n):
        state = fpe_step(state, model, t_end / n)
    return state


@pytest.fixture(scope="module")
def ou_setup():
    grid = UniformGrid((-8.0,), (8.0,), (512,))
    return LangevinModel(ou_force(1.0), 1.0, grid), grid


def test_model_validation():
    grid = UniformGrid((-1.0,), (1.0,), (10,))
    with pytest.raises(ValueError):
        LangevinModel(ou_force(1.0), 0.0, grid)
    with pytest.raises(ValueError, match="finite"):
        LangevinModel(lambda x: np.full_like(x, np.inf), 1.0, grid)
    with pytest.raises(ValueError, match="unknown"):
        make_force("harmonic", k=1.0)
    with pytest.raises(ValueError, match="parameters"):
        make_force("ou", a=1.0)
    x = np.array([[2.0]])
    assert make_force("double_well", a=1.0, b=3.0)(x)[0, 0] == pytest.approx(-2.0)
    assert polynomial_force([1.0, -2.0])(x)[0, 0] == pytest.approx(-3.0)
    assert zero_force()(x)[0, 0] == 0.0


def test_step_guard(ou_setup):
    model, grid = ou_setup
    state = FokkerPlanckState.initial(GridDensity.from_function(grid, gaussian(0, 1)), model)
    with pytest.raises(StepSizeError):
        fpe_step(state, model, 2 * model.max_stable_dt())


def test_equilibrium_fixed_point():
    grid = UniformGrid((-4.0,), (4.0,), (4096,))
    model = LangevinModel(double_well_force(1.0, 1.0), 1.0, grid)
    boltzmann = GridDensity.from_function(grid, lambda x: np.exp(-(x**4) / 4 + x**2 / 2))
    state = evolve(model, boltzmann, 1e-3)
    assert np.abs(state.density.values - boltzmann.values).max() < 1e-8
    assert state.entropy_rate < 1e-8
    nu, mask = local_mean_velocity(FokkerPlanckState.initial(boltzmann, model), model)
    core = np.abs(grid.centers[0]) < 2.5
    assert np.abs(nu[mask & core]).max() < 1e-5


def test_local_mean_velocity_vanishes_at_ou_equilibrium():
    grid = UniformGrid((-6.0,), (6.0,), (1200,))
    model = LangevinModel(ou_force(2.0), 0.5, grid)
    state = FokkerPlanckState.initial(GridDensity.from_function(grid, gaussian(0.0, 0.25)), model)
    nu, mask = local_mean_velocity(state, model)
    assert mask[np.abs(grid.centers[0]) < 2.5].all()
    assert np.abs(nu).max() < 1e-6


def test_discrete_stationary_density_is_exact():
    grid = UniformGrid((-3.0,), (3.0,), (300,))
    model = LangevinModel(double_well_force(1.0, 2.0), 0.8, grid)
    eq = stationary_density(model)
    state = evolve(model, eq, 0.05)
    assert np.abs(state.density.values - eq.values).max() < 1e-12
    assert state.accumulated_entropy < 1e-20
    x = grid.centers[0]
    boltzmann = np.exp((-(x**4) / 4 + x**2) / 0.8)
    boltzmann /= boltzmann.sum() * grid.cell_volume
    assert np.abs(eq.values - boltzmann).max() < 1e-3
    with pytest.raises(ValueError):
        stationary_density(LangevinModel(ou_force(1.0), 1.0, UniformGrid((0, 0), (1, 1), (4, 4))))


def test_coarse_grid_rejected():
    with pytest.raises(ValueError, match="Peclet"):
        LangevinModel(double_well_force(1.0, 0.0), 1.0, UniformGrid((-5.0,), (5.0,), (96,)))


def test_ou_moments(ou_setup):
    model, grid = ou_setup
    state = FokkerPlanckState.initial(GridDensity.from_function(grid, gaussian(1.0, 0.25)), model)
    dt = 0.5 / math.ceil(0.5 / model.max_stable_dt())
    for t_mark in (0.5, 1.0, 1.5):
        while state.time < t_mark - 1e-9:
            state = fpe_step(state, model, dt)
        mean, cov = state.density.moments()
        assert mean[0] == pytest.approx(math.exp(-state.time), rel=1e-3)
        assert cov[0, 0] == pytest.approx(ou_var(state.time), rel=1e-3)


def test_pure_diffusion_variance():
    grid = UniformGrid((-10.0,), (10.0,), (512,))
    model = LangevinModel(zero_force(), 1.0, grid)
    state = evolve(model, GridDensity.from_function(grid, gaussian(0.0, 1.0)), 1.0)
    assert state.density.moments()[1][0, 0] == pytest.approx(3.0, rel=1e-3)


def test_mass_conserved_per_step():
    grid = UniformGrid((-3.0,), (3.0,), (200,))
    init = GridDensity.from_function(grid, gaussian(0.5, 0.3))
    for boundary, force in ((Boundary.REFLECTING, double_well_force(1.0, 2.0)), (Boundary.PERIODIC, polynomial_force([1.5]))):
        model = LangevinModel(force, 0.7, grid, boundary)
        state = FokkerPlanckState.initial(GridDensity(init.values, grid, boundary), model)
        for _ in range(200):
            before = state.mass_drift
            state = fpe_step(state, model, model.max_stable_dt())
            assert state.mass_drift - before <= 1e-10
        assert state.clipped_mass == 0.0


def test_local_mean_velocity_gaussian_diffusion():
    grid = UniformGrid((-10.0,), (10.0,), (1000,))
    model = LangevinModel(zero_force(), 1.0, grid)
    state = FokkerPlanckState.initial(GridDensity.from_function(grid, gaussian(0.5, 2.0)), model)
    nu, mask = local_mean_velocity(state, model)
    x = grid.centers[0]
    expected = (x - 0.5) * (2.0 / (2 * 2.0))
    core = mask & (np.abs(x - 0.5) < 6) & (np.abs(x - 0.5) > 0.1)
    assert np.allclose(nu[core, 0], expected[core], rtol=5e-3)


def test_entropy_rate_pure_diffusion_unit():
    grid = UniformGrid((-12.0,), (12.0,), (2048,))
    model = LangevinModel(zero_force(), 1.0, grid)
    state = FokkerPlanckState.initial(GridDensity.from_function(grid, gaussian(0.0, 1.0)), model)
    assert entropy_production_rate(state, model) == pytest.approx(1.0, rel=1e-4)
    nu, _ = local_mean_velocity(state, model)
    riemann = float(np.sum(nu[:, 0] ** 2 * state.density.values) * grid.cell_volume)
    assert riemann == pytest.approx(1.0, rel=1e-4)


def test_entropy_rate_decreases_during_relaxation(ou_setup):
    model, grid = ou_setup
    assert ou_rate(0.2) > ou_rate(0.8)
    early = evolve(model, GridDensity.from_function(grid, gaussian(0.0, 0.25)), 0.2)
    late = evolve(model, GridDensity.from_function(grid, gaussian(0.0, 0.25)), 0.8)
    assert early.entropy_rate == pytest.approx(ou_rate(0.2), rel=1e-3)
    assert late.entropy_rate == pytest.approx(ou_rate(0.8), rel=1e-3)
    assert early.entropy_rate > late.entropy_rate


def test_lambda_langevin():
    grid = UniformGrid((-1.0,), (1.0,), (10,))
    dens = GridDensity(np.full(10, 0.5), grid)
    assert lambda_langevin(FokkerPlanckState(dens, 1.7, 2 * 1.7**2)) == pytest.approx(1.0)
    with pytest.raises(ValueError):
        lambda_langevin(FokkerPlanckState(dens, 0.0, 0.0))


def test_fisher_grid_refinement_second_order():
    vals = []
    for n in (300, 600, 1200):
        grid = UniformGrid((-4.0,), (4.0,), (n,))
        model = LangevinModel(double_well_force(0.5, 1.0), 1.0, grid)
        state = FokkerPlanckState.initial(GridDensity.from_function(grid, gaussian(0.3, 0.2)), model)
        vals.append(fisher(state, model))
    assert (vals[0] - vals[1]) / (vals[1] - vals[2]) == pytest.approx(4.0, rel=0.1)


def test_ou_run(ou_setup):
    model, grid = ou_setup
    run = run_langevin_experiment(model, GridDensity.from_function(grid, gaussian(0.0, 0.25)), 1.0, model.max_stable_dt())
    assert run.report.passed
    assert run.report["speed_limit_entropy"].slack > 0.1
    assert run.report["wasserstein_comparison"].slack > 0.0
    # 512 cells: grid error in the entropy production is O(dx^2) ~ 1e-3
    assert run.table["lambda_la"][-1] == pytest.approx(OU_SIGMA_1 / 2, rel=3e-3)
    assert run.final.accumulated_entropy >= run.report.metadata["wasserstein_sq"]
    for idx in (0, len(run.table["t"]) // 2, -1):
        assert run.table["fisher"][idx] == pytest.approx(ou_fisher(run.table["t"][idx]), rel=1e-3)
    assert run.report.metadata["mass_drift"] < 1e-9
    assert run.report.metadata["tail_mass"] < 1e-12


def test_equilibrium_run_is_flat(ou_setup):
    model, grid = ou_setup
    run = run_langevin_experiment(model, stationary_density(model), 0.2, model.max_stable_dt())
    assert run.report.passed
    assert run.series.fisher_length < 1e-9
    assert run.series.bound_length < 1e-9
    assert run.report.metadata["distance"] < 1e-9
    for name in ("speed_limit_entropy", "fisher_length_ge_distance", "wasserstein_comparison"):
        assert abs(run.report[name].slack) < 1e-9


def test_pure_diffusion_wasserstein():
    grid = UniformGrid((-10.0,), (10.0,), (512,))
    model = LangevinModel(zero_force(), 1.0, grid)
    run = run_langevin_experiment(model, GridDensity.from_function(grid, gaussian(0.0, 0.5)), 1.0, model.max_stable_dt())
    assert run.report.passed
    w2 = run.report.metadata["wasserstein_sq"]
    assert w2 == pytest.approx((math.sqrt(2.5) - math.sqrt(0.5)) ** 2, rel=5e-3)
    # Sigma(1) = ln(5)/2 for a spreading Gaussian with initial variance 1/2
    assert run.final.accumulated_entropy == pytest.approx(math.log(5) / 2, rel=2e-3)
    assert run.report["wasserstein_comparison"].slack > 0
    # the time integral of the accumulated entropy is smaller than W^2 / (D tau) here
    assert run.report.metadata["entropy_time_integral"] < w2


def test_two_dimensional_rotational_run():
    grid = UniformGrid((-4.0, -4.0), (4.0, 4.0), (60, 60))
    model = LangevinModel(rotational_force(1.0, 2.0), 1.0, grid)
    init = GridDensity.from_function(grid, lambda x, y: np.exp(-((x - 1) ** 2 + y**2) / 0.8))
    run = run_langevin_experiment(model, init, 0.5, model.max_stable_dt())
    assert run.report.passed
    assert "wasserstein_comparison" not in [c.name for c in run.report.checks]
    assert run.final.entropy_rate > 0


@settings(max_examples=10, deadline=None)
@given(st.floats(0.3, 2.0), st.floats(0.0, 2.0), st.floats(-1.0, 1.0), st.floats(0.1, 1.5))
def test_second_law_and_pointwise_bound(a, b, mu, var):
    grid = UniformGrid((-2.5,), (2.5,), (128,))
    model = LangevinModel(double_well_force(a, b), 1.0, grid)
    run = run_langevin_experiment(model, GridDensity.from_function(grid, gaussian(mu, var)), 0.3, model.max_stable_dt())
    assert np.all(np.diff(run.table["sigma"]) >= 0)
    assert run.report["fisher_le_lambda_la"].passed
    assert run.report.passed


def test_path_fisher_errors(ou_setup):
    model, grid = ou_setup
    init = GridDensity.from_function(grid, gaussian(0.0, 0.25))
    with pytest.raises(ValueError, match="trajectories"):
        path_fisher_mc(model, init, 1.0, 1e-2, 10, 0)
    other = UniformGrid((-8.0,), (8.0,), (256,))
    with pytest.raises(ValueError, match="grids"):
        path_fisher_mc(model, GridDensity.from_function(other, gaussian(0.0, 0.25)), 1.0, 1e-2, 1000, 0)


def test_path_fisher_equilibrium_is_zero(ou_setup):
    model, grid = ou_setup
    est = path_fisher_mc(model, GridDensity.from_function(grid, gaussian(0.0, 1.0)), 0.5, 1e-2, 2000, 1)
    assert est.estimate < 1e-8


def test_path_fisher_deterministic_and_scaling(ou_setup):
    model, grid = ou_setup
    init = GridDensity.from_function(grid, gaussian(0.0, 0.25))
    a = path_fisher_mc(model, init, 1.0, 1e-2, 12_000, 5)
    b = path_fisher_mc(model, init, 1.0, 1e-2, 12_000, 5)
    assert np.array_equal(a.scores, b.scores)
    c = path_fisher_mc(model, init, 1.0, 1e-2, 24_000, 5)
    assert c.std_error / a.std_error == pytest.approx(1 / math.sqrt(2), rel=0.2)
    assert c.std_error > 0
    # the first block of trajectories does not depend on how many follow
    assert np.array_equal(a.scores[:10_000], c.scores[:10_000])


def test_path_fisher_matches_half_entropy(ou_setup):
    model, grid = ou_setup
    est = path_fisher_mc(model, GridDensity.from_function(grid, gaussian(0.0, 0.25)), 1.0, 2e-3, 20_000, 11)
    assert abs(est.estimate - OU_SIGMA_1 / 2) < 3 * est.std_error
    assert est.temporal_fisher <= est.estimate + 3 * est.std_error
