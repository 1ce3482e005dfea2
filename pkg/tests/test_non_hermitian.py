import math

import numpy as np
import pytest
from helpers import random_density, random_hermitian
from hypothesis import given, settings
from hypothesis import strategies as st

from tfi.non_hermitian import (
    NH_PRESETS,
    NonHermitianModel,
    NormalizedState,
    StepSizeError,
    TraceCollapseError,
    decompose,
    diag_decay,
    eigen_rates_nh,
    evolve_normalized,
    gamma_std,
    lambda_nh,
    nh_fisher,
    normalized_rhs,
    pt_like,
    run_nh_experiment,
)
from tfi.quantum import DensityOperator


def _closed_q(g, t):
    e = np.exp(-2.0 * g * np.asarray(t))
    return e / (1.0 + e)


def test_decompose_rejects_non_square():
    with pytest.raises(ValueError):
        decompose(np.zeros((2, 3)))


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 5), st.integers(0, 2**32 - 1))
def test_random_generator_reconstructs(dim, seed):
    rng = np.random.default_rng(seed)
    k = rng.normal(size=(dim, dim)) + 1j * rng.normal(size=(dim, dim))
    model = NonHermitianModel(k)
    h, gamma = model.hamiltonian, model.dissipator
    assert np.abs(h - h.conj().T).max() <= 1e-12
    assert np.abs(gamma - gamma.conj().T).max() <= 1e-12
    assert np.abs(h - 1j * gamma - k).max() < 1e-14


def test_from_parts_roundtrip():
    rng = np.random.default_rng(3)
    h, g = random_hermitian(3, rng), random_hermitian(3, rng)
    model = NonHermitianModel.from_parts(h, g)
    assert np.allclose(model.hamiltonian, h, atol=1e-14)
    assert np.allclose(model.dissipator, g, atol=1e-14)


def test_step_guard():
    model = diag_decay(10.0)
    state = NormalizedState(DensityOperator.maximally_mixed(2))
    with pytest.raises(StepSizeError):
        evolve_normalized(state, model, 0.01)
    evolve_normalized(state, model, 0.005)


def test_trace_collapse_aborts():
    model = diag_decay(1.0)
    # population sits entirely on the decaying level, so Tr rho = exp(-2t)
    state = NormalizedState(DensityOperator.pure([0.0, 1.0]))
    with pytest.raises(TraceCollapseError):
        for _ in range(400):
            state = evolve_normalized(state, model, 0.05)


def test_hermitian_generator_keeps_spectrum():
    rng = np.random.default_rng(11)
    h = random_hermitian(3, rng)
    model = NonHermitianModel(h)
    rho0 = DensityOperator(random_density(3, rng))
    run = run_nh_experiment(model, rho0, 1.0, 1e-3)
    assert np.abs(run.final.rho_hat.eigenvalues - rho0.eigenvalues).max() < 1e-10
    assert max(run.table["fisher"]) <= 1e-10
    assert max(run.table["lambda_nh"]) <= 1e-24
    assert run.final.raw_trace == pytest.approx(1.0, abs=1e-14)


def test_diag_decay_population():
    run = run_nh_experiment(diag_decay(1.0), np.eye(2) / 2, 1.0, 1e-3)
    p = run.final.rho_hat.eigenvalues
    q = math.exp(-2.0) / (1.0 + math.exp(-2.0))
    assert abs(p[0] - q) < 1e-8
    assert abs(p[1] - (1.0 - q)) < 1e-8
    # unnormalized trace: (1 + e^{-2gt}) / 2
    assert run.final.raw_trace == pytest.approx((1.0 + math.exp(-2.0)) / 2.0, rel=1e-10)


def test_diag_decay_saturates():
    g, tau = 1.0, 1.0
    run = run_nh_experiment(diag_decay(g), np.eye(2) / 2, tau, 1e-3)
    t = np.array(run.table["t"])
    q = _closed_q(g, t)
    assert np.abs(np.array(run.table["fisher"]) - 4 * g**2 * q * (1 - q)).max() < 1e-6
    assert np.allclose(run.table["fisher"], run.table["lambda_nh"], rtol=0, atol=1e-10)
    closed = math.pi / 4 - math.asin(math.sqrt(q[-1]))
    meta = run.report.metadata
    assert meta["residual_distance"] == pytest.approx(closed, abs=1e-10)
    assert meta["dissipator_integral"] == pytest.approx(closed, abs=1e-4)
    assert run.report["speed_limit_dissipator"].passed
    assert abs(run.report["speed_limit_dissipator"].slack) < 1e-4
    assert meta["degenerate_steps"] == 1
    assert run.report.passed


@pytest.mark.parametrize("dt", [2e-3, 1e-3])
def test_pt_like_positive_slack(dt):
    run = run_nh_experiment(pt_like(1.0, 0.8), np.eye(2) / 2, 3.0, dt)
    assert run.report.passed
    assert run.report["speed_limit_dissipator"].slack > 0.5
    assert run.report["fisher_length_ge_residual"].slack > 0.1
    assert run.report.metadata["trace_drift"] < 1e-10


def test_pt_like_dt_independent():
    a = run_nh_experiment(pt_like(1.0, 0.8), np.eye(2) / 2, 3.0, 2e-3)
    b = run_nh_experiment(pt_like(1.0, 0.8), np.eye(2) / 2, 3.0, 1e-3)
    assert a.report.metadata["residual_distance"] == pytest.approx(b.report.metadata["residual_distance"], abs=1e-9)


def test_pure_state_has_no_spectral_motion():
    run = run_nh_experiment(pt_like(1.0, 0.8), DensityOperator.pure([1.0, 0.0]), 2.0, 1e-3)
    assert max(run.table["fisher"]) < 1e-9
    assert run.report.passed


def test_rates_match_finite_difference():
    model = pt_like(1.0, 0.8)
    rng = np.random.default_rng(5)
    state = NormalizedState(DensityOperator(random_density(2, rng)))
    rates = eigen_rates_nh(state, model)
    assert math.fsum(rates) == pytest.approx(0.0, abs=1e-14)

    def fd_error(h):
        plus = evolve_normalized(state, model, h).rho_hat.eigenvalues
        minus = evolve_normalized(state, model, -h).rho_hat.eigenvalues
        return np.abs((plus - minus) / (2 * h) - rates).max()

    e1, e2 = fd_error(1e-2), fd_error(5e-3)
    assert e1 < 1e-3
    assert e1 / e2 == pytest.approx(4.0, rel=0.05)


def test_fisher_matches_rate_formula():
    model = pt_like(0.7, 1.3)
    rng = np.random.default_rng(8)
    state = NormalizedState(DensityOperator(random_density(2, rng)))
    rates = eigen_rates_nh(state, model)
    p = state.rho_hat.eigenvalues
    assert nh_fisher(state, model).value == pytest.approx(float(np.sum(rates**2 / p)), rel=1e-12)
    assert nh_fisher(state, model).value <= lambda_nh(state, model) * (1 + 1e-12)


def test_rhs_is_traceless_and_hermitian():
    rng = np.random.default_rng(2)
    k = rng.normal(size=(3, 3)) + 1j * rng.normal(size=(3, 3))
    model = NonHermitianModel(k)
    rho = random_density(3, rng)
    d = normalized_rhs(rho, model)
    assert abs(np.trace(d)) < 1e-13
    assert np.abs(d - d.conj().T).max() < 1e-13


@settings(max_examples=25, deadline=None)
@given(st.integers(2, 4), st.integers(0, 2**32 - 1))
def test_fisher_bounded_by_dissipator_variance(dim, seed):
    rng = np.random.default_rng(seed)
    model = NonHermitianModel.from_parts(random_hermitian(dim, rng), random_hermitian(dim, rng))
    state = NormalizedState(DensityOperator(random_density(dim, rng)))
    fi = nh_fisher(state, model).value
    lam = lambda_nh(state, model)
    assert fi <= lam * (1 + 1e-9) + 1e-12
    assert gamma_std(state, model) ** 2 * 4 == pytest.approx(lam)


def test_presets_registry():
    for name, (factory, params) in NH_PRESETS.items():
        model = factory(**{p: 0.5 for p in params})
        assert model.dim == 2


def test_bound_scale_breaks_saturated_limit():
    run = run_nh_experiment(diag_decay(1.0), np.eye(2) / 2, 1.0, 1e-3, bound_scale=0.5)
    assert not run.report["fisher_le_lambda_nh"].passed
    assert not run.report["speed_limit_dissipator"].passed
