import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from tfi.info_geometry import (
    BoundSeries,
    DiscreteDistribution,
    GridDensity,
    UniformGrid,
    VerificationReport,
    accumulate_lengths,
    bhattacharyya_arccos,
    bhattacharyya_arccos_grid,
    check_pointwise,
    check_speed_limit,
    tau_min,
    temporal_fisher_discrete,
    temporal_fisher_grid,
    wasserstein_1d,
)

# quadrature of (dp/dt)^2/p for the OU Gaussian at t=0.5 (k=1, D=1, var0=0.25)
OU_FISHER_T05 = 0.29038752581590344


def gaussian(mu, var):
    return lambda x: np.exp(-((x - mu) ** 2) / (2 * var)) / np.sqrt(2 * np.pi * var)


@pytest.fixture
def line():
    return UniformGrid((-12.0,), (12.0,), (4800,))


def test_distribution_validation():
    with pytest.raises(ValueError):
        DiscreteDistribution([0.5, 0.6])
    with pytest.raises(ValueError):
        DiscreteDistribution([1.1, -0.1])
    d = DiscreteDistribution.from_unnormalized([1.0, 3.0])
    assert d.probs.tolist() == [0.25, 0.75]
    assert d.dim == 2


def test_fisher_discrete_stationary():
    assert temporal_fisher_discrete(DiscreteDistribution([0.5, 0.5]), [0.0, 0.0]) == 0.0


def test_fisher_discrete_rabi_populations():
    g, t = 1.0, 0.3
    p = DiscreteDistribution([math.cos(g * t) ** 2, math.sin(g * t) ** 2])
    dp = [-g * math.sin(2 * g * t), g * math.sin(2 * g * t)]
    assert temporal_fisher_discrete(p, dp) == pytest.approx(4 * g**2, rel=1e-12)


def test_fisher_discrete_hand_value():
    p = DiscreteDistribution([0.25, 0.75])
    assert temporal_fisher_discrete(p, [0.1, -0.1]) == pytest.approx(0.01 / 0.25 + 0.01 / 0.75, rel=1e-14)


def test_fisher_discrete_errors():
    p = DiscreteDistribution([0.25, 0.75])
    with pytest.raises(ValueError, match="entries"):
        temporal_fisher_discrete(p, [0.1, -0.1, 0.0])
    with pytest.raises(ValueError, match="conserve"):
        temporal_fisher_discrete(p, [0.1, 0.1])


def test_fisher_discrete_floor_skips_empty_states():
    p = DiscreteDistribution([1.0, 0.0])
    assert temporal_fisher_discrete(p, [0.0, 0.0]) == 0.0


def test_fisher_grid_uniform_zero():
    grid = UniformGrid((0.0,), (1.0,), (50,))
    p = GridDensity(np.ones(50), grid)
    assert temporal_fisher_grid(p, np.zeros(50)) == 0.0


def test_fisher_grid_mean_drift(line):
    mu, var, v = 0.3, 0.8, 0.7
    p = GridDensity.from_function(line, gaussian(mu, var))
    x = line.centers[0]
    dp = p.values * (x - mu) * v / var
    assert temporal_fisher_grid(p, dp) == pytest.approx(v**2 / var, rel=1e-6)


def test_fisher_grid_ou_relaxation(line):
    t = 0.5
    var = 1 + (0.25 - 1) * math.exp(-2 * t)
    dvar = 1.5 * math.exp(-2 * t)
    p = GridDensity.from_function(line, gaussian(0.0, var))
    x = line.centers[0]
    dp = p.values * dvar * (x**2 / var - 1) / (2 * var)
    closed = dvar**2 / (2 * var**2)
    assert closed == pytest.approx(OU_FISHER_T05, rel=1e-12)
    assert temporal_fisher_grid(p, dp) == pytest.approx(OU_FISHER_T05, rel=1e-5)


def test_fisher_grid_shape_mismatch(line):
    p = GridDensity.from_function(line, gaussian(0, 1))
    with pytest.raises(ValueError):
        temporal_fisher_grid(p, np.zeros(10))


def test_bhattacharyya_examples():
    assert bhattacharyya_arccos([0.3, 0.7], [0.3, 0.7]) == 0.0
    assert bhattacharyya_arccos([1, 0], [0, 1]) == pytest.approx(math.pi / 2)
    assert bhattacharyya_arccos([1, 0], [0.5, 0.5]) == pytest.approx(math.pi / 4)
    with pytest.raises(ValueError):
        bhattacharyya_arccos([1, 0], [1, 0, 0])


def test_bhattacharyya_grid(line):
    p = GridDensity.from_function(line, gaussian(0.0, 1.0))
    assert bhattacharyya_arccos_grid(p, p) == 0.0
    m = 1.5
    q = GridDensity.from_function(line, gaussian(m, 1.0))
    # quadrature oracle: 0.7548396019890081
    assert bhattacharyya_arccos_grid(p, q) == pytest.approx(math.acos(0.7548396019890081), rel=1e-6)
    x = line.centers[0]
    a = GridDensity.from_values(line, (x < -1).astype(float))
    b = GridDensity.from_values(line, (x > 1).astype(float))
    assert bhattacharyya_arccos_grid(a, b) == pytest.approx(math.pi / 2)


def test_wasserstein_examples(line):
    p = GridDensity.from_function(line, gaussian(0.0, 1.0))
    assert wasserstein_1d(p, p) == pytest.approx(0.0, abs=1e-20)
    q = GridDensity.from_function(line, gaussian(1.5, 1.0))
    assert wasserstein_1d(p, q) == pytest.approx(2.25, rel=1e-5)
    x = line.centers[0]
    a = GridDensity.from_values(line, ((x > 0) & (x < 1)).astype(float))
    d = 0.75
    b = GridDensity.from_values(line, ((x > d) & (x < 1 + d)).astype(float))
    assert wasserstein_1d(a, b) == pytest.approx(d**2, rel=1e-10)


def test_wasserstein_gaussian_variance(line):
    p = GridDensity.from_function(line, gaussian(0.0, 0.25))
    q = GridDensity.from_function(line, gaussian(0.0, 1.0))
    assert wasserstein_1d(p, q) == pytest.approx((1.0 - 0.5) ** 2, rel=1e-5)


def test_wasserstein_rejects_2d():
    grid = UniformGrid((0, 0), (1, 1), (4, 4))
    p = GridDensity(np.ones((4, 4)), grid)
    with pytest.raises(ValueError):
        wasserstein_1d(p, p)


def test_accumulate_lengths():
    s = BoundSeries()
    accumulate_lengths(s, 0.0, 4.0, 9.0)
    assert s.fisher_length == 0.0 and s.bound_length == 0.0
    tau, c = math.pi / 4, 2.0
    for t in np.linspace(0, tau, 101)[1:]:
        accumulate_lengths(s, t, c**2, 9.0)
    assert s.fisher_length == pytest.approx(c * tau / 2, rel=1e-13)
    assert s.fisher_length == pytest.approx(math.pi / 4, rel=1e-13)
    assert s.bound_length == pytest.approx(3 * tau / 2, rel=1e-13)
    with pytest.raises(ValueError):
        accumulate_lengths(s, 0.1, 1.0, 1.0)


@given(st.lists(st.tuples(st.floats(0, 10), st.floats(0, 10)), min_size=2, max_size=40))
def test_lengths_monotone_and_ordered(pairs):
    s = BoundSeries()
    for k, (a, b) in enumerate(pairs):
        lo, hi = min(a, b), max(a, b)
        s.append(0.1 * k, lo, hi)
    assert np.all(np.diff(s.fisher_lengths) >= 0)
    assert np.all(np.diff(s.bound_lengths) >= 0)
    assert all(f <= b + 1e-15 for f, b in zip(s.fisher_lengths, s.bound_lengths))


def test_check_speed_limit():
    c = check_speed_limit(1.0, 0.5)
    assert c.passed and c.slack == 0.5
    assert not check_speed_limit(0.3, 0.31, tol=1e-6).passed
    assert not check_speed_limit(math.nan, 0.1).passed


def test_check_pointwise_reports_worst():
    c = check_pointwise("pw", [0, 1, 2], [1.0, 1.0, 1.0], [0.5, 1.0 + 1e-12, 0.2])
    assert c.passed and c.rhs == pytest.approx(1.0)
    c = check_pointwise("pw", [0, 1], [1.0, 1.0], [0.5, 1.1])
    assert not c.passed and "1 of 2" in c.note


def test_report_pass_flag():
    r = VerificationReport("x")
    r.add(check_speed_limit(1.0, 0.5, name="a"))
    assert r.passed
    r.add(check_speed_limit(0.0, 0.5, name="b"))
    assert not r.passed
    assert r["b"].slack == -0.5


def test_tau_min():
    assert tau_min(math.pi / 2, math.pi) == pytest.approx(1.0)
    assert tau_min(0.0, 2.0) == 0.0
    with pytest.raises(ValueError):
        tau_min(1.0, 0.0)


simplex = arrays(np.float64, 5, elements=st.floats(1e-3, 1.0)).map(lambda w: w / w.sum())


@given(simplex, simplex)
def test_bhattacharyya_symmetric_bounded(p, q):
    d = bhattacharyya_arccos(p, q)
    assert d == pytest.approx(bhattacharyya_arccos(q, p), abs=1e-15)
    assert 0.0 <= d <= math.pi / 2
    assert bhattacharyya_arccos(p, p) < 1e-7


@settings(max_examples=25, deadline=None)
@given(st.lists(st.tuples(st.floats(-3, 3), st.floats(0.2, 2.0)), min_size=3, max_size=3))
def test_wasserstein_triangle(params):
    grid = UniformGrid((-15.0,), (15.0,), (600,))
    dens = [GridDensity.from_function(grid, gaussian(m, s**2)) for m, s in params]
    d = [[math.sqrt(wasserstein_1d(a, b)) for b in dens] for a in dens]
    for i in range(3):
        for j in range(3):
            assert d[i][j] == pytest.approx(d[j][i], abs=1e-9)
            for k in range(3):
                assert d[i][j] <= d[i][k] + d[k][j] + 1e-9
