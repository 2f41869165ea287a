import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ouchange.errors import DomainError, SegmentError, SingularStats
from ouchange.inference import mle
from ouchange.model import DriftParams, ModelSpec, fourier_basis
from ouchange.simulate import SamplePath, make_grid, simulate_exact
from ouchange.suffstats import (
    SuffStats,
    accumulate,
    combine,
    difference,
    estimate_sigma_sq,
    prefix_stats,
)


def line_path(T=10.0, dt=1e-4, nu=1.0, slope=1.0, x0=0.0):
    t = make_grid(T, dt)
    return SamplePath(t, x0 + slope * t, nu, dt)


@pytest.fixture(scope="module")
def ou_path():
    m = ModelSpec(fourier_basis(3), DriftParams((1.0, 0.5, -0.4), 1.2), 0.4)
    return simulate_exact(m, 60.0, 0.01, seed=21)


def test_zero_path_statistics():
    t = make_grid(5.0, 0.01)
    path = SamplePath(t, np.zeros_like(t), 1.0, 0.01)
    S = accumulate(path, fourier_basis(2))
    np.testing.assert_array_equal(S.Rt, 0.0)
    np.testing.assert_array_equal(S.Q[-1], 0.0)
    np.testing.assert_allclose(S.Q[:2, :2], 5.0 * np.eye(2), atol=1e-12)
    with pytest.raises(SingularStats):
        mle(S)


def test_linear_path_statistics_closed_form():
    T, dt = 10.0, 1e-4
    S = accumulate(line_path(T, dt), fourier_basis(1), rule="left")
    n = round(T / dt)
    i = np.arange(n)
    # left sums of 1, -t, t^2 and of dX = dt
    expect_Q = np.array([[T, -dt * np.sum(i * dt)], [-dt * np.sum(i * dt), dt * np.sum((i * dt) ** 2)]])
    np.testing.assert_allclose(S.Q, expect_Q, rtol=1e-12)
    np.testing.assert_allclose(S.Rt, expect_Q[:, 0], rtol=1e-12)
    assert S.Q[0, 1] == pytest.approx(-T**2 / 2, rel=1e-4)
    assert S.Q[1, 1] == pytest.approx(T**3 / 3, rel=1e-4)


def test_linear_path_extrapolated_rule_closed_form():
    T, dt = 10.0, 1e-4
    S = accumulate(line_path(T, dt), fourier_basis(1), rule="extrapolated")
    t = np.arange(round(T / dt)) * dt
    # integrand of the -X row is -(t_i + dt/2) except at the first step
    w = -(t + dt / 2)
    w[0] = 0.0
    np.testing.assert_allclose(S.Rt, [T, dt * w.sum()], rtol=1e-12)
    left = accumulate(line_path(T, dt), fourier_basis(1), rule="left")
    np.testing.assert_array_equal(S.Q, left.Q)


@pytest.mark.parametrize("rule", ["left", "extrapolated"])
def test_linear_path_estimate_is_unit_drift_without_reversion(rule):
    fit = mle(accumulate(line_path(), fourier_basis(1), rule=rule))
    np.testing.assert_allclose(fit.theta_hat, [1.0, 0.0], atol=1e-3)
    assert fit.alpha_nonpositive


def test_unknown_rule(ou_path):
    with pytest.raises(DomainError):
        accumulate(ou_path, fourier_basis(3), rule="midpoint")
    with pytest.raises(DomainError):
        prefix_stats(ou_path, fourier_basis(3), [10], rule="trapezoid")


def test_rules_cannot_be_mixed(ou_path):
    basis = fourier_basis(3)
    a = accumulate(ou_path, basis, (0.0, 10.0), rule="left")
    b = accumulate(ou_path, basis, (10.0, 20.0), rule="extrapolated")
    with pytest.raises(SegmentError):
        combine(a, b)
    with pytest.raises(SegmentError):
        difference(accumulate(ou_path, basis, (0.0, 20.0)), a)


def test_extrapolated_rule_tracks_fine_grid_integral():
    # R~ on a 10x finer grid stands in for the continuous integral. The coarse
    # left sum of -int X dX is off by (dt/2) int (h'^2 - alpha sigma^2 / 2) dt,
    # with h the periodic mean; the extrapolated sum is unbiased to first order.
    mu1, alpha, sigma, dt, T = 0.5, 1.0, 0.2, 0.01, 50.0
    m = ModelSpec(fourier_basis(2), DriftParams((1.0, mu1), alpha), sigma)
    w = 2 * math.pi
    mean_h_prime_sq = (w * mu1) ** 2 / (alpha**2 + w**2)  # time average of h'(t)^2
    predicted = 0.5 * dt * T * (mean_h_prime_sq - alpha * sigma**2 / 2)
    err = {"left": [], "extrapolated": []}
    for seed in range(60):
        fine = simulate_exact(m, T, dt / 10, seed=seed)
        coarse = SamplePath(fine.times[::10], fine.values[::10], 1.0, dt)
        ref = accumulate(fine, m.basis).Rt[-1]
        for rule in err:
            err[rule].append(accumulate(coarse, m.basis, rule=rule).Rt[-1] - ref)
    left, ext = np.array(err["left"]), np.array(err["extrapolated"])
    se = ext.std(ddof=1) / math.sqrt(ext.size)
    assert abs(left.mean() - predicted) < 4 * left.std(ddof=1) / math.sqrt(left.size)
    assert abs(ext.mean()) < 4 * se
    assert abs(ext.mean()) < 0.1 * predicted + 4 * se


def test_constant_path_is_singular():
    t = make_grid(10.0, 0.01)
    path = SamplePath(t, np.full_like(t, 2.5), 1.0, 0.01)
    with pytest.raises(SingularStats):
        mle(accumulate(path, fourier_basis(1)))


@pytest.mark.parametrize("rule", ["left", "extrapolated"])
@pytest.mark.parametrize("split", [17.0, 17.01])
def test_additivity_over_segments(ou_path, rule, split):
    basis = fourier_basis(3)
    whole = accumulate(ou_path, basis, rule=rule)
    a = accumulate(ou_path, basis, (0.0, split), rule)
    b = accumulate(ou_path, basis, (split, 60.0), rule)
    ab = combine(a, b)
    np.testing.assert_allclose(ab.Q, whole.Q, rtol=1e-12, atol=1e-12)
    np.testing.assert_allclose(ab.Rt, whole.Rt, rtol=1e-12, atol=1e-12)
    assert (ab.t_a, ab.t_b, ab.n_points) == (0.0, 60.0, whole.n_points)
    d = difference(whole, a)
    np.testing.assert_allclose(d.Q, b.Q, rtol=1e-10, atol=1e-10)
    np.testing.assert_allclose(d.Rt, b.Rt, rtol=1e-10, atol=1e-10)


def test_combine_rules(ou_path):
    basis = fourier_basis(3)
    a = accumulate(ou_path, basis, (0.0, 10.0))
    c = accumulate(ou_path, basis, (20.0, 30.0))
    assert combine(SuffStats.empty(4), a) is a
    assert combine(a, SuffStats.empty(4, 10.0)) is a
    with pytest.raises(SegmentError):
        combine(a, c)
    with pytest.raises(SegmentError):
        combine(a, SuffStats(np.eye(2), np.zeros(2), 10.0, 11.0, 5))


def test_segment_validation(ou_path):
    basis = fourier_basis(3)
    with pytest.raises(SegmentError):
        accumulate(ou_path, basis, (0.0, 10.005))
    with pytest.raises(SegmentError):
        accumulate(ou_path, basis, (10.0, 10.0))
    with pytest.raises(DomainError):
        accumulate(ou_path, fourier_basis(3, period=2.0))


def test_prefix_matches_direct_accumulation(ou_path):
    basis = fourier_basis(3)
    idx = [100, 1500, 3000, 5999]
    pre = prefix_stats(ou_path, basis, idx)
    assert pre.indices[-1] == ou_path.n_steps
    for j, k in enumerate(idx):
        direct = accumulate(ou_path, basis, (0.0, ou_path.times[k]))
        np.testing.assert_allclose(pre.Q[j], direct.Q, rtol=0, atol=1e-12 * (1 + np.abs(direct.Q).max()))
        np.testing.assert_allclose(pre.Rt[j], direct.Rt, rtol=0, atol=1e-12 * (1 + np.abs(direct.Rt).max()))
    whole = accumulate(ou_path, basis)
    np.testing.assert_allclose(pre.total.Q, whole.Q, rtol=0, atol=1e-12 * np.abs(whole.Q).max())
    with pytest.raises(SegmentError):
        prefix_stats(ou_path, basis, [30, 20])


def test_ito_identity_for_reversion_component(ou_path):
    # -int X dX with left sums equals (X_0^2 - X_T^2 + sum (dX)^2) / 2 exactly
    S = accumulate(ou_path, fourier_basis(3), rule="left")
    x = ou_path.values
    identity = 0.5 * (x[0] ** 2 - x[-1] ** 2 + np.sum(np.diff(x) ** 2))
    assert abs(S.Rt[-1] - identity) <= 1e-10 * abs(identity)


def test_basis_block_close_to_length_times_identity(ou_path):
    S = accumulate(ou_path, fourier_basis(3), (10.0, 30.0))
    np.testing.assert_allclose(S.Q[:3, :3], 20.0 * np.eye(3), atol=1e-10)


@settings(max_examples=25, deadline=None)
@given(
    seed=st.integers(0, 2**32 - 1),
    p=st.integers(1, 5),
    a=st.integers(0, 300),
    length=st.integers(1, 300),
)
def test_Q_is_symmetric_psd(seed, p, a, length):
    m = ModelSpec(fourier_basis(p), DriftParams(tuple([0.5] * p), 0.8), 1.0)
    path = simulate_exact(m, 6.0, 0.01, seed=seed)
    b = min(a + length, 600)
    if b <= a:
        a = b - 1
    S = accumulate(path, m.basis, (path.times[a], path.times[b]))
    assert np.array_equal(S.Q, S.Q.T)
    assert np.linalg.eigvalsh(S.Q)[0] >= -1e-12 * max(1.0, np.abs(S.Q).max())


def test_sigma_estimate_on_deterministic_paths():
    assert estimate_sigma_sq(line_path(T=1.0, dt=0.01)) == pytest.approx(0.01, rel=1e-12)
    t = make_grid(3.0, 0.5)
    assert estimate_sigma_sq(SamplePath(t, np.zeros_like(t), 1.0, 0.5)) == 0.0


def test_sigma_estimate_is_consistent():
    sigma = 0.7
    m = ModelSpec(fourier_basis(2), DriftParams((1.0, 0.5), 1.0), sigma)
    est = [estimate_sigma_sq(simulate_exact(m, 100.0, 1e-3, seed=s)) for s in range(20)]
    assert abs(np.mean(est) / sigma**2 - 1) < 0.01
    assert math.isfinite(np.std(est))
