import math

import numpy as np
import pytest

from ouchange.asymptotics import simulate_bridge_sup
from ouchange.errors import DomainError, GridTooCoarse, SigmaNonpositive, WindowInvalid
from ouchange.inference import (
    CandidateGrid,
    glr_curve,
    glr_from_loglik,
    loglik,
    mle,
    run_test,
)
from ouchange.model import DriftParams, ModelSpec, fourier_basis, q_limit
from ouchange.simulate import ChangeSpec, simulate_exact, simulate_with_change
from ouchange.suffstats import accumulate, difference, prefix_stats

MODEL = ModelSpec(fourier_basis(2), DriftParams((1.0, 0.5), 1.0), 0.2)


@pytest.fixture(scope="module")
def null_path():
    return simulate_exact(MODEL, 200.0, 0.01, seed=5)


def test_mle_recovers_parameters_on_long_path():
    T = 2000.0
    path = simulate_exact(MODEL, T, 0.01, seed=1)
    fit = mle(accumulate(path, MODEL.basis), MODEL.sigma)
    # asymptotic covariance sigma^2 (T q_limit)^{-1}
    sd = MODEL.sigma * np.sqrt(np.diag(np.linalg.inv(q_limit(MODEL))) / T)
    assert np.all(np.abs(fit.theta_hat - MODEL.theta.vector) < 4 * sd)
    assert not fit.alpha_nonpositive
    assert fit.params.alpha == fit.theta_hat[-1]


def test_loglik_is_maximised_at_mle(null_path):
    S = accumulate(null_path, MODEL.basis)
    fit = mle(S, 0.2)
    rng = np.random.default_rng(0)
    for _ in range(20):
        other = fit.theta_hat + 0.05 * rng.standard_normal(3)
        assert loglik(S, other, 0.2) < fit.loglik
    assert loglik(S, DriftParams.from_vector(fit.theta_hat), 0.2) == pytest.approx(fit.loglik, rel=1e-14)


def test_loglik_closed_form():
    from ouchange.suffstats import SuffStats

    S = SuffStats(np.array([[2.0, 0.5], [0.5, 1.0]]), np.array([1.0, -1.0]), 0.0, 1.0, 10)
    theta = np.array([0.3, 0.7])
    expect = (0.3 - 0.7 - 0.5 * (2 * 0.09 + 2 * 0.5 * 0.21 + 0.49)) / 4.0
    assert loglik(S, theta, 2.0) == pytest.approx(expect, rel=1e-14)
    with pytest.raises(DomainError):
        loglik(S, [1.0], 1.0)
    with pytest.raises(SigmaNonpositive):
        loglik(S, theta, 0.0)


def test_glr_nonnegative_and_matches_loglik_form(null_path):
    curve = glr_curve(null_path, MODEL.basis, 0.2, "full")
    assert curve.values.size > 400
    assert np.all(curve.values >= -1e-8)
    full = accumulate(null_path, MODEL.basis)
    prefix = prefix_stats(null_path, MODEL.basis, curve.indices[::37])
    for j in range(prefix.indices.size - 1):
        pre = prefix.stats(j)
        direct = glr_from_loglik(full, pre, difference(full, pre), 0.2)
        got = curve.values[np.searchsorted(curve.indices, prefix.indices[j])]
        assert got == pytest.approx(direct, rel=1e-8, abs=1e-10)


def test_glr_scales_with_inverse_sigma_squared(null_path):
    a = glr_curve(null_path, MODEL.basis, 0.2)
    b = glr_curve(null_path, MODEL.basis, 0.4)
    np.testing.assert_allclose(a.values, 4 * b.values, rtol=1e-12)
    assert a.s_hat == b.s_hat


def test_glr_window_restricts_candidates(null_path):
    curve = glr_curve(null_path, MODEL.basis, 0.2, "window", (0.3, 0.6))
    assert curve.s.min() >= 0.3 - 1e-12 and curve.s.max() <= 0.6 + 1e-12
    assert curve.window == (0.3, 0.6)
    assert curve.sup == curve.values.max()
    assert curve.at(curve.s_hat) == curve.sup
    with pytest.raises(DomainError):
        curve.at(0.123456)


def test_grid_include_and_stride(null_path):
    curve = glr_curve(null_path, MODEL.basis, 0.2, "window", grid=CandidateGrid(stride=1000, include=(0.5123,)))
    assert 0.5123 in np.round(curve.s, 6)
    assert np.all(np.isin(np.round(curve.s, 6), [0.1, 0.15, 0.2, 0.25, 0.3, 0.35, 0.4, 0.45, 0.5, 0.5123,
                                                 0.55, 0.6, 0.65, 0.7, 0.75, 0.8, 0.85, 0.9]))


def test_short_segments_are_skipped():
    path = simulate_exact(MODEL, 20.0, 0.01, seed=2)
    curve = glr_curve(path, MODEL.basis, 0.2, "full", grid=CandidateGrid(stride=50))
    assert curve.s.min() >= 1 / 20 - 1e-12
    assert curve.s.max() <= 19 / 20 + 1e-12
    assert any(reason == "segment-too-short" for _, reason in curve.skipped)


def test_too_few_candidates():
    path = simulate_exact(MODEL, 2.01, 0.01, seed=2)
    with pytest.raises(GridTooCoarse):
        glr_curve(path, MODEL.basis, 0.2, "full")


@pytest.mark.parametrize("window", [(0.0, 0.5), (0.6, 0.4), (0.2, 1.0), (0.5, 0.5)])
def test_invalid_window(null_path, window):
    with pytest.raises(WindowInvalid):
        glr_curve(null_path, MODEL.basis, 0.2, "window", window)


def test_bad_mode_and_sigma(null_path):
    with pytest.raises(DomainError):
        glr_curve(null_path, MODEL.basis, 0.2, "partial")
    with pytest.raises(SigmaNonpositive):
        glr_curve(null_path, MODEL.basis, -1.0)


def test_change_location_is_found():
    post = DriftParams((1.0 + 5 * 0.2 / math.sqrt(2), 0.5), 1.0)
    change = ChangeSpec(MODEL.theta, post, 0.4)
    path = simulate_with_change(MODEL, change, 200.0, 0.01, seed=8)
    curve = glr_curve(path, MODEL.basis, 0.2)
    assert abs(curve.s_hat - 0.4) < 0.05
    assert curve.sup > 30


@pytest.fixture(scope="module")
def table():
    return simulate_bridge_sup(2, (0.1, 0.9), m=500, reps=2000, seed=3, levels=(0.95,))


def test_run_test_report(null_path, table):
    rep = run_test(null_path, MODEL.basis, 0.2, table=table)
    assert rep.cv_source == "bridge-MC"
    assert rep.critical_value == table.critical_value(0.05)
    assert rep.reject == (rep.statistic > rep.critical_value)
    assert rep.tau_hat == pytest.approx(rep.s_hat * 200.0)
    assert not rep.sigma_estimated
    d = rep.to_dict()
    for key in ("statistic", "critical_value", "reject", "s_hat", "tau_hat", "theta_pre", "theta_post", "cv_source"):
        assert key in d
    assert d["cv_provenance"]["reps"] == 2000


def test_run_test_level_one_always_rejects(null_path):
    rep = run_test(null_path, MODEL.basis, 0.2, level=1.0)
    assert rep.critical_value == -math.inf and rep.reject


def test_run_test_estimated_sigma(null_path, table):
    rep = run_test(null_path, MODEL.basis, "estimate", table=table)
    assert rep.sigma_estimated
    assert rep.sigma_used == pytest.approx(0.2, rel=0.02)
    with pytest.raises(DomainError):
        run_test(null_path, MODEL.basis, "guess", table=table)


def test_run_test_full_mode_uses_gumbel(null_path):
    rep = run_test(null_path, MODEL.basis, 0.2, mode="full")
    assert rep.cv_source == "gumbel"
    assert rep.window is None
    assert rep.cv_provenance["T_over_nu"] == 200.0


def test_run_test_table_mismatch(null_path, table):
    with pytest.raises(DomainError):
        run_test(null_path, MODEL.basis, 0.2, window=(0.2, 0.8), table=table)
    with pytest.raises(DomainError):
        run_test(null_path, MODEL.basis, 0.2, level=0.0, table=table)
