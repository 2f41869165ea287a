import dataclasses
import math

import numpy as np
import pytest

from ouchange.errors import DomainError
from ouchange.experiments import (
    ExperimentConfig,
    Scenario,
    binomial_ci,
    rate_entry,
    run_null_study,
    run_oracle_study,
    run_power_study,
)
from ouchange.model import DriftParams, ModelSpec, fourier_basis

MODEL = ModelSpec(fourier_basis(2), DriftParams((1.0, 0.5), 1.0), 0.2)


def small(**kw):
    base = dict(model=MODEL, horizons=(40.0,), dt=0.02, reps=24, bridge_m=200, bridge_reps=500, seed=11)
    base.update(kw)
    return ExperimentConfig(**base)


def test_clopper_pearson():
    lo, hi = binomial_ci(0, 10, 0.95)
    assert lo == 0.0 and hi == pytest.approx(1 - 0.025 ** (1 / 10), rel=1e-10)
    lo, hi = binomial_ci(10, 10, 0.95)
    assert hi == 1.0 and lo == pytest.approx(0.025 ** (1 / 10), rel=1e-10)
    lo, hi = binomial_ci(25, 500, 0.99)
    assert lo < 0.05 < hi
    e = rate_entry(np.array([True, False, False, True]), 0.99)
    assert e["rate"] == 0.5 and e["count"] == 2 and e["ci"][0] <= 0.5 <= e["ci"][1]


def test_level_one_rejects_everything():
    res = run_null_study(small(levels=(0.05, 1.0)))
    (cell,) = res.cells
    by_level = {r["level"]: r for r in cell["rejection"]}
    assert by_level[1.0]["rate"] == 1.0
    assert 0.0 <= by_level[0.05]["rate"] <= 1.0
    assert by_level[0.05]["ci"][0] <= by_level[0.05]["rate"] <= by_level[0.05]["ci"][1]
    assert "ks_fixed_s_chi2" in cell and "ks_sup_bridge" in cell


def test_null_study_deterministic_and_thread_independent():
    a = run_null_study(small()).to_dict()
    b = run_null_study(small()).to_dict()
    c = run_null_study(small(threads=3)).to_dict()
    assert a == b == c
    d = run_null_study(small(seed=12)).to_dict()
    assert d["cells"] != a["cells"]
    assert "timing" not in a
    assert "timing" in run_null_study(small()).to_dict(include_timing=True)


def test_null_study_checks_from_thresholds():
    res = run_null_study(small(thresholds={"size_band": [0.0, 1.0], "ks_fixed_s": 1.0}))
    assert res.checks and all(res.checks.values())


def test_full_mode_null_study():
    res = run_null_study(small(mode="full", horizons=(40.0,)))
    assert res.cells[0]["rejection"][0]["cv_source"] == "gumbel"
    assert "ks_sup_bridge" not in res.cells[0]


def test_null_study_rejects_scenarios():
    with pytest.raises(DomainError):
        run_null_study(small(scenarios=(Scenario(1.0),)))


def test_power_study_large_jump_and_monotonicity():
    cfg = small(scenarios=(Scenario(0.0), Scenario(8.0)), thresholds={"min_power": {"magnitude": 8.0, "rate": 0.5}})
    res = run_power_study(cfg)
    rates = {c["magnitude"]: c["rejection"][0]["rate"] for c in res.cells}
    assert rates[8.0] > rates[0.0]
    assert all(res.checks.values())
    assert res.summary["monotone"][0]["magnitudes"] == [0.0, 8.0]
    big = next(c for c in res.cells if c["magnitude"] == 8.0)
    assert big["s_hat_median_abs_error"] < 0.1


def test_power_study_needs_scenarios():
    with pytest.raises(DomainError):
        run_power_study(small())
    with pytest.raises(DomainError):
        run_power_study(small(scenarios=(Scenario(1.0, component=5),)))


def test_oracle_study():
    cfg = small(horizons=(20.0, 80.0), reps=12, thresholds={"paired_decrease": 0.5})
    res = run_oracle_study(cfg)
    assert [c["T"] for c in res.cells] == [20.0, 80.0]
    assert res.cells[1]["q_deviation_mean"] < res.cells[0]["q_deviation_mean"]
    assert res.cells[1]["theta_rmse_total"] < res.cells[0]["theta_rmse_total"]
    assert math.isfinite(res.summary["rmse_loglog_slope"])
    assert res.checks["paired_decrease"]
    assert run_oracle_study(dataclasses.replace(cfg, threads=2)).to_dict() == res.to_dict()


def test_config_validation():
    with pytest.raises(DomainError):
        small(reps=0)
    with pytest.raises(DomainError):
        small(horizons=(40.5,))
    with pytest.raises(DomainError):
        small(levels=(0.0,))
    assert small().config_hash() == small(threads=4).config_hash()
    assert small().config_hash() != small(seed=1).config_hash()
