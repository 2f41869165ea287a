"""Reproducible Monte Carlo studies: null size, power and convergence to the limit matrix.

Replicate ``i`` of scenario ``j`` is simulated from the seed
``substream_seed(master, j, i)``, so results do not depend on the number of
worker threads or on the order in which replicates finish.
"""

from __future__ import annotations

import hashlib
import json
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy import stats

from . import asymptotics
from .errors import DomainError
from .inference import CandidateGrid, critical_value, glr_curve, mle
from .model import DriftParams, ModelSpec, q_limit
from .simulate import ChangeSpec, simulate_exact, simulate_with_change, substream_seed
from .suffstats import DEFAULT_RULE, prefix_stats

# reserved scenario id separating the critical-value stream from path streams
TABLE_STREAM = 2**31 - 1


@dataclass(frozen=True)
class Scenario:
    """Jump of ``magnitude`` stationary standard deviations in ``mu[component]`` at ``s``."""

    magnitude: float
    s: float = 0.5
    component: int = 0


@dataclass(frozen=True, eq=False)
class ExperimentConfig:
    model: ModelSpec
    horizons: tuple
    dt: float
    reps: int
    mode: str = "window"
    levels: tuple = (0.05,)
    window: tuple = (0.1, 0.9)
    fixed_s: float = 0.5
    scenarios: tuple = ()
    seed: int = 0
    threads: int = 1
    bridge_m: int = 1000
    bridge_reps: int = 10000
    ci_level: float = 0.99
    oracle_s: tuple = (0.25, 0.5, 0.75, 1.0)
    thresholds: dict = field(default_factory=dict)
    rule: str = DEFAULT_RULE
    raw: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if self.reps < 1:
            raise DomainError("reps must be at least 1")
        nu = self.model.basis.period
        for T in self.horizons:
            n = T / nu
            if abs(n - round(n)) > 1e-9 * max(1.0, n):
                raise DomainError(f"horizon {T} is not a multiple of the period {nu}")
        if any(not 0 < lv <= 1 for lv in self.levels):
            raise DomainError("levels must lie in (0, 1]")

    def config_hash(self) -> str:
        blob = json.dumps(self.raw or self.describe(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    def describe(self) -> dict:
        return {
            "model": self.model.describe(),
            "horizons": list(self.horizons),
            "dt": self.dt,
            "reps": self.reps,
            "mode": self.mode,
            "levels": list(self.levels),
            "window": list(self.window),
            "fixed_s": self.fixed_s,
            "scenarios": [vars(s) for s in self.scenarios],
            "seed": self.seed,
            "bridge": {"m": self.bridge_m, "reps": self.bridge_reps},
            "ci_level": self.ci_level,
            "oracle_s": list(self.oracle_s),
            "thresholds": self.thresholds,
            "rule": self.rule,
        }


@dataclass(eq=False)
class ExperimentResult:
    kind: str
    config_hash: str
    seed: int
    cells: list
    summary: dict
    checks: dict
    timing: dict = field(default_factory=dict)

    def to_dict(self, include_timing: bool = False) -> dict:
        out = {
            "kind": self.kind,
            "config_hash": self.config_hash,
            "seed": self.seed,
            "cells": self.cells,
            "summary": self.summary,
            "checks": self.checks,
        }
        if include_timing:
            out["timing"] = self.timing
        return out


def binomial_ci(k: int, n: int, level: float = 0.99) -> tuple[float, float]:
    """Clopper-Pearson interval for a binomial proportion."""
    a = 1.0 - level
    lo = 0.0 if k == 0 else float(stats.beta.ppf(a / 2, k, n - k + 1))
    hi = 1.0 if k == n else float(stats.beta.ppf(1 - a / 2, k + 1, n - k))
    return lo, hi


def rate_entry(flags: np.ndarray, level: float) -> dict:
    k, n = int(np.sum(flags)), int(flags.size)
    rate = k / n
    lo, hi = binomial_ci(k, n, level)
    return {"rate": rate, "count": k, "n": n, "ci": [lo, hi], "se": math.sqrt(rate * (1 - rate) / n)}


def _map(fn: Callable, items: Sequence, threads: int) -> list:
    if threads > 1 and len(items) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(fn, items))
    return [fn(x) for x in items]


def _stationary_sd(model: ModelSpec, theta: DriftParams) -> float:
    return model.sigma / math.sqrt(2.0 * theta.alpha)


def _grid(config: ExperimentConfig) -> CandidateGrid:
    return CandidateGrid(include=(config.fixed_s,))


def _critical_values(config: ExperimentConfig, T: float) -> dict:
    p = config.model.basis.p
    cvs = {}
    for lv in config.levels:
        cv, src, prov = critical_value(
            config.mode, lv, p, T=T, nu=config.model.basis.period, window=config.window,
            bridge_m=config.bridge_m, bridge_reps=config.bridge_reps,
            bridge_seed=substream_seed(config.seed, TABLE_STREAM), threads=config.threads,
        )
        cvs[lv] = (cv, src, prov)
    return cvs


def _glr_replicate(config: ExperimentConfig, T: float, change: Optional[ChangeSpec], seed: int):
    model = config.model
    if change is None:
        path = simulate_exact(model, T, config.dt, seed)
    else:
        path = simulate_with_change(model, change, T, config.dt, seed)
    curve = glr_curve(path, model.basis, model.sigma, config.mode, config.window, _grid(config), config.rule)
    try:
        fixed = curve.at(path_fraction(config.fixed_s, path.n_steps))
    except DomainError:
        fixed = math.nan
    return curve.sup, fixed, curve.s_hat


def path_fraction(s: float, n: int) -> float:
    return math.ceil(s * n - 0.5) / n


def _run_cells(config, cells_spec):
    started = time.perf_counter()
    cells, all_checks = [], {}
    for sid, (T, change, label) in enumerate(cells_spec):
        cvs = _critical_values(config, T)
        seeds = [substream_seed(config.seed, sid, i) for i in range(config.reps)]
        out = np.array(_map(lambda s: _glr_replicate(config, T, change, s), seeds, config.threads))
        sups, fixed, s_hat = out[:, 0], out[:, 1], out[:, 2]
        cell = dict(label)
        cell["T"] = T
        cell["rejection"] = [
            dict(level=lv, critical_value=cvs[lv][0], cv_source=cvs[lv][1], **rate_entry(sups > cvs[lv][0], config.ci_level))
            for lv in config.levels
        ]
        cell["statistic_quantiles"] = {
            str(q): float(np.quantile(sups, q)) for q in (0.5, 0.9, 0.95, 0.99)
        }
        cell["s_hat_median_abs_error"] = (
            float(np.median(np.abs(s_hat - change.s))) if change is not None and change.theta_pre != change.theta_post else None
        )
        p = config.model.basis.p
        if np.all(np.isfinite(fixed)):
            cell["ks_fixed_s_chi2"] = float(stats.kstest(fixed, "chi2", args=(p + 1,)).statistic)
        if config.mode == "window":
            ref = asymptotics.cached_samples(
                p, tuple(config.window), config.bridge_m, config.bridge_reps,
                substream_seed(config.seed, TABLE_STREAM), config.threads,
            )
            cell["ks_sup_bridge"] = float(stats.ks_2samp(sups, ref).statistic)
        cells.append(cell)
    return cells, time.perf_counter() - started


def run_null_study(config: ExperimentConfig) -> ExperimentResult:
    """Size of the test, fixed-``s`` law and windowed-sup law under no change."""
    if config.scenarios:
        raise DomainError("a null study takes no change scenarios")
    spec = [(T, None, {"scenario": "null"}) for T in config.horizons]
    cells, elapsed = _run_cells(config, spec)
    checks = {}
    th = config.thresholds
    for cell in cells:
        tag = f"T={cell['T']:g}"
        if "size_band" in th:
            lo, hi = th["size_band"]
            for r in cell["rejection"]:
                checks[f"size[{tag},level={r['level']:g}]"] = lo <= r["rate"] <= hi
        if "ks_fixed_s" in th and "ks_fixed_s_chi2" in cell:
            checks[f"ks_fixed_s[{tag}]"] = cell["ks_fixed_s_chi2"] < th["ks_fixed_s"]
    return ExperimentResult("null", config.config_hash(), config.seed, cells, {}, checks, {"seconds": elapsed})


def _change_for(config: ExperimentConfig, sc: Scenario) -> ChangeSpec:
    pre = config.model.theta
    mu = list(pre.mu)
    if not 0 <= sc.component < len(mu):
        raise DomainError(f"scenario component {sc.component} out of range")
    mu[sc.component] += sc.magnitude * _stationary_sd(config.model, pre) * pre.alpha
    return ChangeSpec(pre, DriftParams(tuple(mu), pre.alpha), sc.s)


def run_power_study(config: ExperimentConfig) -> ExperimentResult:
    """Rejection rates per (horizon, magnitude, location) cell.

    A magnitude of ``k`` shifts ``mu[component]`` by ``k * alpha * sigma / sqrt(2 alpha)``;
    for the constant basis function this moves the stationary mean by ``k``
    stationary standard deviations.
    """
    if not config.scenarios:
        raise DomainError("a power study needs at least one change scenario")
    spec = []
    for T in config.horizons:
        for sc in config.scenarios:
            label = {"scenario": "change", "magnitude": sc.magnitude, "s": sc.s, "component": sc.component}
            spec.append((T, _change_for(config, sc), label))
    cells, elapsed = _run_cells(config, spec)

    summary, checks = {"monotone": []}, {}
    for T in config.horizons:
        for lv_i, lv in enumerate(config.levels):
            for s in sorted({sc.s for sc in config.scenarios}):
                row = sorted(
                    (c for c in cells if c["T"] == T and c["s"] == s), key=lambda c: c["magnitude"]
                )
                rates = [c["rejection"][lv_i] for c in row]
                ok = all(
                    b["rate"] >= a["rate"] - 2 * math.hypot(a["se"], b["se"]) for a, b in zip(rates, rates[1:])
                )
                summary["monotone"].append({"T": T, "level": lv, "s": s, "monotone": ok,
                                            "magnitudes": [c["magnitude"] for c in row],
                                            "rates": [r["rate"] for r in rates]})
                checks[f"monotone[T={T:g},level={lv:g},s={s:g}]"] = ok
    if "min_power" in config.thresholds:
        target = config.thresholds["min_power"]
        for c in cells:
            if c["magnitude"] == target["magnitude"]:
                for r in c["rejection"]:
                    checks[f"power[T={c['T']:g},mag={c['magnitude']:g},s={c['s']:g}]"] = r["rate"] > target["rate"]
    return ExperimentResult("power", config.config_hash(), config.seed, cells, summary, checks, {"seconds": elapsed})


def _oracle_replicate(config: ExperimentConfig, seed: int):
    model = config.model
    horizons = sorted(config.horizons)
    path = simulate_exact(model, horizons[-1], config.dt, seed)
    limit = q_limit(model)
    n_per_t = 1.0 / config.dt
    marks = set()
    for T in horizons:
        for s in config.oracle_s:
            marks.add(int(round(s * T * n_per_t)))
    marks = sorted(marks)
    prefix = prefix_stats(path, model.basis, marks, config.rule)
    pos = {int(k): j for j, k in enumerate(prefix.indices)}
    rows = []
    for T in horizons:
        kT = int(round(T * n_per_t))
        full = prefix.stats(pos[kT])
        dev_T = float(np.linalg.norm(full.Q / T - limit, 2))
        dev_s = max(
            float(np.linalg.norm(prefix.Q[pos[int(round(s * kT))]] / T - s * limit, 2)) for s in config.oracle_s
        )
        theta = mle(full, model.sigma or 1.0).theta_hat
        rows.append((dev_T, dev_s, theta))
    return rows


def run_oracle_study(config: ExperimentConfig) -> ExperimentResult:
    """Convergence of ``Q_T / T`` and ``Q_{sT} / T`` to their limits and MLE consistency.

    Every replicate is one long path; shorter horizons are its prefixes, so
    the horizon comparison is paired.
    """
    model = config.model
    if not model.theta.alpha > 0:
        raise DomainError("the oracle study needs alpha > 0")
    started = time.perf_counter()
    horizons = sorted(config.horizons)
    seeds = [substream_seed(config.seed, 0, i) for i in range(config.reps)]
    reps = _map(lambda s: _oracle_replicate(config, s), seeds, config.threads)
    truth = model.theta.vector
    cells = []
    rmse_vec = []
    for h, T in enumerate(horizons):
        dev_T = np.array([r[h][0] for r in reps])
        dev_s = np.array([r[h][1] for r in reps])
        est = np.array([r[h][2] for r in reps])
        err = est - truth
        rmse = np.sqrt(np.mean(err**2, axis=0))
        rmse_vec.append(math.sqrt(float(np.mean(np.sum(err**2, axis=1)))))
        se = est.std(axis=0, ddof=1) / math.sqrt(config.reps) if config.reps > 1 else np.full(truth.size, math.nan)
        cells.append({
            "T": T,
            "q_deviation_mean": float(dev_T.mean()),
            "q_uniform_deviation_mean": float(dev_s.mean()),
            "theta_mean": est.mean(axis=0).tolist(),
            "theta_bias": err.mean(axis=0).tolist(),
            "theta_se": se.tolist(),
            "theta_rmse": rmse.tolist(),
            "theta_rmse_total": rmse_vec[-1],
            "bias_in_se": (np.abs(err.mean(axis=0)) / se).tolist(),
        })
    summary, checks = {}, {}
    if len(horizons) >= 2:
        first = np.array([r[0][1] for r in reps])
        last = np.array([r[-1][1] for r in reps])
        summary["paired_decrease_fraction"] = float(np.mean(last < first))
        summary["rmse_loglog_slope"] = float(np.polyfit(np.log(horizons), np.log(rmse_vec), 1)[0])
        th = config.thresholds
        if "paired_decrease" in th:
            checks["paired_decrease"] = summary["paired_decrease_fraction"] >= th["paired_decrease"]
        if "rmse_slope" in th:
            lo, hi = th["rmse_slope"]
            checks["rmse_slope"] = lo <= summary["rmse_loglog_slope"] <= hi
    if "bias_se" in config.thresholds:
        checks["bias_within_se"] = max(cells[-1]["bias_in_se"]) < config.thresholds["bias_se"]
    return ExperimentResult("oracle", config.config_hash(), config.seed, cells, summary, checks,
                            {"seconds": time.perf_counter() - started})


STUDIES = {"null": run_null_study, "power": run_power_study, "oracle": run_oracle_study}
