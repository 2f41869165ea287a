"""Drift MLE, log-likelihood, the likelihood-ratio change-point curve and the test."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence, Union

import numpy as np
import scipy.linalg

from . import asymptotics
from .errors import DomainError, GridTooCoarse, SigmaNonpositive, SingularStats
from .model import DriftParams, PeriodicBasis
from .simulate import SamplePath
from .suffstats import DEFAULT_RULE, SuffStats, accumulate, difference, estimate_sigma_sq, prefix_stats

COND_MAX = 1e12
DEFAULT_WINDOW = (0.1, 0.9)
MODES = ("window", "full")


@dataclass(frozen=True, eq=False)
class MleFit:
    theta_hat: np.ndarray
    cond_Q: float
    loglik: float
    alpha_nonpositive: bool

    @property
    def params(self) -> DriftParams:
        return DriftParams.from_vector(self.theta_hat)

    def to_dict(self) -> dict:
        return {
            "theta_hat": self.theta_hat.tolist(),
            "mu_hat": self.theta_hat[:-1].tolist(),
            "alpha_hat": float(self.theta_hat[-1]),
            "cond_Q": self.cond_Q,
            "loglik": self.loglik,
            "alpha_nonpositive": self.alpha_nonpositive,
        }


def _check_sigma(sigma: float) -> None:
    if not sigma > 0 or not math.isfinite(sigma):
        raise SigmaNonpositive(f"sigma must be positive, got {sigma}")


def condition_number(Q: np.ndarray) -> float:
    if not np.all(np.isfinite(Q)) or not np.any(Q):
        return math.inf
    with np.errstate(divide="ignore", invalid="ignore"):
        return float(np.linalg.cond(Q))


def _solve(Q: np.ndarray, r: np.ndarray) -> np.ndarray:
    try:
        return scipy.linalg.solve(Q, r, assume_a="pos")
    except np.linalg.LinAlgError:
        return scipy.linalg.solve(Q, r, assume_a="sym")


def mle(S: SuffStats, sigma: float = 1.0, cond_max: float = COND_MAX) -> MleFit:
    """``theta_hat = Q^{-1} R~``.

    ``loglik`` is evaluated at ``theta_hat`` with the given ``sigma``. A
    nonpositive (or roundoff-level) ``alpha_hat`` is reported as is and flagged.

    Raises
    ------
    SingularStats
        When the condition number of ``Q`` exceeds ``cond_max``.
    """
    _check_sigma(sigma)
    cond = condition_number(S.Q)
    if not cond <= cond_max:
        raise SingularStats(
            f"Q is numerically singular on [{S.t_a}, {S.t_b}] (condition number {cond:.3e}); "
            "the segment may be too short or the path degenerate"
        )
    theta = _solve(S.Q, S.Rt)
    scale = max(1.0, float(np.max(np.abs(theta))))
    flag = bool(theta[-1] <= 1e-9 * scale)
    return MleFit(theta, cond, loglik(S, theta, sigma), flag)


def loglik(S: SuffStats, theta: Union[DriftParams, Sequence[float]], sigma: float) -> float:
    """``theta^T R~ / sigma^2 - theta^T Q theta / (2 sigma^2)``."""
    _check_sigma(sigma)
    th = theta.vector if isinstance(theta, DriftParams) else np.asarray(theta, dtype=float)
    if th.shape != S.Rt.shape:
        raise DomainError(f"theta has length {th.size}, statistics have dimension {S.dim}")
    return float(th @ S.Rt - 0.5 * th @ S.Q @ th) / sigma**2


@dataclass(frozen=True)
class CandidateGrid:
    """Which change locations are evaluated.

    ``stride`` defaults to ``ceil(N / 512)``; ``include`` forces extra fractions
    onto the grid. Each side of a candidate must span at least ``min_periods``
    periods and ``min_points_per_param * (p + 1)`` grid steps, and both
    segment matrices must have condition number below ``cond_max``.
    """

    stride: Optional[int] = None
    include: tuple = ()
    min_periods: float = 1.0
    min_points_per_param: int = 10
    cond_max: float = COND_MAX


@dataclass(frozen=True, eq=False)
class GlrCurve:
    s: np.ndarray
    values: np.ndarray
    indices: np.ndarray
    sup: float
    s_hat: float
    index_hat: int
    mode: str
    window: Optional[tuple]
    sigma: float
    skipped: tuple = field(default_factory=tuple)

    def at(self, s: float) -> float:
        j = np.flatnonzero(np.isclose(self.s, s, rtol=0, atol=1e-12))
        if j.size == 0:
            raise DomainError(f"s = {s} is not a valid candidate of this curve")
        return float(self.values[j[0]])


def _quad_forms(Q: np.ndarray, R: np.ndarray) -> np.ndarray:
    """``R_j^T Q_j^{-1} R_j`` for a stack of systems."""
    sol = np.linalg.solve(Q, R[..., None])[..., 0]
    return np.einsum("...i,...i->...", R, sol)


def _stack_cond(Q: np.ndarray) -> np.ndarray:
    with np.errstate(divide="ignore", invalid="ignore"):
        sv = np.linalg.svd(Q, compute_uv=False)
        cond = sv[:, 0] / sv[:, -1]
    cond[~np.isfinite(cond)] = np.inf
    return cond


def _candidate_indices(path: SamplePath, p: int, grid: CandidateGrid, mode: str, window):
    n = path.n_steps
    stride = grid.stride or max(1, math.ceil(n / 512))
    idx = set(range(stride, n, stride))
    for s in grid.include:
        k = math.ceil(float(s) * n - 0.5)
        if 0 < k < n:
            idx.add(k)
    idx = np.array(sorted(idx), dtype=int)
    if mode == "window":
        s = idx / n
        idx = idx[(s >= window[0] - 1e-12) & (s <= window[1] + 1e-12)]
    min_len = max(grid.min_periods * path.period, grid.min_points_per_param * (p + 1) * path.dt)
    short = (idx * path.dt < min_len * (1 - 1e-12)) | ((n - idx) * path.dt < min_len * (1 - 1e-12))
    skipped = [(float(k / n), "segment-too-short") for k in idx[short]]
    return idx[~short], skipped


def glr_curve(
    path: SamplePath,
    basis: PeriodicBasis,
    sigma: float,
    mode: str = "window",
    window: Sequence[float] = DEFAULT_WINDOW,
    grid: CandidateGrid = CandidateGrid(),
    rule: str = DEFAULT_RULE,
) -> GlrCurve:
    """``Lambda_T(s)`` over the candidate grid.

    ``Lambda_T(s) = [R~_tau' Q_tau^-1 R~_tau + dR' dQ^-1 dR - R~_T' Q_T^-1 R~_T] / sigma^2``
    with ``dQ = Q_T - Q_tau`` and ``dR = R~_T - R~_tau``. Candidates whose
    segments fail the length or conditioning gate are skipped and reported.
    ``rule`` selects how ``R~`` is discretised (see :mod:`ouchange.suffstats`).
    """
    _check_sigma(sigma)
    if mode not in MODES:
        raise DomainError(f"mode must be one of {MODES}, got {mode!r}")
    win = None
    if mode == "window":
        win = (float(window[0]), float(window[1]))
        asymptotics.check_window(*win)
    idx, skipped = _candidate_indices(path, basis.p, grid, mode, win)
    if idx.size < 3:
        raise GridTooCoarse(f"only {idx.size} valid change-point candidates; at least 3 are needed")

    prefix = prefix_stats(path, basis, idx, rule)
    q_t, r_t = prefix.Q[-1], prefix.Rt[-1]
    if not condition_number(q_t) <= grid.cond_max:
        raise SingularStats("full-sample Q is numerically singular")
    q_pre, r_pre = prefix.Q[:-1], prefix.Rt[:-1]
    q_post, r_post = q_t - q_pre, r_t - r_pre

    good_pre = _stack_cond(q_pre) <= grid.cond_max
    good_post = _stack_cond(q_post) <= grid.cond_max
    n = path.n_steps
    for k, a, b in zip(idx, good_pre, good_post):
        if not a:
            skipped.append((float(k / n), "singular-pre"))
        elif not b:
            skipped.append((float(k / n), "singular-post"))
    ok = good_pre & good_post
    idx = idx[ok]
    if idx.size < 3:
        raise GridTooCoarse(f"only {idx.size} well-conditioned change-point candidates; at least 3 are needed")

    full = float(r_t @ scipy.linalg.solve(q_t, r_t, assume_a="sym"))
    lam = (_quad_forms(q_pre[ok], r_pre[ok]) + _quad_forms(q_post[ok], r_post[ok]) - full) / sigma**2
    j = int(np.argmax(lam))
    s = idx / n
    return GlrCurve(
        s, lam, idx, float(lam[j]), float(s[j]), int(idx[j]), mode, win, float(sigma),
        tuple(sorted(skipped)),
    )


def glr_from_loglik(full: SuffStats, pre: SuffStats, post: SuffStats, sigma: float) -> float:
    """``-2 [l(theta_hat) - l_pre(theta_hat_pre) - l_post(theta_hat_post)]`` via three fits."""
    ll = [mle(S, sigma).loglik for S in (full, pre, post)]
    return -2.0 * (ll[0] - ll[1] - ll[2])


@dataclass(frozen=True, eq=False)
class TestReport:
    statistic: float
    mode: str
    level: float
    critical_value: float
    cv_source: str
    reject: bool
    s_hat: float
    tau_hat: float
    fit_pre: MleFit
    fit_post: MleFit
    sigma_used: float
    sigma_estimated: bool
    window: Optional[tuple]
    skipped: tuple
    cv_provenance: dict = field(default_factory=dict)
    rule: str = DEFAULT_RULE

    __test__ = False

    def to_dict(self) -> dict:
        return {
            "statistic": self.statistic,
            "mode": self.mode,
            "level": self.level,
            "critical_value": self.critical_value,
            "cv_source": self.cv_source,
            "cv_provenance": self.cv_provenance,
            "reject": self.reject,
            "s_hat": self.s_hat,
            "tau_hat": self.tau_hat,
            "window": list(self.window) if self.window else None,
            "theta_pre": self.fit_pre.theta_hat.tolist(),
            "theta_post": self.fit_post.theta_hat.tolist(),
            "sigma_used": self.sigma_used,
            "sigma_estimated": self.sigma_estimated,
            "rule": self.rule,
            "skipped": [{"s": s, "reason": r} for s, r in self.skipped],
        }


def critical_value(
    mode: str,
    level: float,
    p: int,
    *,
    T: float = math.nan,
    nu: float = 1.0,
    window: Sequence[float] = DEFAULT_WINDOW,
    table: Optional[asymptotics.BridgeQuantileTable] = None,
    bridge_m: int = 1000,
    bridge_reps: int = 10000,
    bridge_seed: int = 0,
    threads: int = 1,
    cache_dir=None,
) -> tuple[float, str, dict]:
    """Critical value, its source tag and provenance for the given test mode.

    Window mode uses a bridge-sup Monte Carlo table (``table`` if given, else
    one simulated with the ``bridge_*`` settings); full mode uses the Gumbel limit.
    """
    if not 0 < level <= 1:
        raise DomainError(f"level must lie in (0, 1], got {level}")
    if mode == "full":
        norm = asymptotics.gumbel_norming(T, nu, p)
        cv = -math.inf if level >= 1 else norm.a_T * asymptotics.gumbel_quantile(1 - level) + norm.b_T
        return cv, "gumbel", {"a_T": norm.a_T, "b_T": norm.b_T, "T_over_nu": T / nu, "p": p}
    s1, s2 = map(float, window)
    if table is None:
        if level >= 1:
            return -math.inf, "bridge-MC", {"p": p, "s1": s1, "s2": s2}
        table = asymptotics.simulate_bridge_sup(
            p, (s1, s2), bridge_m, bridge_reps, bridge_seed, levels=(1 - level,),
            threads=threads, cache_dir=cache_dir,
        )
    elif not table.matches(p, s1, s2):
        raise DomainError(
            f"quantile table is for p={table.p}, window [{table.s1}, {table.s2}]; "
            f"the test needs p={p}, window [{s1}, {s2}]"
        )
    prov = {"p": table.p, "s1": table.s1, "s2": table.s2, "m": table.m, "reps": table.reps, "seed": table.seed}
    return table.critical_value(level), "bridge-MC", prov


def run_test(
    path: SamplePath,
    basis: PeriodicBasis,
    sigma: Union[float, str] = "estimate",
    mode: str = "window",
    window: Sequence[float] = DEFAULT_WINDOW,
    level: float = 0.05,
    table: Optional[asymptotics.BridgeQuantileTable] = None,
    grid: CandidateGrid = CandidateGrid(),
    rule: str = DEFAULT_RULE,
    **cv_options,
) -> TestReport:
    """Likelihood-ratio test for a change in the drift parameters.

    ``sigma="estimate"`` replaces the known diffusion coefficient by the
    quadratic-variation estimate. Extra keyword arguments are passed to
    :func:`critical_value`.
    """
    if mode not in MODES:
        raise DomainError(f"mode must be one of {MODES}, got {mode!r}")
    if not 0 < level <= 1:
        raise DomainError(f"level must lie in (0, 1], got {level}")
    estimated = isinstance(sigma, str)
    if estimated:
        if sigma != "estimate":
            raise DomainError(f"sigma must be a number or 'estimate', got {sigma!r}")
        sigma = math.sqrt(estimate_sigma_sq(path))
    _check_sigma(sigma)
    cv, source, prov = critical_value(
        mode, level, basis.p, T=path.T, nu=path.period, window=window, table=table, **cv_options
    )
    curve = glr_curve(path, basis, sigma, mode, window, grid, rule)
    full = accumulate(path, basis, rule=rule)
    pre = prefix_stats(path, basis, [curve.index_hat], rule).stats(0)
    post = difference(full, pre)
    return TestReport(
        statistic=curve.sup,
        mode=mode,
        level=float(level),
        critical_value=float(cv),
        cv_source=source,
        reject=bool(curve.sup > cv),
        s_hat=curve.s_hat,
        tau_hat=curve.s_hat * path.T,
        fit_pre=mle(pre, sigma),
        fit_post=mle(post, sigma),
        sigma_used=float(sigma),
        sigma_estimated=estimated,
        window=curve.window,
        skipped=curve.skipped,
        cv_provenance=prov,
        rule=rule,
    )
