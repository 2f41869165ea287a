"""Critical values for the windowed and the full-range sup statistics.

Windowed: Monte Carlo quantiles of ``sup_{s in [s1, s2]} |W(s) - s W(1)|^2 / (s (1 - s))``
for a ``(p+1)``-dimensional standard Brownian motion ``W``.

Full range: Gumbel-type limit ``P(G <= x) = exp(-2 exp(-x/2))`` after centring
by ``b_T`` and scaling by ``a_T``.
"""

from __future__ import annotations

import hashlib
import json
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from scipy.special import gammaln

from .errors import DomainError, HorizonTooShort, WindowInvalid
from .simulate import generator

E_E = math.exp(math.e)
BLOCK = 256
DEFAULT_LEVELS = (0.90, 0.95, 0.975, 0.99)


@dataclass(frozen=True)
class GumbelNorm:
    a_T: float
    b_T: float
    T: float
    nu: float
    p: int


def gumbel_norming(T: float, nu: float, p: int) -> GumbelNorm:
    ratio = T / nu
    if not ratio > E_E:
        raise HorizonTooShort(
            f"T/nu = {ratio:g} must exceed e^e = {E_E:.3f} for the Gumbel norming to be defined"
        )
    if p < 1:
        raise DomainError(f"p must be >= 1, got {p}")
    ll = math.log(math.log(ratio))
    lll = math.log(ll)
    b = (2.0 * ll + 0.5 * (p + 1) * lll - float(gammaln(0.5 * (p + 1)))) ** 2 / (2.0 * ll)
    a = math.sqrt(b / (2.0 * ll))
    return GumbelNorm(a, b, float(T), float(nu), int(p))


def gumbel_cdf(x):
    out = np.exp(-2.0 * np.exp(-0.5 * np.asarray(x, dtype=float)))
    return float(out) if np.ndim(out) == 0 else out


def gumbel_quantile(q):
    q = np.asarray(q, dtype=float)
    if np.any(~((q > 0) & (q < 1))):
        raise DomainError("quantile probabilities must lie in (0, 1)")
    out = -2.0 * np.log(-np.log(q) / 2.0)
    return float(out) if out.ndim == 0 else out


def critical_value_full(T: float, nu: float, p: int, level: float) -> float:
    """``a_T * gumbel_quantile(1 - level) + b_T``."""
    if not 0 < level < 1:
        raise DomainError(f"level must lie in (0, 1), got {level}")
    norm = gumbel_norming(T, nu, p)
    return norm.a_T * gumbel_quantile(1.0 - level) + norm.b_T


def check_window(s1: float, s2: float, allow_point: bool = False) -> None:
    ok = 0.0 < s1 <= s2 < 1.0 if allow_point else 0.0 < s1 < s2 < 1.0
    if not ok:
        raise WindowInvalid(f"window [{s1}, {s2}] must satisfy 0 < s1 < s2 < 1")


def window_indices(m: int, s1: float, s2: float) -> np.ndarray:
    """Grid indices ``k`` with ``k/m`` in ``[s1, s2]`` (endpoints matched to 1e-12)."""
    lo = math.ceil(s1 * m - 1e-9)
    hi = math.floor(s2 * m + 1e-9)
    k = np.arange(max(lo, 1), min(hi, m - 1) + 1)
    if k.size == 0:
        raise WindowInvalid(f"window [{s1}, {s2}] contains no point of the grid k/{m}")
    return k


def bridge_sup(walk: np.ndarray, k: np.ndarray, m: int) -> np.ndarray:
    """Per-replicate sup of ``|W(s) - s W(1)|^2 / (s(1-s))`` over grid indices ``k``.

    ``walk`` has shape ``(dim, reps, m)`` and holds ``W(j/m)`` for ``j = 1..m``.
    """
    s = k / m
    w1 = walk[:, :, -1:]
    bridge = walk[:, :, k - 1] - s * w1
    stat = np.sum(bridge**2, axis=0) / (s * (1.0 - s))
    return stat.max(axis=1)


def _block(p: int, k: np.ndarray, m: int, n: int, seed: int, block: int) -> np.ndarray:
    scale = 1.0 / math.sqrt(m)
    walk = np.empty((p + 1, n, m))
    for c in range(p + 1):
        rng = generator(np.random.SeedSequence(seed, spawn_key=(block, c)))
        walk[c] = np.cumsum(rng.standard_normal((n, m)) * scale, axis=1)
    return bridge_sup(walk, k, m)


def bridge_sup_samples(
    p: int, window: Sequence[float], m: int, reps: int, seed: int, threads: int = 1
) -> np.ndarray:
    """Replicates of the discretised bridge-sup statistic.

    Replicates are generated in fixed blocks of 256, block ``b`` and coordinate
    ``c`` drawing from the stream keyed ``(seed, b, c)``. Output is therefore
    independent of ``threads``, and the first ``p+1`` coordinates are shared
    across dimensions, so the samples are monotone in ``p`` and in the window.
    """
    s1, s2 = map(float, window)
    check_window(s1, s2, allow_point=True)
    if m < 2:
        raise DomainError(f"grid size m must be >= 2, got {m}")
    if reps < 1:
        raise DomainError(f"reps must be >= 1, got {reps}")
    k = window_indices(m, s1, s2)
    sizes = [min(BLOCK, reps - b * BLOCK) for b in range(math.ceil(reps / BLOCK))]
    jobs = [(p, k, m, n, seed, b) for b, n in enumerate(sizes)]
    if threads > 1 and len(jobs) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(lambda a: _block(*a), jobs))
    else:
        parts = [_block(*a) for a in jobs]
    return np.concatenate(parts)


def quantile_with_se(samples: np.ndarray, q: float) -> tuple[float, float]:
    """Linear-interpolation quantile and a binomial order-statistic standard error.

    The error is half the distance between the quantiles at ``q -/+ sqrt(q(1-q)/n)``,
    the order statistics one binomial standard deviation away.
    """
    n = samples.size
    value = float(np.quantile(samples, q))
    half = math.sqrt(q * (1.0 - q) / n)
    lo = float(np.quantile(samples, max(q - half, 0.0)))
    hi = float(np.quantile(samples, min(q + half, 1.0)))
    return value, 0.5 * (hi - lo)


@dataclass(frozen=True)
class BridgeQuantileTable:
    """Quantiles of the bridge-sup law; ``levels`` are probabilities such as 0.95."""

    p: int
    s1: float
    s2: float
    m: int
    reps: int
    seed: int
    levels: tuple
    values: tuple
    se: tuple
    provenance: dict = field(default_factory=dict, compare=False)

    def quantile(self, prob: float) -> float:
        for lv, v in zip(self.levels, self.values):
            if math.isclose(lv, prob, rel_tol=0, abs_tol=1e-12):
                return v
        raise DomainError(f"table has no quantile at probability {prob}; available: {list(self.levels)}")

    def critical_value(self, level: float) -> float:
        """Critical value for a test of size ``level``; ``level = 1`` always rejects."""
        if level >= 1.0:
            return -math.inf
        return self.quantile(1.0 - level)

    def matches(self, p: int, s1: float, s2: float) -> bool:
        return self.p == p and math.isclose(self.s1, s1, abs_tol=1e-12) and math.isclose(self.s2, s2, abs_tol=1e-12)

    def to_dict(self) -> dict:
        out = {
            "p": self.p, "s1": self.s1, "s2": self.s2, "m": self.m, "reps": self.reps, "seed": self.seed,
            "quantiles": [{"level": l, "value": v, "se": e} for l, v, e in zip(self.levels, self.values, self.se)],
        }
        if self.provenance:
            out["provenance"] = self.provenance
        return out

    @classmethod
    def from_dict(cls, d: dict) -> "BridgeQuantileTable":
        try:
            qs = sorted(d["quantiles"], key=lambda e: e["level"])
            return cls(
                int(d["p"]), float(d["s1"]), float(d["s2"]), int(d["m"]), int(d["reps"]), int(d["seed"]),
                tuple(float(e["level"]) for e in qs), tuple(float(e["value"]) for e in qs),
                tuple(float(e.get("se", math.nan)) for e in qs), d.get("provenance", {}),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise DomainError(f"malformed quantile table: {exc}") from None

    @classmethod
    def load(cls, path) -> "BridgeQuantileTable":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def table_from_samples(samples, p, window, m, seed, levels=DEFAULT_LEVELS) -> BridgeQuantileTable:
    levels = tuple(sorted(float(l) for l in levels))
    if any(not 0 < l < 1 for l in levels):
        raise DomainError("quantile levels must lie in (0, 1)")
    pairs = [quantile_with_se(samples, l) for l in levels]
    return BridgeQuantileTable(
        int(p), float(window[0]), float(window[1]), int(m), int(samples.size), int(seed), levels,
        tuple(v for v, _ in pairs), tuple(e for _, e in pairs),
    )


def simulate_bridge_sup(
    p: int,
    window: Sequence[float],
    m: int = 1000,
    reps: int = 1000,
    seed: int = 0,
    levels: Sequence[float] = DEFAULT_LEVELS,
    threads: int = 1,
    cache_dir: Optional[os.PathLike] = None,
) -> BridgeQuantileTable:
    """Monte Carlo quantile table for the windowed bridge-sup limit.

    Requires ``m >= 100`` and ``reps >= 100``. With ``cache_dir`` the raw
    replicates are stored as ``.npy`` keyed by ``(p, s1, s2, m, reps, seed)``.
    """
    if m < 100:
        raise DomainError(f"grid size m must be >= 100, got {m}")
    if reps < 100:
        raise DomainError(f"at least 100 replicates are required, got {reps}")
    samples = cached_samples(p, tuple(map(float, window)), m, reps, seed, threads, cache_dir)
    return table_from_samples(samples, p, window, m, seed, levels)


_memory: dict = {}


def cached_samples(p, window, m, reps, seed, threads=1, cache_dir=None) -> np.ndarray:
    key = (int(p), float(window[0]), float(window[1]), int(m), int(reps), int(seed))
    if key in _memory:
        return _memory[key]
    path = None
    if cache_dir is not None:
        digest = hashlib.sha256(json.dumps(key).encode()).hexdigest()[:20]
        path = Path(cache_dir) / f"bridge_{digest}.npy"
        if path.exists():
            samples = np.load(path)
            if samples.shape == (reps,):
                _memory[key] = samples
                return samples
    samples = bridge_sup_samples(p, window, m, reps, seed, threads)
    samples.setflags(write=False)
    if path is not None:
        path.parent.mkdir(parents=True, exist_ok=True)
        tmp = path.with_suffix(f".{os.getpid()}.tmp.npy")
        np.save(tmp, samples)
        os.replace(tmp, path)
    _memory[key] = samples
    return samples
