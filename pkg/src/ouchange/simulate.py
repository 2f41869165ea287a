"""Trajectories of the periodic Ornstein-Uhlenbeck process on a uniform grid."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.signal import lfilter

from .errors import DomainError, InvalidStep, NonpositiveAlpha
from .model import GL_NODES, GL_WEIGHTS, DriftParams, ModelSpec, h_tilde

SCHEMES = ("exact", "euler")


def generator(seed) -> np.random.Generator:
    """Counter-based Philox stream keyed by ``seed`` (an int or a ``SeedSequence``)."""
    ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    return np.random.Generator(np.random.Philox(ss))


def substream_seed(master: int, *key: int) -> int:
    """64-bit seed mixed from a master seed and an integer key path."""
    ss = np.random.SeedSequence(master, spawn_key=tuple(int(k) for k in key))
    return int(ss.generate_state(1, np.uint64)[0])


@dataclass(frozen=True, eq=False)
class SamplePath:
    """Discretely observed trajectory ``X_0..X_N`` at ``t_i = i * dt``."""

    times: np.ndarray
    values: np.ndarray
    period: float
    dt: float
    seed: Optional[int] = None
    scheme: str = "data"
    change_index: Optional[int] = None

    def __post_init__(self):
        times = np.array(self.times, dtype=float)
        values = np.array(self.values, dtype=float)
        if times.ndim != 1 or times.shape != values.shape:
            raise DomainError("times and values must be 1-D arrays of equal length")
        if times.size < 2:
            raise DomainError("a path needs at least two observations")
        if times[0] != 0.0:
            raise DomainError(f"paths must start at t=0, got t0={times[0]}")
        if not self.dt > 0:
            raise InvalidStep(f"dt must be positive, got {self.dt}")
        gaps = np.diff(times)
        slack = 1e-9 * self.dt + 8 * np.finfo(float).eps * abs(times[-1])
        if np.any(np.abs(gaps - self.dt) > slack):
            raise DomainError("observation grid is not uniform")
        times.setflags(write=False)
        values.setflags(write=False)
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "values", values)

    @property
    def n_steps(self) -> int:
        return self.times.size - 1

    @property
    def T(self) -> float:
        return float(self.times[-1])

    @property
    def whole_periods(self) -> bool:
        """``True`` when ``T`` is an integer multiple of the period."""
        n = self.T / self.period
        return abs(n - round(n)) <= 1e-9 * max(1.0, n)

    def index_of(self, t: float) -> int:
        """Grid index of time ``t``; raises if ``t`` is not a grid point of ``[0, T]``."""
        k = int(round(t / self.dt))
        if k < 0 or k > self.n_steps or abs(self.times[k] - t) > 1e-9 * self.dt + 1e-12 * abs(t):
            raise DomainError(f"time {t} is not a grid point of [0, {self.T}]")
        return k

    def metadata(self) -> dict:
        meta = {"nu": self.period, "dt": self.dt, "seed": self.seed, "scheme": self.scheme}
        if self.change_index is not None:
            meta["change_index"] = self.change_index
        return meta


@dataclass(frozen=True)
class ChangeSpec:
    theta_pre: DriftParams
    theta_post: DriftParams
    s: float

    def __post_init__(self):
        if not 0.0 < self.s < 1.0:
            raise DomainError(f"change fraction s must lie in (0, 1), got {self.s}")


def make_grid(T: float, dt: float) -> np.ndarray:
    if not dt > 0 or not math.isfinite(dt):
        raise InvalidStep(f"dt must be positive, got {dt}")
    if not T >= dt:
        raise InvalidStep(f"horizon T={T} must be at least one step dt={dt}")
    n = int(round(T / dt))
    if abs(n * dt - T) > 1e-9 * T:
        raise InvalidStep(f"T={T} is not an integer multiple of dt={dt}")
    times = np.arange(n + 1) * dt
    times[-1] = T
    return times


def change_index(s: float, n_steps: int) -> int:
    """Nearest grid index to ``s * N``; ties go to the lower index."""
    k = math.ceil(s * n_steps - 0.5)
    if not 1 <= k <= n_steps - 1:
        raise DomainError(f"change fraction {s} does not fall strictly inside a grid of {n_steps} steps")
    return k


def stationary_init(model: ModelSpec, seed) -> float:
    """Draw ``X_0 ~ N(h_tilde(0), sigma^2 / (2 alpha))``, the time-0 stationary marginal."""
    z = generator(seed).standard_normal()
    return _stationary_value(model, z)


def _stationary_value(model: ModelSpec, z: float) -> float:
    alpha = model.theta.alpha
    if not alpha > 0:
        raise NonpositiveAlpha(f"alpha must be positive, got {alpha}")
    return h_tilde(model, 0.0) + model.sigma * math.sqrt(0.5 / alpha) * z


def _initial_value(model: ModelSpec, z0: float) -> float:
    if isinstance(model.init, str):
        return _stationary_value(model, z0)
    return model.init


def _exact_coefficients(model: ModelSpec, theta: DriftParams, n: int, dt: float):
    """Decay factor, drift increments ``int_0^dt e^{-alpha(dt-u)} L(t_k+u) du`` and noise sd."""
    alpha = theta.alpha
    if not alpha > 0:
        raise NonpositiveAlpha(f"alpha must be positive, got {alpha}")
    mu = np.asarray(theta.mu)
    drift = np.zeros(n)
    for x, w in zip(GL_NODES, GL_WEIGHTS):
        u = x * dt
        L = mu @ model.basis.on_grid(n, dt, offset=u)
        drift += (w * dt * math.exp(-alpha * (dt - u))) * L
    decay = math.exp(-alpha * dt)
    sd = model.sigma * math.sqrt(-math.expm1(-2.0 * alpha * dt) / (2.0 * alpha))
    return decay, drift, sd


def _euler_coefficients(model: ModelSpec, theta: DriftParams, n: int, dt: float):
    if not theta.alpha > 0:
        raise NonpositiveAlpha(f"alpha must be positive, got {theta.alpha}")
    L = np.asarray(theta.mu) @ model.basis.on_grid(n, dt)
    return 1.0 - theta.alpha * dt, L * dt, model.sigma * math.sqrt(dt)


def _recurse(x0: float, decay: float, forcing: np.ndarray) -> np.ndarray:
    """``x_{k+1} = decay * x_k + forcing_k``; returns ``x_1..x_n``."""
    u = forcing.copy()
    u[0] += decay * x0
    return lfilter([1.0], [1.0, -decay], u)


def _simulate(model, regimes, T, dt, seed, scheme, dB=None, record_change=None):
    if scheme not in SCHEMES:
        raise DomainError(f"unknown scheme {scheme!r}; expected one of {SCHEMES}")
    times = make_grid(T, dt)
    n = times.size - 1
    rng = generator(seed)
    z0 = rng.standard_normal()
    x0 = _initial_value(model.with_theta(regimes[0][1]), z0)
    coefficients = _exact_coefficients if scheme == "exact" else _euler_coefficients
    if dB is None:
        z = rng.standard_normal(n)
    else:
        if scheme != "euler":
            raise DomainError("external Brownian increments are only accepted by the Euler scheme")
        dB = np.asarray(dB, dtype=float)
        if dB.shape != (n,):
            raise DomainError(f"expected {n} Brownian increments, got shape {dB.shape}")
        z = dB / math.sqrt(dt)

    values = np.empty(n + 1)
    values[0] = x0
    for (start, theta), nxt in zip(regimes, regimes[1:] + [(n, None)]):
        stop = nxt[0]
        decay, drift, sd = coefficients(model, theta, n, dt)
        forcing = drift[start:stop] + sd * z[start:stop]
        values[start + 1 : stop + 1] = _recurse(values[start], decay, forcing)
    return SamplePath(times, values, model.basis.period, dt, _seed_tag(seed), scheme, record_change)


def _seed_tag(seed):
    return int(seed) if isinstance(seed, (int, np.integer)) else None


def simulate_exact(model: ModelSpec, T: float, dt: float, seed) -> SamplePath:
    """Exact Gaussian transitions; only the deterministic drift integral is approximated.

    ``X_{k+1} = e^{-alpha dt} X_k + int_0^dt e^{-alpha(dt-u)} L(t_k+u) du + eps_k`` with
    ``eps_k ~ N(0, sigma^2 (1 - e^{-2 alpha dt}) / (2 alpha))``.
    """
    return _simulate(model, [(0, model.theta)], T, dt, seed, "exact")


def simulate_euler(model: ModelSpec, T: float, dt: float, seed, *, dB=None) -> SamplePath:
    """Euler-Maruyama reference scheme.

    ``dB`` optionally supplies the Brownian increments (length ``N``) so several
    step sizes can be driven by one skeleton.
    """
    return _simulate(model, [(0, model.theta)], T, dt, seed, "euler", dB=dB)


def simulate_with_change(
    model: ModelSpec, change: ChangeSpec, T: float, dt: float, seed, scheme: str = "exact"
) -> SamplePath:
    """Drift ``theta_pre`` up to ``tau = s T`` (snapped to the grid), ``theta_post`` after.

    The initial value is drawn under ``theta_pre``. Equal pre/post parameters give
    the same path, bit for bit, as the no-change simulator.
    """
    n = make_grid(T, dt).size - 1
    k = change_index(change.s, n)
    if change.theta_pre == change.theta_post:
        regimes = [(0, change.theta_pre)]
    else:
        regimes = [(0, change.theta_pre), (k, change.theta_post)]
    return _simulate(model, regimes, T, dt, seed, scheme, record_change=k)
