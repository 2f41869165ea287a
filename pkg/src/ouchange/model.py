"""Periodic basis, drift parameters and the deterministic quantities of the model.

The process is ``dX_t = (L(t) - alpha X_t) dt + sigma dB_t`` with
``L(t) = sum_i mu_i phi_i(t)`` and every ``phi_i`` periodic with period ``nu``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence, Union

import numpy as np

from .errors import DependentBasis, DimensionMismatch, DomainError, NonpositiveAlpha

GL_ORDER = 8
_GL_X, _GL_W = np.polynomial.legendre.leggauss(GL_ORDER)
# Gauss-Legendre on [0, 1]
GL_NODES = 0.5 * (_GL_X + 1.0)
GL_WEIGHTS = 0.5 * _GL_W


def composite_gauss_legendre(a: float, b: float, n_panels: int) -> tuple[np.ndarray, np.ndarray]:
    """Nodes and weights of composite 8-point Gauss-Legendre on ``[a, b]``."""
    edges = np.linspace(a, b, n_panels + 1)
    width = np.diff(edges)
    nodes = (edges[:-1, None] + width[:, None] * GL_NODES[None, :]).ravel()
    weights = (width[:, None] * GL_WEIGHTS[None, :]).ravel()
    return nodes, weights


class Harmonic:
    """``sqrt(2) cos(2 pi k t / nu)`` or ``sqrt(2) sin(...)``; ``k = 0`` is the constant 1."""

    def __init__(self, k: int, kind: str, period: float):
        if kind not in ("cos", "sin"):
            raise ValueError(f"kind must be 'cos' or 'sin', got {kind!r}")
        self.k = int(k)
        self.kind = kind
        self.period = float(period)

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        if self.k == 0:
            return np.ones_like(t)
        arg = 2.0 * math.pi * self.k * t / self.period
        return math.sqrt(2.0) * (np.cos(arg) if self.kind == "cos" else np.sin(arg))

    def __repr__(self):
        if self.k == 0:
            return "1"
        return f"sqrt(2)*{self.kind}(2*pi*{self.k}*t/{self.period:g})"


class Constant:
    def __init__(self, value: float = 1.0):
        self.value = float(value)

    def __call__(self, t):
        return np.full(np.shape(t), self.value)

    def __repr__(self):
        return f"{self.value:g}"


class PeriodicSpline:
    """Periodic cubic spline through samples taken on a uniform grid over one period."""

    def __init__(self, samples: Sequence[float], period: float):
        from scipy.interpolate import CubicSpline

        y = np.asarray(samples, dtype=float)
        if y.ndim != 1 or y.size < 3:
            raise DomainError("tabulated basis needs at least 3 samples per function")
        self.period = float(period)
        knots = np.linspace(0.0, self.period, y.size + 1)
        self._spline = CubicSpline(knots, np.append(y, y[0]), bc_type="periodic")

    def __call__(self, t):
        return self._spline(np.mod(np.asarray(t, dtype=float), self.period))

    def __repr__(self):
        return f"PeriodicSpline(n={self._spline.x.size - 1}, period={self.period:g})"


@dataclass(frozen=True, eq=False)
class PeriodicBasis:
    """Basis ``phi = coef @ (f_1, ..., f_r)`` of ``nu``-periodic functions.

    Parameters
    ----------
    period : float
        Period ``nu`` in time units.
    functions : tuple of callables
        Vectorised raw functions, evaluated on ``[0, nu)``.
    coef : ndarray, shape (p, r)
        Mixing matrix producing the basis from the raw functions.
    quad_points : int
        Gauss-Legendre nodes per period used by all ``int_0^nu`` quadratures.
    """

    period: float
    functions: tuple
    coef: np.ndarray
    quad_points: int = 64
    family: str = "custom"

    def __post_init__(self):
        if not self.period > 0:
            raise DomainError(f"period must be positive, got {self.period}")
        coef = np.array(self.coef, dtype=float, ndmin=2)
        if coef.shape[1] != len(self.functions):
            raise DimensionMismatch(
                f"coef has {coef.shape[1]} columns for {len(self.functions)} functions"
            )
        if coef.shape[0] < 1:
            raise DomainError("basis needs at least one function")
        if self.quad_points < GL_ORDER:
            raise DomainError(f"quad_points must be at least {GL_ORDER}")
        coef.setflags(write=False)
        object.__setattr__(self, "coef", coef)
        object.__setattr__(self, "functions", tuple(self.functions))

    @property
    def p(self) -> int:
        return self.coef.shape[0]

    def evaluate(self, t) -> np.ndarray:
        """Basis values at ``t``; result has shape ``(p,) + shape(t)``."""
        t = np.asarray(t, dtype=float)
        phase = np.mod(t, self.period)
        raw = np.stack([np.broadcast_to(f(phase), phase.shape) for f in self.functions])
        return np.tensordot(self.coef, raw, axes=1)

    def on_grid(self, n: int, dt: float, offset: float = 0.0) -> np.ndarray:
        """Values at ``i*dt + offset`` for ``i = 0..n-1``, shape ``(p, n)``.

        When a period holds a whole number of steps the values of one period
        are tiled, which makes the result exactly periodic in ``i``.
        """
        steps = self.period / dt
        m = int(round(steps))
        if m >= 1 and abs(steps - m) <= 1e-9 * steps and n > m:
            one = self.evaluate(np.arange(m) * dt + offset)
            return one[:, np.arange(n) % m]
        return self.evaluate(np.arange(n) * dt + offset)

    def quadrature(self) -> tuple[np.ndarray, np.ndarray]:
        n_panels = max(1, math.ceil(self.quad_points / GL_ORDER))
        return composite_gauss_legendre(0.0, self.period, n_panels)

    def describe(self) -> dict:
        return {
            "family": self.family,
            "period": self.period,
            "p": self.p,
            "quad_points": self.quad_points,
            "functions": [repr(f) for f in self.functions],
        }


def fourier_basis(p: int, period: float = 1.0, quad_points: int = 64) -> PeriodicBasis:
    """``1, sqrt2 cos(2 pi t/nu), sqrt2 sin(2 pi t/nu), sqrt2 cos(4 pi t/nu), ...``

    Already orthonormal in the sense ``int_0^nu phi_j phi_k = nu * delta_jk``.
    """
    if p < 1:
        raise DomainError(f"p must be >= 1, got {p}")
    funcs = [Harmonic(0, "cos", period)]
    k = 1
    while len(funcs) < p:
        funcs.append(Harmonic(k, "cos", period))
        if len(funcs) < p:
            funcs.append(Harmonic(k, "sin", period))
        k += 1
    return PeriodicBasis(period, tuple(funcs), np.eye(p), quad_points, family="fourier")


def constant_basis(period: float = 1.0, quad_points: int = 64) -> PeriodicBasis:
    return fourier_basis(1, period, quad_points)


def orthonormalize(
    functions: Union[PeriodicBasis, Sequence[Callable]],
    period: float | None = None,
    *,
    quad_points: int = 64,
    tol: float = 1e-10,
) -> PeriodicBasis:
    """Gram-Schmidt with respect to ``<f, g> = int_0^nu f g dt``, normalised to ``nu``.

    Modified Gram-Schmidt with one re-orthogonalisation pass on the function
    values at the quadrature nodes; the coefficient matrix is carried along so
    the result is exact in the span of the inputs. Each output function is
    flipped so that its first non-negligible node value is positive.

    Raises
    ------
    DependentBasis
        If a residual norm drops below ``tol * nu``.
    """
    if isinstance(functions, PeriodicBasis):
        start = functions
        raw = start.functions
        coef0 = np.array(start.coef)
        period = start.period if period is None else period
        quad_points = start.quad_points
    else:
        raw = tuple(functions)
        coef0 = np.eye(len(raw))
        if period is None:
            raise DomainError("period is required when passing raw functions")
    probe = PeriodicBasis(period, raw, coef0, quad_points)
    nodes, weights = probe.quadrature()
    values = probe.evaluate(nodes)

    def inner(a, b):
        return float(np.sum(weights * a * b))

    q_vals: list[np.ndarray] = []
    q_coef: list[np.ndarray] = []
    for i in range(probe.p):
        v, c = values[i].copy(), coef0[i].copy()
        for _ in range(2):
            for qv, qc in zip(q_vals, q_coef):
                proj = inner(qv, v) / period
                v -= proj * qv
                c -= proj * qc
        norm = math.sqrt(inner(v, v))
        if norm < tol * period:
            raise DependentBasis(
                f"basis function {i + 1} is numerically dependent on the previous ones "
                f"(residual norm {norm:.3e} < {tol * period:.3e})"
            )
        scale = math.sqrt(period) / norm
        v, c = v * scale, c * scale
        big = np.flatnonzero(np.abs(v) > 1e-8 * np.max(np.abs(v)))
        if v[big[0]] < 0:
            v, c = -v, -c
        q_vals.append(v)
        q_coef.append(c)
    return PeriodicBasis(period, raw, np.array(q_coef), quad_points, family="orthonormalized")


def gram_matrix(basis: PeriodicBasis) -> np.ndarray:
    """``(int_0^nu phi_j phi_k dt)_{jk}`` by composite Gauss-Legendre."""
    nodes, weights = basis.quadrature()
    vals = basis.evaluate(nodes)
    g = (vals * weights) @ vals.T
    return 0.5 * (g + g.T)


@dataclass(frozen=True)
class DriftParams:
    mu: tuple
    alpha: float

    def __post_init__(self):
        object.__setattr__(self, "mu", tuple(float(m) for m in np.atleast_1d(self.mu)))
        object.__setattr__(self, "alpha", float(self.alpha))

    @property
    def p(self) -> int:
        return len(self.mu)

    @property
    def vector(self) -> np.ndarray:
        """``theta = (mu_1, ..., mu_p, alpha)``."""
        return np.array(self.mu + (self.alpha,))

    @classmethod
    def from_vector(cls, theta) -> "DriftParams":
        theta = np.asarray(theta, dtype=float)
        return cls(tuple(theta[:-1]), float(theta[-1]))


STATIONARY = "stationary"


@dataclass(frozen=True, eq=False)
class ModelSpec:
    """Basis, drift, diffusion and initial-value policy.

    ``init`` is either the string ``"stationary"`` or a float ``x0``.
    ``sigma = 0`` is accepted to produce deterministic reference trajectories.
    """

    basis: PeriodicBasis
    theta: DriftParams
    sigma: float
    init: Union[str, float] = STATIONARY

    def __post_init__(self):
        if self.theta.p != self.basis.p:
            raise DimensionMismatch(
                f"mu has length {self.theta.p} but the basis has {self.basis.p} functions"
            )
        if not self.sigma >= 0 or not math.isfinite(self.sigma):
            raise DomainError(f"sigma must be nonnegative and finite, got {self.sigma}")
        if isinstance(self.init, str):
            if self.init != STATIONARY:
                raise DomainError(f"unknown init policy {self.init!r}")
        else:
            object.__setattr__(self, "init", float(self.init))

    def with_theta(self, theta: DriftParams) -> "ModelSpec":
        return ModelSpec(self.basis, theta, self.sigma, self.init)

    def describe(self) -> dict:
        return {
            "basis": self.basis.describe(),
            "mu": list(self.theta.mu),
            "alpha": self.theta.alpha,
            "sigma": self.sigma,
            "init": self.init if isinstance(self.init, str) else {"fixed": self.init},
        }


def eval_mean_reversion(basis: PeriodicBasis, mu, t):
    """``L(t) = sum_i mu_i phi_i(t mod nu)``; scalar in, scalar out."""
    mu = np.asarray(mu, dtype=float)
    if mu.shape != (basis.p,):
        raise DimensionMismatch(f"mu must have length {basis.p}, got shape {mu.shape}")
    out = np.tensordot(mu, basis.evaluate(t), axes=1)
    return float(out) if np.ndim(out) == 0 else out


def _require_alpha(alpha: float) -> None:
    if not alpha > 0:
        raise NonpositiveAlpha(f"alpha must be positive, got {alpha}")


def _damped_integral(model: ModelSpec, u: np.ndarray) -> np.ndarray:
    """``int_0^u exp(-alpha (u - s)) L(s) ds`` for each ``u`` in ``[0, nu]``."""
    alpha = model.theta.alpha
    mu = np.asarray(model.theta.mu)
    n_panels = max(1, math.ceil(model.basis.quad_points / GL_ORDER))
    x, w = composite_gauss_legendre(0.0, 1.0, n_panels)
    u = np.asarray(u, dtype=float)
    s = u[..., None] * x
    kernel = np.exp(-alpha * (u[..., None] - s))
    L = np.tensordot(mu, model.basis.evaluate(s), axes=1)
    return u * np.sum(w * kernel * L, axis=-1)


def h_tilde(model: ModelSpec, t):
    """Periodic stationary mean: the unique ``nu``-periodic solution of ``h' = L - alpha h``.

    ``h(0)`` is the fixed point of the one-period flow and ``h(t)`` follows by
    integrating the linear ODE forward over ``[0, t mod nu]``.
    """
    alpha = model.theta.alpha
    _require_alpha(alpha)
    nu = model.basis.period
    h0 = float(_damped_integral(model, np.array(nu))) / -math.expm1(-alpha * nu)
    t = np.asarray(t, dtype=float)
    u = np.mod(t, nu)
    out = np.exp(-alpha * u) * h0 + _damped_integral(model, u)
    return float(out) if out.ndim == 0 else out


def sigma_matrix(model: ModelSpec) -> np.ndarray:
    """Limit matrix ``Sigma`` of ``Q_T / T`` with the regressor ``+X`` in the last slot.

    Top-left block is the basis Gram matrix (``nu I`` once orthonormalised),
    off-diagonal ``int phi_i h``, corner ``int h^2 + nu sigma^2 / (2 alpha)``.
    """
    alpha = model.theta.alpha
    _require_alpha(alpha)
    basis = model.basis
    nu = basis.period
    nodes, weights = basis.quadrature()
    phi = basis.evaluate(nodes)
    h = h_tilde(model, nodes)
    p = basis.p
    sig = np.empty((p + 1, p + 1))
    sig[:p, :p] = gram_matrix(basis)
    lam = phi @ (weights * h)
    sig[:p, p] = lam
    sig[p, :p] = lam
    sig[p, p] = float(np.sum(weights * h * h)) + nu * model.sigma**2 / (2.0 * alpha)
    return sig


def q_limit(model: ModelSpec) -> np.ndarray:
    """Limit of ``Q_T / T`` for the ``(phi_1..phi_p, -X)`` regressors used by ``SuffStats``.

    Same as :func:`sigma_matrix` with the sign of the last row and column flipped.
    """
    d = np.ones(model.basis.p + 1)
    d[-1] = -1.0
    return sigma_matrix(model) * np.outer(d, d)
