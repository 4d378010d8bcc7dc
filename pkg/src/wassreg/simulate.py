"""Data generators for the location-scale simulation design.

Responses are built in quantile space as ``Q_i = T_i o (nu(X_i) + tau(X_i) Q_0)``
where ``Q_0`` is the quantile function of a standard normal truncated to
``[-2.5, 2.5]`` and ``T_i`` is a random transport map with identity mean.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache
from typing import Optional

import numpy as np
from scipy import special

from .errors import DomainError, InputError
from .fit import Dataset
from .quantile import (
    DensityCurve,
    QuantileCurve,
    QuantileDensityCurve,
    TimeGrid,
    monotone_projection,
    trapezoid_excess,
)

TRUNC = 2.5
K_CHOICES = np.array([-0.25, -0.125, 0.0, 0.125, 0.25])
DIRICHLET_ORDER = 10
SECONDARY_SIZE = 300
_PHI_LO = special.ndtr(-TRUNC)
_MASS = special.ndtr(TRUNC) - _PHI_LO


def base_quantile(t) -> np.ndarray:
    """Quantile function of the truncated normal, exactly odd about 1/2."""
    t = np.asarray(t, dtype=float)
    lo = np.minimum(t, 1.0 - t)
    z = special.ndtri(_PHI_LO + lo * _MASS)
    z = np.where(lo <= 0, -TRUNC, z)
    return np.where(t > 0.5, -z, np.where(t == 0.5, 0.0, z))


def base_pdf(u) -> np.ndarray:
    u = np.asarray(u, dtype=float)
    f = np.exp(-u * u / 2) / np.sqrt(2 * np.pi) / _MASS
    return np.where(np.abs(u) <= TRUNC, f, 0.0)


def base_quantile_density(t) -> tuple[np.ndarray, np.ndarray]:
    """``q_0 = 1 / f_0(Q_0)`` and its derivative ``q_0' = Q_0 q_0^2``."""
    Q = base_quantile(t)
    q = 1.0 / base_pdf(Q)
    return q, Q * q * q


def base_density(grid: Optional[TimeGrid] = None):
    """Truncated standard normal as ``(DensityCurve, QuantileCurve, QuantileDensityCurve)``."""
    grid = grid or TimeGrid.uniform()
    t = grid.points
    Q = base_quantile(t)
    q, dq = base_quantile_density(t)
    dens = DensityCurve(Q, base_pdf(Q), np.array(t),
                        integral_tol=1e-6 + trapezoid_excess(q, t))
    return dens, QuantileCurve(grid, Q), QuantileDensityCurve(grid, q, dq)


@dataclass(frozen=True)
class TransportSpec:
    """Law of the random transport maps."""

    kind: str = "linear"

    def __post_init__(self):
        if self.kind not in ("linear", "nonlinear", "none"):
            raise DomainError(f"unknown transport kind {self.kind!r}")


@dataclass(frozen=True, eq=False)
class Transport:
    """One realized transport map ``T`` with its first two derivatives.

    Linear maps use ``coef = (V1, V2)``; nonlinear maps mix templates
    ``M_k(u) = u - sin(k u) / |k|`` with weights ``weights`` and frequencies ``freqs``.
    """

    kind: str
    coef: tuple = (0.0, 1.0)
    weights: np.ndarray = field(default_factory=lambda: np.ones(1))
    freqs: np.ndarray = field(default_factory=lambda: np.zeros(1))

    def __call__(self, u) -> np.ndarray:
        u = np.asarray(u, dtype=float)
        if self.kind == "linear":
            return self.coef[0] + self.coef[1] * u
        if self.kind == "none":
            return u.copy()
        k = self.freqs.reshape(-1, *([1] * u.ndim))
        ak = np.where(k == 0, 1.0, np.abs(k))
        wiggle = np.where(k == 0, 0.0, np.sin(k * u) / ak)
        return u - np.tensordot(self.weights, wiggle, axes=1)

    def derivative(self, u) -> np.ndarray:
        u = np.asarray(u, dtype=float)
        if self.kind == "linear":
            return np.full(u.shape, float(self.coef[1]))
        if self.kind == "none":
            return np.ones(u.shape)
        k = self.freqs.reshape(-1, *([1] * u.ndim))
        return 1.0 - np.tensordot(self.weights, np.sign(k) * np.cos(k * u), axes=1)

    def second_derivative(self, u) -> np.ndarray:
        u = np.asarray(u, dtype=float)
        if self.kind != "nonlinear":
            return np.zeros(u.shape)
        k = self.freqs.reshape(-1, *([1] * u.ndim))
        return np.tensordot(self.weights, np.abs(k) * np.sin(k * u), axes=1)


def sample_transport(spec: TransportSpec, rng: np.random.Generator) -> Transport:
    if spec.kind == "linear":
        return Transport("linear", (rng.uniform(-0.5, 0.5), rng.uniform(0.5, 1.5)))
    if spec.kind == "nonlinear":
        w = rng.dirichlet(np.ones(DIRICHLET_ORDER))
        k = rng.choice(K_CHOICES, size=DIRICHLET_ORDER)
        return Transport("nonlinear", weights=w, freqs=k)
    return Transport("none")


@dataclass(frozen=True)
class SimConfig:
    """One simulation setting.

    ``alpha`` and ``beta`` hold the location and scale slopes, one per
    predictor: ``nu(x) = alpha . x`` and ``tau(x) = 2 + beta . x``.
    """

    n: int
    p: int = 2
    alpha: tuple = (0.0, 0.0)
    beta: tuple = (0.0, 0.0)
    transport: str = "linear"
    indirect: bool = False
    secondary_size: int = SECONDARY_SIZE
    grid_size: int = 1001
    seed: int = 0
    reps: int = 500

    def __post_init__(self):
        if self.p not in (1, 2):
            raise DomainError("the design uses one or two predictors")
        if len(self.alpha) != self.p or len(self.beta) != self.p:
            raise DomainError("one location and one scale slope per predictor")
        TransportSpec(self.transport)
        corners = np.array(np.meshgrid(*[[-0.5, 0.5]] * self.p)).reshape(self.p, -1).T
        if np.any(2.0 + corners @ np.asarray(self.beta, float) <= 0):
            raise DomainError("scale tau(x) must stay positive on [-0.5, 0.5]^p")
        if self.n < self.p + 2:
            raise DomainError("sample size too small for the design")
        if self.indirect and self.secondary_size < 20:
            raise DomainError("secondary samples need at least 20 draws")

    @property
    def grid(self) -> TimeGrid:
        return _uniform_grid(self.grid_size)

    def location(self, X) -> np.ndarray:
        return np.atleast_2d(X) @ np.asarray(self.alpha, float)

    def scale(self, X) -> np.ndarray:
        return 2.0 + np.atleast_2d(X) @ np.asarray(self.beta, float)

    def true_quantile(self, x, t=None) -> np.ndarray:
        """Conditional Wasserstein mean quantile ``nu(x) + tau(x) Q_0``."""
        t = self.grid.points if t is None else t
        x = np.atleast_1d(np.asarray(x, float))
        return self.location(x)[0] + self.scale(x)[0] * base_quantile(t)

    def true_density(self, x, u) -> np.ndarray:
        x = np.atleast_1d(np.asarray(x, float))
        nu, tau = self.location(x)[0], self.scale(x)[0]
        return base_pdf((np.asarray(u, float) - nu) / tau) / tau


@lru_cache(maxsize=8)
def _uniform_grid(m: int) -> TimeGrid:
    return TimeGrid.uniform(m)


@dataclass(frozen=True, eq=False)
class SimulatedData:
    """Generated dataset with its ground-truth conditional quantiles."""

    data: Dataset
    truth: np.ndarray
    config: SimConfig


def generate_dataset(config: SimConfig, rng: np.random.Generator) -> SimulatedData:
    grid = config.grid
    t = grid.points
    n = config.n
    X = rng.uniform(-0.5, 0.5, size=(n, config.p))
    Q0 = base_quantile(t)
    q0, dq0 = base_quantile_density(t)
    nu, tau = config.location(X), config.scale(X)
    Z = nu[:, None] + tau[:, None] * Q0
    spec = TransportSpec(config.transport)
    Q = np.empty_like(Z)
    q = np.empty_like(Z)
    dq = np.empty_like(Z)
    maps = [sample_transport(spec, rng) for _ in range(n)]
    for i, T in enumerate(maps):
        d1, d2 = T.derivative(Z[i]), T.second_derivative(Z[i])
        Q[i] = T(Z[i])
        q[i] = d1 * tau[i] * q0
        dq[i] = d2 * (tau[i] * q0) ** 2 + d1 * tau[i] * dq0
    if config.indirect:
        Q, q, dq = _observe_indirectly(maps, nu, tau, grid, config.secondary_size, rng)
    data = Dataset(X, Q, grid, q, dq, fixed_support=False)
    return SimulatedData(data, Z, config)


def _observe_indirectly(maps, nu, tau, grid, size, rng):
    n = len(maps)
    Q = np.empty((n, grid.size))
    q = np.empty_like(Q)
    dq = np.empty_like(Q)
    smoother = local_linear_smoother(size, grid)
    for i, T in enumerate(maps):
        u = rng.uniform(size=size)
        sample = T(nu[i] + tau[i] * base_quantile(u))
        Q[i], q[i], dq[i] = smoothed_quantile_arrays(np.sort(sample), grid, smoother)
    return Q, q, dq


def default_bandwidth(size: int) -> float:
    """Normal-reference bandwidth on the plotting-position scale."""
    pos = np.linspace(0.0, 1.0, size)
    return 1.06 * float(np.std(pos)) * size ** (-0.2)


@lru_cache(maxsize=16)
def _smoother_cached(size: int, grid: TimeGrid, bandwidth: float) -> np.ndarray:
    pos = np.linspace(0.0, 1.0, size)
    t = grid.points
    d = pos[None, :] - t[:, None]
    k = np.clip(1.0 - (d / bandwidth) ** 2, 0.0, None)
    s0, s1, s2 = k.sum(1), (k * d).sum(1), (k * d * d).sum(1)
    L = k * (s2[:, None] - s1[:, None] * d)
    L /= (s0 * s2 - s1 * s1)[:, None]
    L.setflags(write=False)
    return L


def local_linear_smoother(size: int, grid: TimeGrid,
                          bandwidth: Optional[float] = None) -> np.ndarray:
    """Epanechnikov local-linear smoothing matrix from plotting positions to the grid."""
    h = default_bandwidth(size) if bandwidth is None else float(bandwidth)
    if h <= 0:
        raise DomainError("bandwidth must be positive")
    return _smoother_cached(size, grid, h)


def smoothed_quantile_arrays(sorted_sample, grid, smoother):
    if smoother is None:
        pos = np.linspace(0.0, 1.0, sorted_sample.size)
        Q = np.interp(grid.points, pos, sorted_sample)
    else:
        Q = monotone_projection(smoother @ sorted_sample, grid.weights)
    t = grid.points
    q = np.gradient(Q, t, edge_order=2)
    return Q, q, np.gradient(q, t, edge_order=2)


def empirical_quantile_from_sample(sample, grid: TimeGrid, smoothing: str = "local_linear",
                                   bandwidth: Optional[float] = None):
    """Quantile curve and finite-difference quantile densities of a raw sample.

    Empirical quantiles sit at plotting positions ``(k - 1) / (N - 1)`` and are
    either interpolated linearly or smoothed by local-linear regression.  The
    quantile density comes from finite differences; a flat curve (for
    instance a constant sample) has zero quantile density and is rejected.
    """
    x = np.sort(np.asarray(sample, dtype=float).ravel())
    if x.size < 20:
        raise InputError("need at least 20 draws to estimate a quantile function")
    if not np.all(np.isfinite(x)):
        raise InputError("sample contains non-finite values")
    if smoothing not in ("none", "local_linear"):
        raise DomainError(f"unknown smoothing {smoothing!r}")
    L = None if smoothing == "none" else local_linear_smoother(x.size, grid, bandwidth)
    Q, q, dq = smoothed_quantile_arrays(x, grid, L)
    return QuantileCurve(grid, Q), QuantileDensityCurve(grid, q, dq)
