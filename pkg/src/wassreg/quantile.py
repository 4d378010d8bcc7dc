"""Grid representation of univariate distributions through quantile functions.

A distribution is stored canonically as its quantile function sampled on a
fixed grid ``0 = t_1 < ... < t_m = 1``.  Integrals over ``[0, 1]`` use the
trapezoid rule, whose quadrature matrix is diagonal, so every inner product is
a weighted dot product with the weights held by :class:`TimeGrid`.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import DimensionError, DomainError

#: Decreases smaller than this are treated as rounding noise and snapped.
SNAP_TOL = 1e-12

DEFAULT_GRID_SIZE = 1001


def trapezoid_weights(points: np.ndarray) -> np.ndarray:
    """Trapezoid-rule quadrature weights for an ordered set of nodes."""
    points = np.asarray(points, dtype=float)
    gaps = np.diff(points)
    w = np.empty_like(points)
    w[0] = gaps[0] / 2
    w[-1] = gaps[-1] / 2
    w[1:-1] = (gaps[:-1] + gaps[1:]) / 2
    return w


@dataclass(frozen=True, eq=False)
class TimeGrid:
    """Ordered grid on [0, 1] with trapezoid weights.

    Parameters
    ----------
    points : array_like, shape (m,)
        Strictly increasing nodes, first equal to 0 and last equal to 1.
    """

    points: np.ndarray
    weights: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        pts = np.array(self.points, dtype=float)
        if pts.ndim != 1 or pts.size < 2:
            raise DimensionError("grid needs at least two points")
        if pts[0] != 0.0 or pts[-1] != 1.0:
            raise DomainError("grid must start at 0 and end at 1")
        if np.any(np.diff(pts) <= 0):
            raise DomainError("grid points must be strictly increasing")
        pts.setflags(write=False)
        w = trapezoid_weights(pts)
        w.setflags(write=False)
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "weights", w)

    @classmethod
    def uniform(cls, m: int = DEFAULT_GRID_SIZE) -> "TimeGrid":
        if m < 2:
            raise DomainError("grid size must be at least 2")
        pts = np.linspace(0.0, 1.0, m)
        pts[-1] = 1.0
        return cls(pts)

    @property
    def size(self) -> int:
        return self.points.size

    def __len__(self) -> int:
        return self.points.size

    def __eq__(self, other) -> bool:
        if not isinstance(other, TimeGrid):
            return NotImplemented
        return self is other or (
            self.size == other.size and np.array_equal(self.points, other.points)
        )

    def __hash__(self) -> int:
        return hash((self.size, self.points.tobytes()))

    def trim_mask(self, delta: float) -> np.ndarray:
        """Boolean mask of the points lying in ``[delta, 1 - delta]``."""
        if not 0.0 < delta < 0.5:
            raise DomainError(f"delta must lie in (0, 1/2), got {delta}")
        eps = 1e-12
        return (self.points >= delta - eps) & (self.points <= 1.0 - delta + eps)


def _readonly(a) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


def validate_monotone(values: np.ndarray, tol: float = SNAP_TOL) -> np.ndarray:
    """Return ``values`` with sub-``tol`` decreases snapped away.

    Raises
    ------
    DomainError
        If some step decreases by more than ``tol``.
    """
    values = np.array(values, dtype=float)
    steps = np.diff(values)
    if steps.size and steps.min() < -tol:
        k = int(np.argmin(steps))
        raise DomainError(
            f"values decrease by {-steps[k]:.3g} between positions {k} and {k + 1}"
        )
    if steps.size and steps.min() < 0:
        values = np.maximum.accumulate(values)
    return values


@dataclass(frozen=True, eq=False)
class QuantileCurve:
    """Quantile function sampled on a :class:`TimeGrid`.

    ``unconstrained=True`` skips the monotonicity check; use it for raw
    weighted averages before projection.
    """

    grid: TimeGrid
    values: np.ndarray
    unconstrained: bool = False

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float)
        if vals.shape != (self.grid.size,):
            raise DimensionError(
                f"expected {self.grid.size} values, got shape {vals.shape}"
            )
        if not np.all(np.isfinite(vals)):
            raise DomainError("quantile values must be finite")
        if not self.unconstrained:
            vals = validate_monotone(vals)
        object.__setattr__(self, "values", _readonly(vals))

    def __call__(self, t) -> np.ndarray:
        return np.interp(t, self.grid.points, self.values)

    def inverse(self, u) -> np.ndarray:
        """Cdf at ``u``; see :func:`invert_quantile`."""
        return invert_quantile(self, u)


@dataclass(frozen=True, eq=False)
class QuantileDensityCurve:
    """Quantile density ``q = Q'`` and optionally its derivative ``q'``."""

    grid: TimeGrid
    q_values: np.ndarray
    dq_values: Optional[np.ndarray] = None

    def __post_init__(self):
        q = np.asarray(self.q_values, dtype=float)
        if q.shape != (self.grid.size,):
            raise DimensionError("q_values must match the grid")
        if np.any(q[1:-1] <= 0):
            raise DomainError("quantile density must be positive on the interior")
        object.__setattr__(self, "q_values", _readonly(q))
        if self.dq_values is not None:
            dq = np.asarray(self.dq_values, dtype=float)
            if dq.shape != (self.grid.size,):
                raise DimensionError("dq_values must match the grid")
            object.__setattr__(self, "dq_values", _readonly(dq))


@dataclass(frozen=True, eq=False)
class DensityCurve:
    """Density sampled at ordered abscissae, with the cdf at the same points."""

    support: np.ndarray
    values: np.ndarray
    cdf: np.ndarray
    integral_tol: float = 1e-6

    def __post_init__(self):
        u = np.asarray(self.support, dtype=float)
        f = np.asarray(self.values, dtype=float)
        F = np.asarray(self.cdf, dtype=float)
        if not (u.shape == f.shape == F.shape) or u.ndim != 1:
            raise DimensionError("support, values and cdf must have equal length")
        if np.any(np.diff(u) <= 0):
            raise DomainError("support must be strictly increasing")
        if np.any(f < 0):
            raise DomainError("density values must be nonnegative")
        if np.any(np.diff(F) < -SNAP_TOL) or F[0] < -SNAP_TOL or F[-1] > 1 + SNAP_TOL:
            raise DomainError("cdf must be nondecreasing within [0, 1]")
        if abs(self._trapz(u, f) - 1.0) > self.integral_tol:
            raise DomainError("density does not integrate to one")
        for name, a in (("support", u), ("values", f), ("cdf", F)):
            object.__setattr__(self, name, _readonly(a))

    @staticmethod
    def _trapz(u, f) -> float:
        return float(np.sum(np.diff(u) * (f[1:] + f[:-1]) / 2))

    def integral(self) -> float:
        return self._trapz(self.support, self.values)

    def __call__(self, u) -> np.ndarray:
        return np.interp(u, self.support, self.values, left=0.0, right=0.0)


def _check_same_grid(a: QuantileCurve, b: QuantileCurve) -> None:
    if a.grid != b.grid:
        raise DimensionError("quantile curves live on different grids")


def trapezoid_inner_product(g, h, grid: TimeGrid) -> float:
    """Trapezoid approximation of the integral of ``g * h`` over [0, 1]."""
    g = np.asarray(g, dtype=float)
    h = np.asarray(h, dtype=float)
    if g.shape != (grid.size,) or h.shape != (grid.size,):
        raise DimensionError(
            f"sequences of shape {g.shape} and {h.shape} do not match a grid of "
            f"{grid.size} points"
        )
    return float(np.dot(grid.weights * g, h))


def wasserstein2_distance(Q1: QuantileCurve, Q2: QuantileCurve) -> float:
    """Wasserstein-2 distance between two distributions on a common grid."""
    _check_same_grid(Q1, Q2)
    diff = Q1.values - Q2.values
    return float(np.sqrt(max(np.dot(Q1.grid.weights, diff * diff), 0.0)))


def wasserstein_inf_distance(Q1: QuantileCurve, Q2: QuantileCurve) -> float:
    """Wasserstein-infinity distance, the sup-norm gap of the quantile curves."""
    _check_same_grid(Q1, Q2)
    return float(np.max(np.abs(Q1.values - Q2.values)))


def monotone_projection(y, weights=None, lower_bound=None, upper_bound=None) -> np.ndarray:
    """Weighted least-squares projection onto nondecreasing sequences.

    Solves ``min sum_l w_l (b_l - y_l)^2`` over nondecreasing ``b``, optionally
    subject to ``b >= lower_bound`` or ``b <= upper_bound`` pointwise, with the
    pool-adjacent-violators algorithm. A pooled block takes the larger of its
    weighted mean and the largest lower bound it contains, which keeps the
    algorithm exact in the bounded case.

    Parameters
    ----------
    y : array_like, shape (m,)
    weights : array_like, shape (m,), optional
        Strictly positive weights; defaults to ones.
    lower_bound, upper_bound : array_like, shape (m,), optional
        At most one of the two may be given.

    Returns
    -------
    numpy.ndarray
        The projected sequence.
    """
    y = np.asarray(y, dtype=float)
    if y.ndim != 1:
        raise DimensionError("monotone_projection expects a 1-d sequence")
    w = np.ones_like(y) if weights is None else np.asarray(weights, dtype=float)
    if w.shape != y.shape:
        raise DimensionError("weights must match y")
    if np.any(w <= 0) or not np.all(np.isfinite(w)):
        raise DomainError("weights must be strictly positive")
    if lower_bound is not None and upper_bound is not None:
        raise DomainError("give either a lower or an upper bound, not both")
    if upper_bound is not None:
        ub = np.asarray(upper_bound, dtype=float)
        if ub.shape != y.shape:
            raise DimensionError("upper_bound must match y")
        return -monotone_projection(-y[::-1], w[::-1], lower_bound=-ub[::-1])[::-1]
    if lower_bound is None:
        lb = np.full_like(y, -np.inf)
    else:
        lb = np.asarray(lower_bound, dtype=float)
        if lb.shape != y.shape:
            raise DimensionError("lower_bound must match y")
    return _pava(y, w, lb)


def _pava(y: np.ndarray, w: np.ndarray, lb: np.ndarray) -> np.ndarray:
    m = y.size
    # Block stacks: total weight, weighted sum, max lower bound, value, start index.
    tw = np.empty(m)
    ts = np.empty(m)
    tl = np.empty(m)
    val = np.empty(m)
    start = np.empty(m, dtype=np.int64)
    k = -1
    for i in range(m):
        k += 1
        tw[k] = w[i]
        ts[k] = w[i] * y[i]
        tl[k] = lb[i]
        val[k] = max(y[i], lb[i])
        start[k] = i
        while k > 0 and val[k - 1] > val[k]:
            tw[k - 1] += tw[k]
            ts[k - 1] += ts[k]
            tl[k - 1] = max(tl[k - 1], tl[k])
            val[k - 1] = max(ts[k - 1] / tw[k - 1], tl[k - 1])
            k -= 1
    out = np.empty(m)
    ends = np.append(start[1 : k + 1], m)
    for j in range(k + 1):
        out[start[j] : ends[j]] = val[j]
    return out


def invert_quantile(Q: QuantileCurve, u) -> np.ndarray | float:
    """Evaluate the cdf ``F = Q^{-1}`` by piecewise-linear inversion.

    Flat stretches of ``Q`` map to the right end of their t-interval, which
    makes the cdf right-continuous. Arguments below ``Q(0)`` give 0, above
    ``Q(1)`` give 1.
    """
    scalar = np.ndim(u) == 0
    u = np.atleast_1d(np.asarray(u, dtype=float))
    t = Q.grid.points
    v = Q.values
    k = np.searchsorted(v, u, side="right")
    out = np.empty_like(u)
    below = k == 0
    above = k >= v.size
    mid = ~(below | above)
    out[below] = 0.0
    out[above] = 1.0
    km = k[mid]
    lo, hi = v[km - 1], v[km]
    frac = (u[mid] - lo) / (hi - lo)
    out[mid] = t[km - 1] + frac * (t[km] - t[km - 1])
    return float(out[0]) if scalar else out


def cumulative_trapezoid(q: np.ndarray, points: np.ndarray, start: float = 0.0) -> np.ndarray:
    """Running trapezoid integral of ``q`` along ``points``, offset by ``start``."""
    q = np.asarray(q, dtype=float)
    out = np.empty(q.shape, dtype=float)
    out[..., 0] = 0.0
    np.cumsum(np.diff(points) * (q[..., 1:] + q[..., :-1]) / 2, axis=-1, out=out[..., 1:])
    return out + np.asarray(start)[..., None] if np.ndim(start) else out + start


def density_from_quantile_density(
    Q0: float, q: QuantileDensityCurve, epsilon: float = 0.0
) -> DensityCurve:
    """Density whose quantile function starts at ``Q0`` and has derivative ``q``.

    Abscissae come from cumulative trapezoid integration of ``q``; density
    values are ``1 / q``.

    Raises
    ------
    DomainError
        If some ``q`` value is not above ``epsilon`` (or not positive).
    """
    qv = q.q_values
    if np.any(qv <= 0) or np.any(qv < epsilon):
        raise DomainError(
            "quantile density falls below the positivity floor; project it first"
        )
    u = cumulative_trapezoid(qv, q.grid.points, Q0)
    tol = 1e-6 + trapezoid_excess(qv, q.grid.points)
    return DensityCurve(u, 1.0 / qv, np.array(q.grid.points), integral_tol=tol)


def trapezoid_excess(q: np.ndarray, points: np.ndarray) -> float:
    """Amount by which the trapezoid integral of ``1/q`` over the trapezoid
    abscissae of ``q`` exceeds one; it vanishes as the grid is refined."""
    q = np.asarray(q, dtype=float)
    return float(np.sum(np.diff(points) * np.diff(q) ** 2 / (4 * q[1:] * q[:-1])))
