"""Simultaneous confidence bands for the conditional Wasserstein mean.

Two constructions: a Wasserstein-infinity band that brackets the conditional
distribution in stochastic order, and a band for the conditional density on
a trimmed support.  Both calibrate the width by the supremum of a standardized
Gaussian process whose covariance is the plug-in sandwich kernel.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from functools import cached_property
from typing import Optional

import numpy as np

from .errors import DegenerateError, DimensionError, DomainError, InputError
from .fit import Dataset, FitResult
from .quantile import QuantileCurve, TimeGrid, monotone_projection

DEFAULT_BAND_R = 10_000
DEFAULT_DELTA = 0.1
#: Points whose variance falls below this fraction of the maximum are left out of the sup.
VAR_RTOL = 1e-10
#: Relative eigenvalue floor of the Gaussian sampler.
SAMPLER_RTOL = 1e-12
SVD_RTOL = 1e-9


def _xtilde(x, p: int) -> np.ndarray:
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if x.shape != (p,):
        raise DimensionError(f"predictor value must have length {p}")
    return np.concatenate([[1.0], x])


@dataclass(frozen=True, eq=False)
class SandwichKernel:
    """Sandwich covariance ``D(s, t) = L^{-1} [n^{-1} sum_i x~_i x~_i^T r_i(s) r_i(t)] L^{-1}``.

    Kept in factored form: design rows, ``L^{-1}`` and residual curves.
    """

    grid: TimeGrid
    design: np.ndarray
    lambda_inv: np.ndarray
    residuals: np.ndarray = field(repr=False)

    @property
    def n(self) -> int:
        return self.design.shape[0]

    @cached_property
    def loadings(self) -> np.ndarray:
        """Rows ``L^{-1} x~_i``."""
        return self.design @ self.lambda_inv

    def block(self, s: int, t: int) -> np.ndarray:
        A, r = self.loadings, self.residuals
        return (A * (r[:, s] * r[:, t])[:, None]).T @ A / self.n

    def weights_at(self, x) -> np.ndarray:
        """``s_in(x) = x~^T L^{-1} x~_i``."""
        return self.loadings @ _xtilde(x, self.design.shape[1] - 1)

    def variance_at(self, x) -> np.ndarray:
        """``x~^T D(t, t) x~`` on the grid."""
        h = self.weights_at(x)
        return (h * h) @ (self.residuals ** 2) / self.n

    @cached_property
    def compressed(self) -> tuple[np.ndarray, np.ndarray]:
        """Thin SVD of the residual matrix as ``(U S, V^T)`` with tiny modes dropped."""
        U, s, Vt = np.linalg.svd(self.residuals, full_matrices=False)
        if s.size == 0 or s[0] == 0:
            return np.zeros((self.n, 0)), np.zeros((0, self.grid.size))
        k = int(np.count_nonzero(s > SVD_RTOL * s[0]))
        return U[:, :k] * s[:k], Vt[:k]


def sandwich_kernel(data: Dataset, fit: FitResult) -> SandwichKernel:
    """Plug-in sandwich kernel from the model residuals."""
    design = np.column_stack([np.ones(data.n), data.X])
    return SandwichKernel(data.grid, design, fit.summary.lambda_inv, fit.residuals)


@dataclass(frozen=True, eq=False)
class DerivKernelMatrix:
    """Sandwich kernel with its first partial derivatives on ``[delta, 1 - delta]``.

    Derivatives come from second-order finite differences of the residual
    curves along the trimmed grid, one-sided at its ends.
    """

    sandwich: SandwichKernel
    delta: float
    mask: np.ndarray
    points: np.ndarray
    residuals: np.ndarray = field(repr=False)
    derivatives: np.ndarray = field(repr=False)

    def block(self, s: int, t: int) -> np.ndarray:
        """2x2 block matrix of ``(p+1) x (p+1)`` blocks at trimmed indices ``s, t``."""
        A = self.sandwich.loadings
        n = A.shape[0]
        cols_s = (self.residuals[:, s], self.derivatives[:, s])
        cols_t = (self.residuals[:, t], self.derivatives[:, t])
        rows = [[(A * (a * b)[:, None]).T @ A / n for b in cols_t] for a in cols_s]
        return np.block(rows)


def _fd(values: np.ndarray, points: np.ndarray) -> np.ndarray:
    return np.gradient(values, points, axis=-1, edge_order=2)


def deriv_kernel_matrix(sandwich: SandwichKernel, delta: float) -> DerivKernelMatrix:
    mask = sandwich.grid.trim_mask(delta)
    pts = sandwich.grid.points[mask]
    if pts.size < 3:
        raise DomainError("too few grid points inside the trimmed range")
    r = sandwich.residuals[:, mask]
    return DerivKernelMatrix(sandwich, float(delta), mask, pts, r, _fd(r, pts))


def _factor_at(h: np.ndarray, US: np.ndarray, basis: np.ndarray) -> np.ndarray:
    """Small factor ``F`` with ``F^T F`` equal to the covariance on the working points."""
    n = h.size
    if US.shape[1] == 0:
        return np.zeros((0, basis.shape[1]))
    R = np.linalg.qr(h[:, None] * US / np.sqrt(n), mode="r")
    return R @ basis


def gaussian_sup_quantile(factor: np.ndarray, sd: np.ndarray, keep: np.ndarray,
                          alpha: float, R: int, rng: np.random.Generator,
                          chunk: int = 2000) -> float:
    """``1 - alpha`` quantile of ``sup |N(t)| / sd(t)`` for ``N ~ GP(0, F^T F)``.

    The square root is the symmetric eigendecomposition one, computed through
    the SVD of the factor, with a relative eigenvalue floor.
    """
    if factor.shape[0] == 0 or not keep.any():
        return 0.0
    _, s, Vt = np.linalg.svd(factor[:, keep] / sd[keep], full_matrices=False)
    # Floored modes get zero weight but still consume draws, so the floor
    # does not reshuffle the random stream.
    s = np.where(s * s > SAMPLER_RTOL * s[0] ** 2, s, 0.0)
    root = s[:, None] * Vt
    k = s.size
    sups = np.empty(R)
    for a in range(0, R, chunk):
        b = min(R, a + chunk)
        sups[a:b] = np.max(np.abs(rng.standard_normal((b - a, k)) @ root), axis=1)
    return float(np.quantile(sups, 1 - alpha))


@dataclass(frozen=True, eq=False)
class BandResult:
    """Simultaneous confidence band at one predictor value.

    For ``kind == "winf"`` the abscissae are grid levels ``t``; ``lower`` and
    ``upper`` are the projected quantile bounds and ``raw_lower``/``raw_upper``
    the unprojected envelopes.  For ``kind == "density"`` the abscissae are
    support points ``u`` and the envelopes are density values.
    """

    kind: str
    x: np.ndarray
    alpha: float
    delta: Optional[float]
    critical_value: float
    abscissae: np.ndarray
    center: np.ndarray
    standardization: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    raw_lower: np.ndarray
    raw_upper: np.ndarray
    working: np.ndarray
    n: int
    excluded: int = 0

    def contains(self, truth) -> bool:
        """Whether ``truth`` satisfies the band's sup inequality at its working points."""
        truth = np.asarray(truth, dtype=float)
        if truth.shape != self.center.shape:
            raise DimensionError("truth must be sampled at the band abscissae")
        w = self.working
        tol = 1e-12 * max(1.0, float(np.max(np.abs(self.center))))
        lo, hi = self.raw_lower[w], self.raw_upper[w]
        return bool(np.all((truth[w] >= lo - tol) & (truth[w] <= hi + tol)))

    @property
    def half_width(self) -> np.ndarray:
        return (self.raw_upper - self.raw_lower) / 2

    def lower_curve(self, grid: TimeGrid) -> QuantileCurve:
        if self.kind != "winf":
            raise InputError("only Wasserstein-infinity bands carry quantile bounds")
        return QuantileCurve(grid, self.lower)

    def upper_curve(self, grid: TimeGrid) -> QuantileCurve:
        if self.kind != "winf":
            raise InputError("only Wasserstein-infinity bands carry quantile bounds")
        return QuantileCurve(grid, self.upper)


def _check_level(alpha: float, R: int) -> None:
    if not 0.0 < alpha < 1.0:
        raise DomainError(f"alpha must lie in (0, 1), got {alpha}")
    if R < 100:
        raise DomainError("use at least R = 100 Gaussian paths")


def _standardize(var: np.ndarray, fixed_support: bool) -> tuple[np.ndarray, np.ndarray, int]:
    top = float(np.max(var)) if var.size else 0.0
    if top <= 0:
        if not fixed_support:
            raise DegenerateError(
                "standardization vanishes on the working range; use fixed_support "
                "with a trim delta"
            )
        warnings.warn("zero covariance; returning a zero-width band", RuntimeWarning,
                      stacklevel=3)
        return np.zeros_like(var), np.zeros(var.shape, dtype=bool), int(var.size)
    keep = var >= VAR_RTOL * top
    return np.sqrt(np.clip(var, 0.0, None)), keep, int(np.count_nonzero(~keep))


def winf_band(data: Dataset, fit: FitResult, x, alpha: float = 0.05,
              R: int = DEFAULT_BAND_R, seed=None, fixed_support: Optional[bool] = None,
              delta: float = DEFAULT_DELTA,
              sandwich: Optional[SandwichKernel] = None) -> BandResult:
    """Wasserstein-infinity band with its stochastic-ordering bracket.

    With ``fixed_support`` the sup runs over ``[delta, 1 - delta]`` only; the
    envelopes outside that range are left at the fitted curve.
    """
    _check_level(alpha, R)
    fixed = data.fixed_support if fixed_support is None else bool(fixed_support)
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    K = sandwich or sandwich_kernel(data, fit)
    grid = data.grid
    center, _ = fit.predict(x)
    center = center.values
    h = K.weights_at(x)
    US, Vt = K.compressed
    working = grid.trim_mask(delta) if fixed else np.ones(grid.size, dtype=bool)
    var = np.zeros(grid.size)
    F = _factor_at(h, US, Vt)
    var[working] = np.sum(F[:, working] ** 2, axis=0) if F.size else 0.0
    sd, keep_w, excluded = _standardize(var[working], fixed)
    keep = np.zeros(grid.size, dtype=bool)
    keep[np.flatnonzero(working)[keep_w]] = True
    full_sd = np.zeros(grid.size)
    full_sd[working] = sd
    crit = gaussian_sup_quantile(F, full_sd, keep, alpha, R, rng)
    half = np.where(keep, crit * full_sd / np.sqrt(data.n), 0.0)
    ML, MU = center - half, center + half
    QL = monotone_projection(ML, grid.weights, lower_bound=ML)
    QU = monotone_projection(MU, grid.weights, upper_bound=MU)
    return BandResult("winf", np.atleast_1d(np.asarray(x, float)), alpha,
                      float(delta) if fixed else None, crit, grid.points.copy(), center,
                      full_sd, QL, QU, ML, MU, keep, data.n, excluded)


def density_band(data: Dataset, fit: FitResult, x, alpha: float = 0.05,
                 delta: float = DEFAULT_DELTA, R: int = DEFAULT_BAND_R, seed=None,
                 sandwich: Optional[SandwichKernel] = None) -> BandResult:
    """Nearly simultaneous band for the conditional density on a trimmed support.

    The process is written in the quantile coordinate ``t`` on
    ``[delta, 1 - delta]``: the density error at ``u = Q(x, t)`` is
    ``q^{-3} (q' N(t) - q N'(t))`` to first order, with ``N`` the quantile
    error process and ``N'`` its derivative.
    """
    _check_level(alpha, R)
    if data.q is None:
        raise InputError("density bands need quantile densities q_i")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    K = sandwich or sandwich_kernel(data, fit)
    grid = data.grid
    mask = grid.trim_mask(delta)
    pts = grid.points[mask]
    dens = fit.density_at(x)
    q = dens.quantile_density.q_values
    dq = dens.quantile_density.dq_values
    if dq is None:
        warnings.warn("no q' curves supplied; differentiating the fitted q numerically",
                      RuntimeWarning, stacklevel=2)
        dq = _fd(q, grid.points)
    qm, dqm = q[mask], dq[mask]
    b1, b2 = dqm / qm ** 3, -1.0 / qm ** 2
    h = K.weights_at(x)
    US, Vt = K.compressed
    V = Vt[:, mask]
    basis = b1 * V + b2 * _fd(V, pts)
    F = _factor_at(h, US, basis)
    var = np.sum(F ** 2, axis=0) if F.size else np.zeros(pts.size)
    sd, keep, excluded = _standardize(var, True)
    crit = gaussian_sup_quantile(F, sd, keep, alpha, R, rng)
    center = dens.density.values[mask]
    half = np.where(keep, crit * sd / np.sqrt(data.n), 0.0)
    lo, hi = center - half, center + half
    return BandResult("density", np.atleast_1d(np.asarray(x, float)), alpha, float(delta),
                      crit, dens.abscissae[mask].copy(), center, sd, lo, hi, lo, hi, keep,
                      data.n, excluded)
