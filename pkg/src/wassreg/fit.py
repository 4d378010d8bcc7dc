"""Global Fréchet regression of quantile-function responses on vector predictors.

The fitted conditional mean at ``x`` minimizes the ``s_in(x)``-weighted sum of
squared Wasserstein distances to the observed responses.  Because the
weights average to one, the minimizer is the weighted mean curve whenever that
curve is nondecreasing, and its trapezoid-weighted isotonic projection
otherwise.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from functools import cached_property
from typing import Optional, Sequence

import numpy as np

from .errors import DesignError, DimensionError, DomainError, InputError
from .quantile import (
    DensityCurve,
    QuantileCurve,
    QuantileDensityCurve,
    SNAP_TOL,
    TimeGrid,
    density_from_quantile_density,
    monotone_projection,
)

#: Relative eigenvalue threshold below which a covariance counts as singular.
PD_RTOL = 1e-10


@dataclass(frozen=True, eq=False)
class Dataset:
    """Predictors paired with quantile-function responses on a shared grid.

    Attributes
    ----------
    X : ndarray, shape (n, p)
    Q : ndarray, shape (n, m)
        Row ``i`` is the quantile curve of response ``i``.
    grid : TimeGrid
    q, dq : ndarray, shape (n, m), optional
        Quantile densities and their derivatives, needed for density fits and
        density bands.
    fixed_support : bool
        Declares that every response lives on one common interval.
    names : tuple of str
        Predictor names (defaults to ``x1 .. xp``).
    """

    X: np.ndarray
    Q: np.ndarray
    grid: TimeGrid
    q: Optional[np.ndarray] = None
    dq: Optional[np.ndarray] = None
    fixed_support: bool = False
    names: tuple = ()

    def __post_init__(self):
        X = np.array(self.X, dtype=float)
        if X.ndim == 1:
            X = X[:, None]
        Q = np.array(self.Q, dtype=float)
        if X.ndim != 2 or Q.ndim != 2 or Q.shape[0] != X.shape[0]:
            raise DimensionError("X must be (n, p) and Q must be (n, m)")
        n, p = X.shape
        if Q.shape[1] != self.grid.size:
            raise DimensionError("response curves do not match the grid")
        if n < p + 2:
            raise InputError(f"need at least p + 2 = {p + 2} observations, got {n}")
        if not (np.all(np.isfinite(X)) and np.all(np.isfinite(Q))):
            raise InputError("data contain non-finite entries")
        steps = np.diff(Q, axis=1)
        if steps.size and steps.min() < 0:
            worst = steps.min(axis=1)
            bad = np.flatnonzero(worst < -SNAP_TOL)
            if bad.size:
                i = int(bad[0])
                raise DomainError(
                    f"response {i} is not a quantile function: it decreases by "
                    f"{-worst[i]:.3g}"
                )
            Q = np.maximum.accumulate(Q, axis=1)
        arrays = {"X": X, "Q": Q}
        for name in ("q", "dq"):
            a = getattr(self, name)
            if a is not None:
                a = np.array(a, dtype=float)
                if a.shape != Q.shape:
                    raise DimensionError(f"{name} must have the same shape as Q")
                if not np.all(np.isfinite(a)):
                    raise InputError(f"{name} contains non-finite entries")
                arrays[name] = a
        if self.dq is not None and self.q is None:
            raise InputError("dq supplied without q")
        for name, a in arrays.items():
            a.setflags(write=False)
            object.__setattr__(self, name, a)
        names = tuple(self.names) or tuple(f"x{j + 1}" for j in range(p))
        if len(names) != p:
            raise DimensionError("one name per predictor column is required")
        object.__setattr__(self, "names", names)

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def p(self) -> int:
        return self.X.shape[1]

    def curve(self, i: int) -> QuantileCurve:
        return QuantileCurve(self.grid, self.Q[i])

    def with_responses(self, Q, q=None, dq=None) -> "Dataset":
        return Dataset(self.X, Q, self.grid, q, dq, self.fixed_support, self.names)

    def select_predictors(self, columns: Sequence[int]) -> "Dataset":
        cols = list(columns)
        return Dataset(
            self.X[:, cols], self.Q, self.grid, self.q, self.dq,
            self.fixed_support, tuple(self.names[c] for c in cols),
        )


def _inverse_pd(S: np.ndarray, what: str) -> np.ndarray:
    S = (S + S.T) / 2
    ev = np.linalg.eigvalsh(S)
    if ev[-1] <= 0 or ev[0] <= PD_RTOL * ev[-1]:
        raise DesignError(f"{what} is singular or not positive definite")
    return np.linalg.inv(S)


@dataclass(frozen=True, eq=False)
class DesignSummary:
    """Moments of the predictor design.

    ``lambda_hat`` is ``n^{-1} sum_i x~_i x~_i^T`` for ``x~ = (1, x)``.
    """

    x_bar: np.ndarray
    sigma_hat: np.ndarray
    lambda_hat: np.ndarray
    sigma_inv: np.ndarray = field(repr=False)
    lambda_inv: np.ndarray = field(repr=False)

    @classmethod
    def from_predictors(cls, X: np.ndarray) -> "DesignSummary":
        X = np.asarray(X, dtype=float)
        if X.ndim == 1:
            X = X[:, None]
        n = X.shape[0]
        x_bar = X.mean(axis=0)
        Xc = X - x_bar
        sigma = Xc.T @ Xc / n
        sigma = (sigma + sigma.T) / 2
        sigma_inv = _inverse_pd(sigma, "predictor covariance")
        Xt = np.column_stack([np.ones(n), X])
        lam = Xt.T @ Xt / n
        lam = (lam + lam.T) / 2
        lam_inv = _inverse_pd(lam, "second-moment matrix")
        return cls(x_bar, sigma, lam, sigma_inv, lam_inv)

    @property
    def p(self) -> int:
        return self.x_bar.size

    def partition(self, q: int) -> "PartialDesign":
        """Split into the first ``q`` predictors (kept) and the rest (tested)."""
        p = self.p
        if not 1 <= q < p:
            raise DomainError(f"need 1 <= q < p = {p}, got q = {q}")
        S = self.sigma_hat
        syy, szy, szz = S[:q, :q], S[q:, :q], S[q:, q:]
        syy_inv = _inverse_pd(syy, "covariance of retained predictors")
        A = szy @ syy_inv
        J = np.vstack([-A.T, np.eye(p - q)])
        sz_y = szz - A @ szy.T
        sz_y = (sz_y + sz_y.T) / 2
        ev, vec = np.linalg.eigh(sz_y)
        if ev[0] <= PD_RTOL * max(ev[-1], 0.0) or ev[-1] <= 0:
            raise DesignError("conditional covariance of tested predictors is singular")
        inv_sqrt = (vec / np.sqrt(ev)) @ vec.T
        return PartialDesign(q, syy, szy, sz_y, J, inv_sqrt)


@dataclass(frozen=True, eq=False)
class PartialDesign:
    """Plug-in quantities for a (Y, Z) split of the predictors."""

    q: int
    sigma_yy: np.ndarray
    sigma_zy: np.ndarray
    sigma_z_given_y: np.ndarray
    J: np.ndarray
    sigma_z_given_y_inv_sqrt: np.ndarray


def empirical_weights(summary: DesignSummary, X: np.ndarray, x) -> np.ndarray:
    """Weights ``s_in(x) = 1 + (X_i - X_bar)^T Sigma_hat^{-1} (x - X_bar)``."""
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if x.shape != (summary.p,) or X.shape[1] != summary.p:
        raise DimensionError("predictor dimension mismatch")
    return 1.0 + (X - summary.x_bar) @ (summary.sigma_inv @ (x - summary.x_bar))


def submodel_weights(summary: DesignSummary, Y: np.ndarray, y) -> np.ndarray:
    """Weights of the reduced model using only the first ``q`` predictors."""
    Y = np.asarray(Y, dtype=float)
    if Y.ndim == 1:
        Y = Y[:, None]
    q = Y.shape[1]
    y = np.atleast_1d(np.asarray(y, dtype=float))
    if y.shape != (q,) or q > summary.p:
        raise DimensionError("submodel dimension mismatch")
    ybar = summary.x_bar[:q]
    syy_inv = _inverse_pd(summary.sigma_hat[:q, :q], "covariance of retained predictors")
    return 1.0 + (Y - ybar) @ (syy_inv @ (y - ybar))


def project_rows(curves: np.ndarray, grid: TimeGrid) -> tuple[np.ndarray, np.ndarray]:
    """Project each non-monotone row onto nondecreasing curves.

    Returns the projected array and a boolean flag per row telling whether
    the projection changed it.
    """
    curves = np.array(curves, dtype=float)
    single = curves.ndim == 1
    curves = np.atleast_2d(curves)
    bad = np.flatnonzero(np.any(np.diff(curves, axis=1) < 0, axis=1))
    active = np.zeros(curves.shape[0], dtype=bool)
    for i in bad:
        proj = monotone_projection(curves[i], grid.weights)
        active[i] = np.max(np.abs(proj - curves[i])) > 1e-12
        curves[i] = proj
    if single:
        return curves[0], active
    return curves, active


def fit_quantile(data: Dataset, weights) -> tuple[QuantileCurve, bool]:
    """Weighted Fréchet mean quantile curve.

    Returns the fitted curve and whether the monotone projection was active.
    """
    s = np.asarray(weights, dtype=float)
    if s.shape != (data.n,):
        raise DimensionError("one weight per observation is required")
    mean = s @ data.Q / data.n
    proj, active = project_rows(mean, data.grid)
    return QuantileCurve(data.grid, proj), bool(active[0])


def default_epsilon(data: Dataset) -> float:
    """Positivity floor for fitted quantile densities, relative to their spread."""
    if data.q is None:
        raise InputError("dataset carries no quantile densities")
    spread = float(np.ptp(data.q))
    scale = spread if spread > 0 else float(np.max(np.abs(data.q)))
    return 1e-4 * scale if scale > 0 else 1e-8


@dataclass(frozen=True, eq=False)
class DensityFit:
    """Output of the density fit at one predictor value."""

    density: DensityCurve
    quantile_density: QuantileDensityCurve
    start: float
    floor_active: bool

    @property
    def abscissae(self) -> np.ndarray:
        return self.density.support


def fit_density(data: Dataset, weights, epsilon: Optional[float] = None) -> DensityFit:
    """Weighted Fréchet mean density through its quantile density.

    The constrained least-squares program over ``(Q(0), q)`` has a diagonal
    quadratic form and lower bounds only on the ``q`` block, so its solution
    is the weighted mean ``q`` clamped at ``epsilon`` and the unconstrained
    weighted mean of ``Q_i(0)``.
    """
    if data.q is None:
        raise InputError("density fitting needs quantile densities q_i")
    s = np.asarray(weights, dtype=float)
    if s.shape != (data.n,):
        raise DimensionError("one weight per observation is required")
    eps = default_epsilon(data) if epsilon is None else float(epsilon)
    if eps <= 0:
        raise DomainError("epsilon must be positive")
    start = float(s @ data.Q[:, 0] / data.n)
    qbar = s @ data.q / data.n
    low = qbar < eps
    qbar = np.where(low, eps, qbar)
    dqbar = None if data.dq is None else s @ data.dq / data.n
    qd = QuantileDensityCurve(data.grid, qbar, dqbar)
    dens = density_from_quantile_density(start, qd, epsilon=eps)
    return DensityFit(dens, qd, start, bool(low.any()))


@dataclass(frozen=True, eq=False)
class FitResult:
    """Fitted Fréchet regression model.

    Attributes
    ----------
    data : Dataset
    summary : DesignSummary
    fitted : ndarray, shape (n, m)
        Fitted quantile curves at every observed predictor.
    marginal : ndarray, shape (m,)
        Fit at ``X_bar``, the sample Wasserstein mean.
    projection_active : ndarray of bool, shape (n,)
    """

    data: Dataset
    summary: DesignSummary
    fitted: np.ndarray
    marginal: np.ndarray
    projection_active: np.ndarray
    coef: np.ndarray = field(repr=False)

    @property
    def grid(self) -> TimeGrid:
        return self.data.grid

    @cached_property
    def residuals(self) -> np.ndarray:
        """Observed minus fitted curves, with roundoff-level entries set to zero."""
        r = self.data.Q - self.fitted
        scale = float(np.max(np.abs(self.data.Q))) if self.data.Q.size else 0.0
        r[np.abs(r) <= 1e-12 * scale] = 0.0
        r.setflags(write=False)
        return r

    def weights_at(self, x) -> np.ndarray:
        return empirical_weights(self.summary, self.data.X, x)

    def quantile_at(self, x) -> QuantileCurve:
        """Fitted conditional quantile curve at a new predictor value."""
        return self.predict(x)[0]

    def predict(self, x) -> tuple[QuantileCurve, bool]:
        x = np.atleast_1d(np.asarray(x, dtype=float))
        if x.shape != (self.data.p,):
            raise DimensionError("predictor dimension mismatch")
        mean = np.concatenate([[1.0], x]) @ self.coef
        proj, active = project_rows(mean, self.grid)
        return QuantileCurve(self.grid, proj), bool(active[0])

    def density_at(self, x, epsilon: Optional[float] = None) -> DensityFit:
        return fit_density(self.data, self.weights_at(x), epsilon)

    @property
    def marginal_curve(self) -> QuantileCurve:
        return QuantileCurve(self.grid, self.marginal)

    def fitted_curve(self, i: int) -> QuantileCurve:
        return QuantileCurve(self.grid, self.fitted[i])


def fit_model(data: Dataset, summary: Optional[DesignSummary] = None) -> FitResult:
    """Fit the model at every observed predictor and at the predictor mean."""
    summary = summary or DesignSummary.from_predictors(data.X)
    n = data.n
    Xt = np.column_stack([np.ones(n), data.X])
    # x~^T coef equals n^{-1} sum_i s_in(x) Q_i.
    coef = summary.lambda_inv @ (Xt.T @ data.Q) / n
    fitted, active = project_rows(Xt @ coef, data.grid)
    marginal = data.Q.mean(axis=0)
    for a in (fitted, marginal, active, coef):
        a.setflags(write=False)
    return FitResult(data, summary, fitted, marginal, active, coef)


def fit_submodel(data: Dataset, q: int, summary: Optional[DesignSummary] = None) -> FitResult:
    """Fit the reduced model on the first ``q`` predictors.

    The returned fit carries the reduced design; its fitted curves at the
    observations are the submodel fits evaluated at ``Y_i``.
    """
    if not 1 <= q <= data.p:
        raise DomainError(f"submodel size must be between 1 and p = {data.p}")
    return fit_model(data.select_predictors(range(q)))


def wasserstein_r_squared(data: Dataset, fit: FitResult) -> float:
    """Fraction of Wasserstein variability explained by the fit.

    Returns ``nan`` with a warning when all responses coincide.
    """
    w = data.grid.weights
    sse = float(np.sum((data.Q - fit.fitted) ** 2 @ w))
    sst = float(np.sum((data.Q - fit.marginal) ** 2 @ w))
    scale = float(np.sum(data.Q ** 2 @ w))
    if sst <= 1e-14 * max(scale, 1e-300):
        warnings.warn("responses have zero Wasserstein variance; R^2 is undefined",
                      RuntimeWarning, stacklevel=2)
        return float("nan")
    return 1.0 - sse / sst
