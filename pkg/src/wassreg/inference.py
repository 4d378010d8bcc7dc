"""Wasserstein F-tests for global and partial predictor effects.

Null distributions are weighted chi-square mixtures whose weights are the
eigenvalues of a residual covariance kernel.  Critical values come from one of
three engines: Monte Carlo of the mixture, a two-moment Satterthwaite
approximation, or a residual transport bootstrap.
"""

from __future__ import annotations

import warnings
from dataclasses import asdict, dataclass, field
from functools import cached_property
from typing import Optional, Sequence, Union

import numpy as np
from scipy import stats

from .errors import DegenerateError, DesignError, DimensionError, DomainError, UnsupportedMethodError
from .fit import Dataset, DesignSummary, FitResult, fit_model, fit_submodel, project_rows
from .quantile import TimeGrid

METHODS = ("mixture", "satterthwaite", "bootstrap")
DEFAULT_R = 50_000
DEFAULT_B = 999
#: Eigenvalues below this fraction of the leading one are dropped.
EIG_RTOL = 1e-12
NEG_STAT_TOL = 1e-8

SeedLike = Union[None, int, np.random.SeedSequence, np.random.Generator]


def _rng(seed: SeedLike) -> np.random.Generator:
    return seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)


@dataclass(frozen=True, eq=False)
class ResidualKernel:
    """Residual covariance kernel on a grid.

    Stored through a factor ``F`` of shape (n, m) with ``C = F^T F``; the dense
    matrix is formed only on request.  Kernels given directly as a matrix
    (``factor=None``) are supported for analytic checks.
    """

    grid: TimeGrid
    factor: Optional[np.ndarray] = None
    dense: Optional[np.ndarray] = field(default=None, repr=False)
    kind: str = "global"

    def __post_init__(self):
        if (self.factor is None) == (self.dense is None):
            raise DomainError("give exactly one of factor or dense")
        m = self.grid.size
        if self.dense is not None:
            M = np.asarray(self.dense, dtype=float)
            if M.shape != (m, m):
                raise DimensionError("kernel matrix does not match the grid")
            if np.max(np.abs(M - M.T)) > 1e-10 * max(1.0, np.max(np.abs(M))):
                raise DomainError("kernel matrix is not symmetric")
            object.__setattr__(self, "dense", (M + M.T) / 2)
        elif np.shape(self.factor)[-1] != m:
            raise DimensionError("kernel factor does not match the grid")

    @classmethod
    def from_matrix(cls, grid: TimeGrid, matrix, kind: str = "global") -> "ResidualKernel":
        return cls(grid, dense=np.asarray(matrix, dtype=float), kind=kind)

    @cached_property
    def matrix(self) -> np.ndarray:
        if self.dense is not None:
            return self.dense
        return self.factor.T @ self.factor

    def _weighted_gram(self) -> np.ndarray:
        """Symmetric matrix sharing the nonzero spectrum of the integral operator."""
        sw = np.sqrt(self.grid.weights)
        if self.factor is not None and self.factor.shape[0] < self.grid.size:
            F = self.factor * sw
            return F @ F.T
        return sw[:, None] * self.matrix * sw[None, :]


@dataclass(frozen=True, eq=False)
class PartialKernelMatrix:
    """Matrix-valued residual kernel for the partial test.

    ``C*(s, t) = n^{-1} sum_i a_i a_i^T r_i(s) r_i(t)`` with loadings
    ``a_i = Sigma_{Z|Y}^{-1/2} J^T (X_i - X_bar)`` and full-model residuals
    ``r_i``. ``residuals`` already carries the ``n^{-1/2}`` factor.
    """

    grid: TimeGrid
    loadings: np.ndarray
    residuals: np.ndarray

    @property
    def dim(self) -> int:
        return self.loadings.shape[1]

    def block(self, s: int, t: int) -> np.ndarray:
        r = self.residuals
        return (self.loadings * (r[:, s] * r[:, t])[:, None]).T @ self.loadings

    @cached_property
    def blocks(self) -> np.ndarray:
        """Dense array of shape (m, m, d, d); memory heavy for fine grids."""
        A, r = self.loadings, self.residuals
        return np.einsum("ik,il,is,it->stkl", A, A, r, r, optimize=True)

    def _weighted_gram(self) -> np.ndarray:
        sw = np.sqrt(self.grid.weights)
        F = self.residuals * sw
        n, m = F.shape
        if n <= self.dim * m:
            return (self.loadings @ self.loadings.T) * (F @ F.T)
        # Stacked operator on the product space, coordinate-major order.
        G = (self.loadings[:, :, None] * F[:, None, :]).reshape(n, -1)
        return G.T @ G


Kernel = Union[ResidualKernel, PartialKernelMatrix]


@dataclass(frozen=True)
class EigenSpectrum:
    """Nonincreasing positive eigenvalues of a kernel operator."""

    eigenvalues: np.ndarray

    @property
    def J(self) -> int:
        return int(self.eigenvalues.size)

    def __len__(self) -> int:
        return self.J


def residual_kernel(data: Dataset, fit: FitResult) -> ResidualKernel:
    """Estimated quantile residual covariance kernel."""
    return ResidualKernel(data.grid, factor=fit.residuals / np.sqrt(data.n))


def partial_residual_kernel(data: Dataset, fit_full: FitResult, summary: DesignSummary,
                            q: int) -> PartialKernelMatrix:
    """Rescaled residual kernel for testing the predictors after the first ``q``."""
    part = summary.partition(q)
    Xc = data.X - summary.x_bar
    A = Xc @ part.J @ part.sigma_z_given_y_inv_sqrt
    r = fit_full.residuals / np.sqrt(data.n)
    return PartialKernelMatrix(data.grid, A, r)


def kernel_eigenvalues(kernel: Kernel) -> EigenSpectrum:
    """Eigenvalues of the integral operator of ``kernel`` (trapezoid Nyström)."""
    ev = np.linalg.eigvalsh(kernel._weighted_gram())[::-1]
    if ev.size == 0 or ev[0] <= 0:
        return EigenSpectrum(np.zeros(0))
    ev = ev[ev > EIG_RTOL * ev[0]]
    return EigenSpectrum(ev.copy())


def kernel_moments(kernel: Kernel) -> tuple[float, float]:
    """Trace and squared Hilbert-Schmidt norm, i.e. the sums of λ and λ²."""
    G = kernel._weighted_gram()
    return float(np.trace(G)), float(np.sum(G * G))


def global_statistic(fit: FitResult) -> float:
    """Sum of squared Wasserstein distances from fitted curves to the marginal fit."""
    d = fit.fitted - fit.marginal
    return float(np.sum(d * d @ fit.grid.weights))


def partial_statistic(fit_full: FitResult, fit_sub: FitResult) -> float:
    """Difference between full-model and submodel global statistics."""
    if fit_full.grid != fit_sub.grid or fit_full.fitted.shape != fit_sub.fitted.shape:
        raise DimensionError("full and submodel fits do not share data")
    w = fit_full.grid.weights
    full = np.sum((fit_full.fitted - fit_full.marginal) ** 2 @ w)
    sub = np.sum((fit_sub.fitted - fit_full.marginal) ** 2 @ w)
    value = float(full - sub)
    if value < 0:
        tol = NEG_STAT_TOL * max(1.0, float(full))
        if value < -tol:
            raise DomainError(
                f"partial statistic is negative ({value:.3g}); the submodel is "
                "not nested in the full model"
            )
        warnings.warn(f"partial statistic {value:.3g} snapped to 0", RuntimeWarning,
                      stacklevel=2)
        value = 0.0
    return value


def _mixture_draws(weights: np.ndarray, dof: float, R: int, rng: np.random.Generator,
                   chunk: int = 4096) -> np.ndarray:
    out = np.empty(R)
    J = weights.size
    for a in range(0, R, chunk):
        b = min(R, a + chunk)
        out[a:b] = rng.chisquare(dof, size=(b - a, J)) @ weights
    return out


def _tail_pvalue(draws: np.ndarray, statistic: float) -> float:
    return float((1 + np.count_nonzero(draws >= statistic)) / (draws.size + 1))


def _check_alpha(alpha: float) -> None:
    if not 0.0 < alpha < 1.0:
        raise DomainError(f"alpha must lie in (0, 1), got {alpha}")


def critical_mixture(spectrum: EigenSpectrum, dof: int, alpha: float = 0.05,
                     R: int = DEFAULT_R, seed: SeedLike = None) -> float:
    """``1 - alpha`` Monte Carlo quantile of ``sum_j λ_j ω_j``, ``ω_j ~ χ²_dof``."""
    _check_alpha(alpha)
    if R < 1000:
        raise DomainError("use at least R = 1000 Monte Carlo draws")
    if spectrum.J == 0:
        warnings.warn("empty spectrum; critical value is 0", RuntimeWarning, stacklevel=2)
        return 0.0
    draws = _mixture_draws(spectrum.eigenvalues, dof, R, _rng(seed))
    return float(np.quantile(draws, 1 - alpha))


def satterthwaite_parameters(kernel: Kernel, dof: int) -> tuple[float, float]:
    """Scale ``a`` and degrees of freedom ``m`` matching two moments."""
    tr, hs = kernel_moments(kernel)
    if tr <= 0 or hs <= 0:
        raise DegenerateError("kernel has zero trace")
    return hs / tr, dof * tr * tr / hs


def critical_satterthwaite(kernel: Kernel, dof: int, alpha: float = 0.05) -> float:
    """Scaled chi-square approximation ``a χ²_m`` of the null quantile."""
    _check_alpha(alpha)
    try:
        a, m = satterthwaite_parameters(kernel, dof)
    except DegenerateError:
        warnings.warn("zero kernel; critical value is 0", RuntimeWarning, stacklevel=2)
        return 0.0
    return float(a * stats.gamma.ppf(1 - alpha, m / 2, scale=2.0))


# -- residual transport bootstrap ------------------------------------------


def _interp_rows(t: np.ndarray, values: np.ndarray, at: np.ndarray) -> np.ndarray:
    """Interpolate every row of ``values`` (sampled at ``t``) at ``at``."""
    k = np.clip(np.searchsorted(t, at, side="right"), 1, t.size - 1)
    frac = (at - t[k - 1]) / (t[k] - t[k - 1])
    return values[..., k - 1] * (1 - frac) + values[..., k] * frac


def _invert_values(t: np.ndarray, v: np.ndarray, u: np.ndarray) -> np.ndarray:
    k = np.searchsorted(v, u, side="right")
    out = np.where(k == 0, 0.0, 1.0)
    mid = (k > 0) & (k < v.size)
    km = k[mid]
    lo, hi = v[km - 1], v[km]
    out[mid] = t[km - 1] + (u[mid] - lo) / (hi - lo) * (t[km] - t[km - 1])
    return out


def _hull_indices(X: np.ndarray) -> np.ndarray:
    n, p = X.shape
    if p == 1:
        return np.unique([np.argmin(X[:, 0]), np.argmax(X[:, 0])])
    if p <= 6:
        try:
            from scipy.spatial import ConvexHull

            return np.asarray(ConvexHull(X).vertices)
        except Exception:  # qhull raises on flat point sets
            pass
    return np.arange(n)


def null_transports_global(data: Dataset, fit: FitResult) -> np.ndarray:
    """Residual transports composed with the marginal fit, on the grid.

    Row ``i`` holds ``(Q_i o F*)(Q*(t_l))``.
    """
    t = data.grid.points
    qstar = fit.marginal
    flat = np.diff(qstar) <= 0
    if flat.any():
        width = float(np.max(np.diff(t)[flat]))
        warnings.warn(
            f"marginal fit has flat stretches (widest step {width:.3g}); inverting "
            "with right-endpoint tie-break", RuntimeWarning, stacklevel=2,
        )
    tau = np.clip(_invert_values(t, qstar, qstar), 0.0, 1.0)
    return _interp_rows(t, data.Q, tau)


def bootstrap_global_statistics(data: Dataset, fit: FitResult, B: int = DEFAULT_B,
                                seed: SeedLike = None, chunk: int = 64) -> np.ndarray:
    """Bootstrap replicates of the global statistic under the null.

    Each replicate resamples residual transports with replacement, applies
    them to the marginal fit, refits the model and recomputes the statistic
    against the replicate's own marginal fit.
    """
    if B < 1:
        raise DomainError("B must be positive")
    rng = _rng(seed)
    T = null_transports_global(data, fit)
    n, p = data.X.shape
    w = data.grid.weights
    Xc = data.X - data.X.mean(axis=0)
    S = Xc.T @ Xc
    S_inv = np.linalg.inv(S)
    hull = _hull_indices(data.X)
    Xh = Xc[hull]
    out = np.empty(B)
    for a in range(0, B, chunk):
        c = min(B, a + chunk) - a
        idx = rng.integers(0, n, size=(c, n))
        flat = (idx + n * np.arange(c)[:, None]).ravel()
        M = np.empty((c, p + 1, n))
        M[:, 0, :] = np.bincount(flat, minlength=c * n).reshape(c, n) / n
        for k in range(p):
            M[:, k + 1, :] = np.bincount(flat, weights=np.tile(Xc[:, k], c),
                                         minlength=c * n).reshape(c, n)
        M[:, 1:, :] = np.einsum("kj,cjn->ckn", S_inv, M[:, 1:, :])
        coef = (M.reshape(c * (p + 1), n) @ T).reshape(c, p + 1, -1)
        mean, beta = coef[:, 0, :], coef[:, 1:, :]
        vert = mean[:, None, :] + np.einsum("hk,ckm->chm", Xh, beta)
        ok = np.all(np.diff(vert, axis=2) >= 0, axis=(1, 2))
        out[a:a + c] = np.einsum("ckm,kj,cjm,m->c", beta, S, beta, w)
        for j in np.flatnonzero(~ok):
            fitted, _ = project_rows(mean[j] + Xc @ beta[j], data.grid)
            out[a + j] = float(np.sum((fitted - mean[j]) ** 2 @ w))
    return out


def bootstrap_global(data: Dataset, fit: FitResult, B: int = DEFAULT_B,
                     seed: SeedLike = None) -> float:
    """Residual transport bootstrap p-value of the global test."""
    boot = bootstrap_global_statistics(data, fit, B, seed)
    return bootstrap_pvalue(boot, global_statistic(fit))


def bootstrap_pvalue(boot: np.ndarray, statistic: float) -> float:
    return float((np.count_nonzero(boot > statistic) + 1) / (boot.size + 1))


def bootstrap_partial_statistics(data: Dataset, q: int, B: int = DEFAULT_B,
                                 seed: SeedLike = None) -> np.ndarray:
    """Bootstrap replicates of the partial statistic (fixed-support data only)."""
    rng = _rng(seed)
    sub = fit_submodel(data, q)
    t = data.grid.points
    n = data.n
    Q0 = sub.fitted
    out = np.empty(B)
    for b in range(B):
        idx = rng.integers(0, n, size=n)
        Qb = np.empty_like(data.Q)
        for i in range(n):
            j = idx[i]
            level = np.clip(_invert_values(t, Q0[j], Q0[i]), 0.0, 1.0)
            Qb[i] = np.interp(level, t, data.Q[j])
        Qb = np.maximum.accumulate(Qb, axis=1)
        db = data.with_responses(Qb)
        out[b] = partial_statistic(fit_model(db), fit_submodel(db, q))
    return out


# -- orchestration ---------------------------------------------------------


@dataclass(frozen=True)
class TestReport:
    """Outcome of a Wasserstein F-test."""

    __test__ = False  # keep pytest from collecting this class

    kind: str
    statistic: float
    method: str
    alpha: float
    critical_value: float
    p_value: float
    eigenvalues: tuple
    dof: int
    replications: int
    seed: Optional[int]

    @property
    def reject(self) -> bool:
        return self.statistic > self.critical_value

    @property
    def spectrum(self) -> EigenSpectrum:
        return EigenSpectrum(np.asarray(self.eigenvalues, dtype=float))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["eigenvalues"] = list(self.eigenvalues)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TestReport":
        d = dict(d)
        d["eigenvalues"] = tuple(float(v) for v in d["eigenvalues"])
        return cls(**d)


def _seed_tag(seed: SeedLike) -> Optional[int]:
    return int(seed) if isinstance(seed, (int, np.integer)) else None


def _check_method(method: str) -> None:
    if method not in METHODS:
        raise DomainError(f"method must be one of {METHODS}, got {method!r}")


def test_global(data: Dataset, alpha: float = 0.05, method: str = "mixture",
                R: int = DEFAULT_R, B: int = DEFAULT_B, seed: SeedLike = None,
                fit: Optional[FitResult] = None) -> TestReport:
    """Test the null hypothesis of no predictor effect.

    For the mixture and Satterthwaite engines the p-value is the Monte Carlo
    tail frequency ``(1 + #{z >= F}) / (R + 1)`` under the estimated limit law.
    """
    _check_alpha(alpha)
    _check_method(method)
    rng = _rng(seed)
    fit = fit or fit_model(data)
    stat = global_statistic(fit)
    kernel = residual_kernel(data, fit)
    spectrum = kernel_eigenvalues(kernel)
    p = data.p
    if method == "mixture":
        if spectrum.J == 0:
            raise DegenerateError("residual kernel is identically zero")
        draws = _mixture_draws(spectrum.eigenvalues, p, R, rng)
        crit, pval, reps = float(np.quantile(draws, 1 - alpha)), _tail_pvalue(draws, stat), R
    elif method == "satterthwaite":
        a, m = satterthwaite_parameters(kernel, p)
        crit = float(a * stats.gamma.ppf(1 - alpha, m / 2, scale=2.0))
        draws = a * rng.chisquare(m, size=R)
        pval, reps = _tail_pvalue(draws, stat), R
    else:
        boot = bootstrap_global_statistics(data, fit, B, rng)
        crit, pval, reps = float(np.quantile(boot, 1 - alpha)), bootstrap_pvalue(boot, stat), B
    return TestReport("global", stat, method, alpha, crit, pval,
                      tuple(float(v) for v in spectrum.eigenvalues), p, reps, _seed_tag(seed))


def _resolve_columns(data: Dataset, cols: Sequence) -> list[int]:
    out = []
    for c in cols:
        if isinstance(c, str):
            name = c[2:] if c.startswith("x:") else c
            if name not in data.names:
                raise DomainError(f"unknown predictor {c!r}")
            out.append(data.names.index(name))
        else:
            out.append(int(c))
    if len(set(out)) != len(out) or any(not 0 <= c < data.p for c in out):
        raise DomainError("invalid predictor selection")
    return out


def test_partial(data: Dataset, partition: Sequence, alpha: float = 0.05,
                 method: str = "mixture", R: int = DEFAULT_R, B: int = DEFAULT_B,
                 seed: SeedLike = None) -> TestReport:
    """Test whether the predictors in ``partition`` add to the remaining ones.

    ``partition`` names the tested predictors (indices or names); the other
    predictors form the reduced model and must not be empty.
    """
    _check_alpha(alpha)
    _check_method(method)
    tested = _resolve_columns(data, partition)
    kept = [j for j in range(data.p) if j not in tested]
    if not tested or not kept:
        raise DomainError("both the tested and the retained predictor sets must be nonempty")
    if method == "bootstrap" and not data.fixed_support:
        raise UnsupportedMethodError(
            "the partial bootstrap needs densities with a common fixed support"
        )
    rng = _rng(seed)
    q = len(kept)
    ordered = data.select_predictors(kept + tested)
    full = fit_model(ordered)
    sub = fit_submodel(ordered, q)
    stat = partial_statistic(full, sub)
    kernel = partial_residual_kernel(ordered, full, full.summary, q)
    spectrum = kernel_eigenvalues(kernel)
    if method == "mixture":
        if spectrum.J == 0:
            raise DegenerateError("residual kernel is identically zero")
        draws = _mixture_draws(spectrum.eigenvalues, 1, R, rng)
        crit, pval, reps = float(np.quantile(draws, 1 - alpha)), _tail_pvalue(draws, stat), R
    elif method == "satterthwaite":
        a, m = satterthwaite_parameters(kernel, 1)
        crit = float(a * stats.gamma.ppf(1 - alpha, m / 2, scale=2.0))
        draws = a * rng.chisquare(m, size=R)
        pval, reps = _tail_pvalue(draws, stat), R
    else:
        boot = bootstrap_partial_statistics(ordered, q, B, rng)
        crit, pval, reps = float(np.quantile(boot, 1 - alpha)), bootstrap_pvalue(boot, stat), B
    return TestReport("partial", stat, method, alpha, crit, pval,
                      tuple(float(v) for v in spectrum.eigenvalues), 1, reps, _seed_tag(seed))


test_global.__test__ = False
test_partial.__test__ = False
