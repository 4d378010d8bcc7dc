"""Fréchet regression for distributional responses in the Wasserstein geometry."""

from .bands import (
    BandResult,
    DerivKernelMatrix,
    SandwichKernel,
    density_band,
    deriv_kernel_matrix,
    sandwich_kernel,
    winf_band,
)
from .errors import (
    DegenerateError,
    DesignError,
    DimensionError,
    DomainError,
    InputError,
    UnsupportedMethodError,
    WassregError,
)
from .fit import (
    Dataset,
    DensityFit,
    DesignSummary,
    FitResult,
    empirical_weights,
    fit_density,
    fit_model,
    fit_quantile,
    fit_submodel,
    submodel_weights,
    wasserstein_r_squared,
)
from .inference import (
    EigenSpectrum,
    PartialKernelMatrix,
    ResidualKernel,
    TestReport,
    bootstrap_global,
    critical_mixture,
    critical_satterthwaite,
    global_statistic,
    kernel_eigenvalues,
    partial_residual_kernel,
    partial_statistic,
    residual_kernel,
    test_global,
    test_partial,
)
from .quantile import (
    DensityCurve,
    QuantileCurve,
    QuantileDensityCurve,
    TimeGrid,
    invert_quantile,
    monotone_projection,
    trapezoid_inner_product,
    wasserstein2_distance,
    wasserstein_inf_distance,
)

__version__ = "0.1.0"
