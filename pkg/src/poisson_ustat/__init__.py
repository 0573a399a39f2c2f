"""Monte Carlo and quadrature tools for U-statistics of Poisson point processes:
samplers, kernel contractions and chaos projections, Gaussian-fluctuation
diagnostics and geometric applications."""

__version__ = "0.1.0"

from .kernel_algebra import (
    ContractedKernel,
    FullSpaceControl,
    KappaDensity,
    b3_bound,
    contract,
    contraction_norm_sq,
    flat_integral,
    inner_product,
    power_integral,
    verify_rescaling,
)
from .kernels import Kernel, constant_kernel, edge_kernel, indicator_kernel, product_kernel, sign_kernel
from .limits import NormalApproximation, PowerLawFit, fourth_moment_gap, rate_fit, wasserstein1_to_std_gaussian
from .mc import MCEstimate, QuadratureGrid
from .point_process import (
    Control,
    MarkDistribution,
    PointConfiguration,
    UniformDensity,
    Window,
    sample_poisson_pp,
    sample_poissonized_binomial,
)
from .ustat import ChaosKernel, UStatistic, chaos_moments, detect_hoeffding_rank, project_kernel, ustat_value

__all__ = [
    "ChaosKernel",
    "ContractedKernel",
    "Control",
    "FullSpaceControl",
    "KappaDensity",
    "Kernel",
    "MCEstimate",
    "MarkDistribution",
    "NormalApproximation",
    "PointConfiguration",
    "PowerLawFit",
    "QuadratureGrid",
    "UStatistic",
    "UniformDensity",
    "Window",
    "b3_bound",
    "chaos_moments",
    "constant_kernel",
    "contract",
    "contraction_norm_sq",
    "detect_hoeffding_rank",
    "edge_kernel",
    "flat_integral",
    "fourth_moment_gap",
    "indicator_kernel",
    "inner_product",
    "power_integral",
    "product_kernel",
    "project_kernel",
    "rate_fit",
    "sample_poisson_pp",
    "sample_poissonized_binomial",
    "sign_kernel",
    "ustat_value",
    "verify_rescaling",
    "wasserstein1_to_std_gaussian",
]
