"""Non-parametric latent priors whose midpoint distribution matches the prior."""

__version__ = "0.1.0"

from .density import (  # noqa: E402
    BinnedDensity,
    DivergenceKind,
    GridSpec,
    divergence,
    index_variance,
    make_truncated_cauchy,
    make_truncated_normal,
    make_uniform,
    mean,
    variance,
)
from .interpolant import interpolant_density, midpoint_density, mismatch_profile  # noqa: E402
from .optimizer import SolverConfig, SolveReport, shape_report, solve_prior  # noqa: E402
from .sampler import (  # noqa: E402
    Cauchy,
    GammaRadial,
    NonParametric,
    Normal,
    SampleBatch,
    Uniform,
    interpolate,
    midpoints,
    sample,
    uniform_on_sphere,
)

__all__ = [
    "BinnedDensity",
    "Cauchy",
    "DivergenceKind",
    "GammaRadial",
    "GridSpec",
    "NonParametric",
    "Normal",
    "SampleBatch",
    "SolveReport",
    "SolverConfig",
    "Uniform",
    "divergence",
    "index_variance",
    "interpolant_density",
    "interpolate",
    "make_truncated_cauchy",
    "make_truncated_normal",
    "make_uniform",
    "mean",
    "midpoint_density",
    "midpoints",
    "mismatch_profile",
    "sample",
    "shape_report",
    "solve_prior",
    "uniform_on_sphere",
    "variance",
]
