from .gaussian import GaussianDomainSpec, gaussian_domain_envs, gaussian_theta
from .mlp import MlpProblem, mlp_problem, rescale_params
from .quadratic import (
    QuadraticFamily,
    aligned_sharp_family,
    flat_misaligned_family,
    named_family,
    quadratic_envs,
    zero_covariance_family,
)
from .toy2d import Toy2DLandscape, toy2d_landscape

__all__ = [
    "GaussianDomainSpec",
    "MlpProblem",
    "QuadraticFamily",
    "Toy2DLandscape",
    "aligned_sharp_family",
    "flat_misaligned_family",
    "gaussian_domain_envs",
    "gaussian_theta",
    "mlp_problem",
    "named_family",
    "quadratic_envs",
    "rescale_params",
    "toy2d_landscape",
    "zero_covariance_family",
]
