from .agreement import (
    env_stats,
    gradient_agreement,
    gradient_covariance,
    noise_scale,
    normalize_weights,
    weighted_mean,
)

__all__ = [
    "env_stats",
    "gradient_agreement",
    "gradient_covariance",
    "noise_scale",
    "normalize_weights",
    "weighted_mean",
]
