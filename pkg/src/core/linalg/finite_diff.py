"""Central-difference gradient and Hessian oracles over ParamSet coordinates."""

from __future__ import annotations

import math

import numpy as np

from src.lib.errors import DimensionTooLarge, NonFiniteLoss
from src.lib.types import LossFn, ParamSet

GRAD_STEP = 1e-5
HESSIAN_STEP = 1e-4
MAX_HESSIAN_DIM = 200


def _eval_loss(f: LossFn, theta: ParamSet, flat: np.ndarray) -> float:
    value = float(f(theta.unflatten(flat)))
    if not math.isfinite(value):
        raise NonFiniteLoss(f"loss evaluation returned {value}")
    return value


def finite_diff_gradient(f: LossFn, theta: ParamSet, h: float = GRAD_STEP) -> ParamSet:
    if h <= 0:
        raise ValueError(f"h must be > 0, got {h}")
    x = theta.flatten()
    grad = np.empty_like(x)
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = h
        grad[i] = (_eval_loss(f, theta, x + e) - _eval_loss(f, theta, x - e)) / (2.0 * h)
    return theta.unflatten(grad)


def finite_diff_hessian(
    f: LossFn, theta: ParamSet, h: float = HESSIAN_STEP, max_dim: int = MAX_HESSIAN_DIM
) -> np.ndarray:
    """Second central differences, filled for i <= j and mirrored."""

    if h <= 0:
        raise ValueError(f"h must be > 0, got {h}")
    x = theta.flatten()
    d = x.size
    if d > max_dim:
        raise DimensionTooLarge(f"finite-difference Hessian needs d <= {max_dim}, got {d}")

    hess = np.empty((d, d))
    f0 = _eval_loss(f, theta, x)
    basis = np.eye(d) * h
    for i in range(d):
        ei = basis[i]
        hess[i, i] = (
            _eval_loss(f, theta, x + 2 * ei) - 2.0 * f0 + _eval_loss(f, theta, x - 2 * ei)
        ) / (4.0 * h * h)
        for j in range(i + 1, d):
            ej = basis[j]
            value = (
                _eval_loss(f, theta, x + ei + ej)
                - _eval_loss(f, theta, x + ei - ej)
                - _eval_loss(f, theta, x - ei + ej)
                + _eval_loss(f, theta, x - ei - ej)
            ) / (4.0 * h * h)
            hess[i, j] = hess[j, i] = value
    return hess
