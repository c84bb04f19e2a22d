"""Cross-environment statistics: mean gradient and Hessian, gradient covariance, agreement."""

from __future__ import annotations

from typing import Optional, Sequence

import numpy as np
from numpy.typing import ArrayLike

from src.lib.errors import TooFewEnvironments
from src.lib.types import Environment, EnvStats, ParamSet

ZERO_NORM = 1e-12


def normalize_weights(weights: Optional[Sequence[float]], k: int) -> np.ndarray:
    """Uniform 1/K when `weights` is empty, otherwise weights scaled to sum to one."""

    if not weights:
        return np.full(k, 1.0 / k)
    w = np.asarray(weights, dtype=np.float64)
    if w.shape != (k,):
        raise ValueError(f"expected {k} environment weights, got {w.shape}")
    if (w < 0).any() or w.sum() <= 0:
        raise ValueError("environment weights must be >= 0 and not all zero")
    return w / w.sum()


def weighted_mean(rows: np.ndarray, weights: Optional[Sequence[float]] = None) -> np.ndarray:
    """Sum_k w_k rows[k], accumulated in environment order."""

    w = normalize_weights(weights, rows.shape[0])
    if weights:
        out = np.zeros(rows.shape[1:])
        for wk, row in zip(w, rows):
            out = out + wk * row
        return out
    return rows.mean(axis=0)


def _pair_cosine(a: np.ndarray, b: np.ndarray) -> float:
    na, nb = float(np.linalg.norm(a)), float(np.linalg.norm(b))
    if na <= ZERO_NORM or nb <= ZERO_NORM:
        return 0.0
    # 같은(또는 정반대) 벡터는 반올림 없이 +-1
    if np.array_equal(a, b):
        return 1.0
    if np.array_equal(a, -b):
        return -1.0
    return float(np.clip(a @ b / (na * nb), -1.0, 1.0))


def gradient_agreement(grads: Sequence[ArrayLike] | np.ndarray) -> float:
    """Average pairwise cosine similarity over all K(K-1)/2 pairs.

    Pairs where either gradient has norm <= 1e-12 count as 0.
    """

    rows = [np.asarray(g, dtype=np.float64).ravel() for g in grads]
    k = len(rows)
    if k < 2:
        raise TooFewEnvironments(f"agreement needs at least 2 gradients, got {k}")
    total = 0.0
    for i in range(k - 1):
        for j in range(i + 1, k):
            total += _pair_cosine(rows[i], rows[j])
    return 2.0 * total / (k * (k - 1))


def noise_scale(agreement: float, gamma: float) -> float:
    """beta = gamma (1 - S), in [0, 2 gamma]."""

    if gamma < 0:
        raise ValueError(f"gamma must be >= 0, got {gamma}")
    s = min(1.0, max(-1.0, agreement))
    return gamma * (1.0 - s)


def gradient_covariance(env_grads: np.ndarray) -> np.ndarray:
    """Population covariance (divisor K) of the rows of `env_grads`."""

    centered = env_grads - env_grads.mean(axis=0)
    sigma = centered.T @ centered / env_grads.shape[0]
    return 0.5 * (sigma + sigma.T)


def env_stats(envs: Sequence[Environment], theta: ParamSet) -> EnvStats:
    k = len(envs)
    if k < 2:
        raise TooFewEnvironments(f"env_stats needs at least 2 environments, got {k}")

    env_grads = np.stack([env.grad(theta).flatten() for env in envs])
    g_bar = env_grads.mean(axis=0)
    sigma_g = gradient_covariance(env_grads)

    h_bar = None
    if all(env.hessian is not None for env in envs):
        h_bar = np.mean([env.hessian(theta) for env in envs], axis=0)

    env_grads.setflags(write=False)
    return EnvStats(
        g_bar=g_bar,
        h_bar=h_bar,
        sigma_g=sigma_g,
        agreement=gradient_agreement(env_grads),
        K=k,
        env_grads=env_grads,
    )
