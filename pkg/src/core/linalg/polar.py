"""Polar factor of a gradient matrix: Newton–Schulz iteration and a Jacobi SVD oracle."""

from __future__ import annotations

import math

import numpy as np
from numpy.typing import ArrayLike

from src.lib.errors import NonFiniteValue, ZeroGradient

DEFAULT_NS_ITERS = 5
JACOBI_OFF_TOL = 1e-14
JACOBI_MAX_SWEEPS = 100
_EPS = float(np.finfo(np.float64).eps)


def as_matrix(values: ArrayLike) -> np.ndarray:
    m = np.array(values, dtype=np.float64)
    if m.ndim != 2:
        raise ValueError(f"Expected a 2-D matrix, got shape {m.shape}")
    if m.size == 0:
        raise ValueError("Matrix must be nonempty")
    if not np.isfinite(m).all():
        raise NonFiniteValue("Matrix has NaN or Inf entries")
    return m


def frobenius_norm(m: ArrayLike) -> float:
    return float(np.linalg.norm(as_matrix(m)))


def newton_schulz_polar(g: ArrayLike, iters: int = DEFAULT_NS_ITERS) -> np.ndarray:
    """Approximate the polar factor U V^T of `g` with the cubic Newton–Schulz map.

    X_0 = G / ||G||_F, X_{k+1} = 1/2 X_k (3I - X_k^T X_k). The normalization
    puts every singular value in (0, 1], inside the map's convergence region.
    Singular values near 1 converge cubically; a small normalized singular
    value s only grows like 1.5^k s, so ill-conditioned inputs need more
    than the default 5 iterations. Zero singular values stay zero.
    """

    if iters < 1:
        raise ValueError(f"iters must be >= 1, got {iters}")
    g = as_matrix(g)
    norm = float(np.linalg.norm(g))
    if norm == 0.0:
        raise ZeroGradient("Newton–Schulz needs a nonzero matrix")

    x = g / norm
    # X(3I - X^T X) == (3I - X X^T) X; 작은 쪽 Gram 행렬을 사용
    wide = x.shape[0] < x.shape[1]
    for _ in range(iters):
        if wide:
            x = 0.5 * (3.0 * x - (x @ x.T) @ x)
        else:
            x = 0.5 * (3.0 * x - x @ (x.T @ x))
    return x


def jacobi_svd(
    g: ArrayLike, tol: float = JACOBI_OFF_TOL, max_sweeps: int = JACOBI_MAX_SWEEPS
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Thin SVD by one-sided (Hestenes) Jacobi rotations.

    Returns (u, s, vt) with s in descending order. Columns of u belonging to
    zero singular values are left as zero vectors.
    """

    a = as_matrix(g).copy()
    transposed = a.shape[0] < a.shape[1]
    if transposed:
        a = a.T.copy()
    _, n = a.shape
    v = np.eye(n)
    scale = float(np.sum(a * a)) or 1.0

    for _ in range(max_sweeps):
        off = 0.0
        for p in range(n - 1):
            for q in range(p + 1, n):
                alpha = float(a[:, p] @ a[:, p])
                beta = float(a[:, q] @ a[:, q])
                gamma = float(a[:, p] @ a[:, q])
                off += gamma * gamma
                if abs(gamma) <= _EPS * math.sqrt(alpha * beta):
                    continue
                zeta = (beta - alpha) / (2.0 * gamma)
                t = math.copysign(1.0, zeta) / (abs(zeta) + math.sqrt(1.0 + zeta * zeta))
                c = 1.0 / math.sqrt(1.0 + t * t)
                s = c * t

                ap = a[:, p].copy()
                a[:, p] = c * ap - s * a[:, q]
                a[:, q] = s * ap + c * a[:, q]
                vp = v[:, p].copy()
                v[:, p] = c * vp - s * v[:, q]
                v[:, q] = s * vp + c * v[:, q]
        # A^T A의 비대각 성분 크기 (회전 전 기준)
        if math.sqrt(off) <= tol * scale:
            break

    sigma = np.linalg.norm(a, axis=0)
    order = np.argsort(-sigma, kind="stable")
    sigma, a, v = sigma[order], a[:, order], v[:, order]
    rank_tol = max(a.shape) * np.finfo(np.float64).eps * (sigma[0] if sigma.size else 0.0)
    u = np.zeros_like(a)
    nonzero = sigma > rank_tol
    u[:, nonzero] = a[:, nonzero] / sigma[nonzero]

    if transposed:
        return v, sigma, u.T
    return u, sigma, v.T


def svd_polar_oracle(g: ArrayLike) -> np.ndarray:
    """Exact polar factor U_r V_r^T over the nonzero singular directions of `g`."""

    g = as_matrix(g)
    if float(np.linalg.norm(g)) == 0.0:
        raise ZeroGradient("polar factor of a zero matrix is undefined")
    u, s, vt = jacobi_svd(g)
    rank_tol = max(g.shape) * np.finfo(np.float64).eps * s[0]
    keep = s > rank_tol
    return u[:, keep] @ vt[keep, :]


def newton_schulz_tensor(g: ArrayLike, iters: int = DEFAULT_NS_ITERS) -> np.ndarray:
    """Polar factor of a matrix or higher-order tensor.

    A tensor of shape (d0, ..., dk) is treated as the (d0*...*d(k-1), dk)
    matrix and the result is reshaped back.
    """

    arr = np.asarray(g, dtype=np.float64)
    if arr.ndim < 2:
        raise ValueError(f"Expected ndim >= 2, got {arr.ndim}")
    if arr.ndim == 2:
        return newton_schulz_polar(arr, iters)
    flat = arr.reshape(-1, arr.shape[-1])
    return newton_schulz_polar(flat, iters).reshape(arr.shape)
