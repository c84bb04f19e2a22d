"""Symmetric positive-definite matrices and solves against them."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.typing import ArrayLike

from src.lib.errors import NotPositiveDefinite
from src.core.linalg.polar import as_matrix

SYMMETRY_TOL = 1e-12
PSD_TOL = 1e-10


def is_symmetric(m: np.ndarray, tol: float = SYMMETRY_TOL) -> bool:
    if m.shape[0] != m.shape[1]:
        return False
    return bool(np.all(np.abs(m - m.T) <= tol * np.maximum(1.0, np.abs(m))))


@dataclass(frozen=True)
class SymPD:
    """A symmetric matrix with a successful Cholesky factorization."""

    matrix: np.ndarray
    factor: np.ndarray

    @classmethod
    def from_matrix(cls, values: ArrayLike) -> "SymPD":
        m = as_matrix(values)
        if m.shape[0] != m.shape[1]:
            raise NotPositiveDefinite(f"matrix is not square: {m.shape}")
        if not is_symmetric(m):
            raise NotPositiveDefinite("matrix is not symmetric")
        try:
            factor = np.linalg.cholesky(m)
        except np.linalg.LinAlgError:
            raise NotPositiveDefinite("Cholesky factorization met a non-positive pivot") from None
        m.setflags(write=False)
        factor.setflags(write=False)
        return cls(m, factor)

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    def trace(self) -> float:
        return float(np.trace(self.matrix))


def _as_sympd(h: SymPD | ArrayLike) -> SymPD:
    return h if isinstance(h, SymPD) else SymPD.from_matrix(h)


def pd_solve(h: SymPD | ArrayLike, b: ArrayLike) -> np.ndarray:
    """Solve H X = B through the Cholesky factor L (L L^T X = B)."""

    h = _as_sympd(h)
    rhs = np.asarray(b, dtype=np.float64)
    vector = rhs.ndim == 1
    if vector:
        rhs = rhs[:, None]
    if rhs.shape[0] != h.dim:
        raise ValueError(f"B has {rhs.shape[0]} rows, H is {h.dim}x{h.dim}")
    y = np.linalg.solve(h.factor, rhs)
    x = np.linalg.solve(h.factor.T, y)
    return x[:, 0] if vector else x


def trace_solve(h: SymPD | ArrayLike, sigma: ArrayLike) -> float:
    """tr(H^-1 Sigma)."""

    return float(np.trace(pd_solve(h, sigma)))


def is_psd(m: ArrayLike, tol: float = PSD_TOL) -> bool:
    """Tolerant PSD check: every eigenvalue >= -tol * max(1, ||M||_F)."""

    m = as_matrix(m)
    if not is_symmetric(m):
        return False
    scale = max(1.0, float(np.linalg.norm(m)))
    return bool(np.linalg.eigvalsh(m).min() >= -tol * scale)
