"""Quadratic environment family L_e(theta) = 1/2 theta^T A theta + b_e^T theta."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numpy.typing import ArrayLike

from src.core.linalg.solve import SymPD
from src.core.stats.agreement import gradient_covariance
from src.lib.types import Environment, ParamSet

MEAN_TOL = 1e-14
FAMILIES = ("flat_misaligned", "aligned_sharp", "zero_covariance")


@dataclass(frozen=True)
class QuadraticFamily:
    """Shared curvature A and a centered set of linear terms b_e (one row per environment)."""

    a: SymPD
    b_set: np.ndarray

    @classmethod
    def build(cls, a: SymPD | ArrayLike, b_set: ArrayLike) -> "QuadraticFamily":
        a = a if isinstance(a, SymPD) else SymPD.from_matrix(a)
        b = np.array(b_set, dtype=np.float64)
        if b.ndim != 2 or b.shape[1] != a.dim or b.shape[0] < 1:
            raise ValueError(f"b_set must have shape (n, {a.dim}), got {b.shape}")
        # 평균을 빼서 sum b_e = 0 을 보장 (theta* = 0)
        b = b - b.mean(axis=0)
        if np.abs(b.mean(axis=0)).max() > MEAN_TOL:
            raise ValueError("b_set could not be centered")
        b.setflags(write=False)
        return cls(a, b)

    @property
    def dim(self) -> int:
        return self.a.dim

    @property
    def n(self) -> int:
        return self.b_set.shape[0]

    def sigma_g(self) -> np.ndarray:
        """Gradient covariance at theta* = 0: (1/n) sum b_e b_e^T."""
        return gradient_covariance(self.b_set)

    def theta_star(self) -> ParamSet:
        return ParamSet.vector(np.zeros(self.dim))

    def risk(self, x: np.ndarray) -> np.ndarray:
        """Population risk 1/2 x^T A x; `x` may be a batch of rows."""
        x = np.asarray(x, dtype=np.float64)
        return 0.5 * np.einsum("...i,ij,...j->...", x, self.a.matrix, x)

    def with_a(self, a: SymPD | ArrayLike) -> "QuadraticFamily":
        a = a if isinstance(a, SymPD) else SymPD.from_matrix(a)
        if a.dim != self.dim:
            raise ValueError(f"A must be {self.dim}x{self.dim}")
        # b_set 은 이미 중심화되어 있으므로 그대로 둠
        return QuadraticFamily(a, self.b_set)

    def with_b_set(self, b_set: ArrayLike) -> "QuadraticFamily":
        return QuadraticFamily.build(self.a, b_set)


def _quadratic_env(env_id: str, a: np.ndarray, b: np.ndarray) -> Environment:
    def loss(theta: ParamSet) -> float:
        x = theta.flatten()
        return float(0.5 * x @ a @ x + b @ x)

    def grad(theta: ParamSet) -> ParamSet:
        return theta.unflatten(a @ theta.flatten() + b)

    def hessian(theta: ParamSet) -> np.ndarray:
        return a.copy()

    return Environment(env_id, loss, grad, hessian)


def quadratic_envs(fam: QuadraticFamily) -> list[Environment]:
    a = np.array(fam.a.matrix)
    return [_quadratic_env(f"e{k}", a, np.array(b)) for k, b in enumerate(fam.b_set)]


def flat_misaligned_family(m: float, v: float = 1.0) -> QuadraticFamily:
    """A = (2M)^-1 I_2, b = +-(0, sqrt(v)): tr(A) = 1/M, tr(A^-1 Sigma_g) = 2Mv."""

    lam = 1.0 / (2.0 * m)
    s = math.sqrt(v)
    return QuadraticFamily.build(lam * np.eye(2), [[0.0, s], [0.0, -s]])


def aligned_sharp_family(m: float) -> QuadraticFamily:
    """A = (M/2) I_2, b = +-(1/sqrt 2, 0): tr(A) = M, tr(A^-1 Sigma_g) = 1/M."""

    lam = m / 2.0
    s = 1.0 / math.sqrt(2.0)
    return QuadraticFamily.build(lam * np.eye(2), [[s, 0.0], [-s, 0.0]])


def zero_covariance_family(m: float) -> QuadraticFamily:
    return QuadraticFamily.build(np.eye(2) / (2.0 * m), np.zeros((2, 2)))


def named_family(name: str, m: float) -> QuadraticFamily:
    match name:
        case "flat_misaligned":
            return flat_misaligned_family(m)
        case "aligned_sharp":
            return aligned_sharp_family(m)
        case "zero_covariance":
            return zero_covariance_family(m)
    raise ValueError(f"unknown family: {name}")
