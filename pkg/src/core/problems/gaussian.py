"""Two-domain Gaussian task with one invariant and one spurious feature.

y is +-1 with equal probability, x_inv | y ~ N(y mu_inv, var_inv) and
x_spur | y ~ N(y c_k, var_spur) with c_k = +mu_spur in domain 1 and -mu_spur
in domain 2. For the linear predictor theta^T x under squared error the
expected loss of domain k is exactly

    L_k(theta) = 1/2 - b_k^T theta + 1/2 theta^T H_k theta,

with b_k = E[y x] = (mu_inv, c_k) and H_k = E[x x^T]. No sampling happens.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from src.lib.types import Environment, ParamSet

DOMAIN_IDS = ("d1", "d2")


@dataclass(frozen=True)
class GaussianDomainSpec:
    mu_inv: float = 1.0
    var_inv: float = 9.0
    mu_spur: float = 2.0
    var_spur: float = 0.01
    # 3차 섭동 theta_inv^3 의 계수 (0 이면 순수 2차)
    cubic: float = 0.0

    def __post_init__(self):
        for name in ("mu_inv", "var_inv", "mu_spur", "var_spur", "cubic"):
            if not math.isfinite(getattr(self, name)):
                raise ValueError(f"{name} must be finite")
        if self.var_inv <= 0 or self.var_spur <= 0:
            raise ValueError("variances must be > 0")

    def spur_mean(self, k: int) -> float:
        """c_k: +mu_spur for domain 0, -mu_spur for domain 1."""
        return self.mu_spur if k == 0 else -self.mu_spur

    def b(self, k: int) -> np.ndarray:
        return np.array([self.mu_inv, self.spur_mean(k)])

    def hessian(self, k: int) -> np.ndarray:
        c = self.spur_mean(k)
        return np.array(
            [
                [self.mu_inv**2 + self.var_inv, self.mu_inv * c],
                [self.mu_inv * c, c**2 + self.var_spur],
            ]
        )

    def snr_invariant(self) -> float:
        return self.mu_inv**2 / self.var_inv

    def snr_spurious(self) -> float:
        return self.mu_spur**2 / self.var_spur


def _domain_env(env_id: str, b: np.ndarray, h: np.ndarray, cubic: float) -> Environment:
    def loss(theta: ParamSet) -> float:
        x = theta.flatten()
        return float(0.5 - b @ x + 0.5 * x @ h @ x + cubic * x[0] ** 3)

    def grad(theta: ParamSet) -> ParamSet:
        x = theta.flatten()
        g = h @ x - b
        g[0] += 3.0 * cubic * x[0] ** 2
        return theta.unflatten(g)

    def hessian(theta: ParamSet) -> np.ndarray:
        out = h.copy()
        out[0, 0] += 6.0 * cubic * theta.flatten()[0]
        return out

    return Environment(env_id, loss, grad, hessian)


def gaussian_domain_envs(domain: GaussianDomainSpec | None = None) -> list[Environment]:
    domain = domain or GaussianDomainSpec()
    return [
        _domain_env(DOMAIN_IDS[k], domain.b(k), domain.hessian(k), domain.cubic) for k in range(2)
    ]


def gaussian_theta(values=(0.0, 0.0)) -> ParamSet:
    """Parameters are a single vector (theta_inv, theta_spur)."""
    return ParamSet.vector(values)
