"""Two-minima landscape over R^2 with a conflict basin and an agreement basin.

Both domains share L_shared(t) = kappa/2 |t|^2 - h exp(-|t - A0|^2 / 2s^2)
- h exp(-|t - B0|^2 / 2s^2). Domain 1 adds a compactly supported tilt phi
centred on A0 and domain 2 subtracts it, so the aggregate loss equals
L_shared exactly while the domain gradients disagree around A. Outside the
support of phi (in particular around B) the two domains are identical.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.typing import ArrayLike

from src.core.stats.agreement import ZERO_NORM
from src.lib.types import Environment, ParamSet

KAPPA = 0.2
WELL_DEPTH = 1.0
WELL_WIDTH = 0.7
CENTER_A = (-1.5, 0.0)
CENTER_B = (1.5, 0.0)
TILT = 2.5
TILT_RADIUS = 2.0
REFINE_ITERS = 50
MIN_GRAD_TOL = 1e-8


@dataclass(frozen=True)
class Toy2DLandscape:
    kappa: float
    depth: float
    width: float
    center_a: np.ndarray
    center_b: np.ndarray
    tilt: float
    tilt_radius: float
    minimum_a: np.ndarray
    minimum_b: np.ndarray

    # --- 공통 부분 -------------------------------------------------------
    def _wells(self, xy: np.ndarray):
        for c in (self.center_a, self.center_b):
            d = xy - c
            e = self.depth * np.exp(-np.sum(d * d, axis=-1) / (2.0 * self.width**2))
            yield d, e

    def shared_loss(self, xy: ArrayLike) -> np.ndarray:
        xy = np.asarray(xy, dtype=np.float64)
        out = 0.5 * self.kappa * np.sum(xy * xy, axis=-1)
        for _, e in self._wells(xy):
            out = out - e
        return out

    def shared_grad(self, xy: ArrayLike) -> np.ndarray:
        xy = np.asarray(xy, dtype=np.float64)
        out = self.kappa * xy
        for d, e in self._wells(xy):
            out = out + e[..., None] * d / self.width**2
        return out

    def shared_hessian(self, xy: ArrayLike) -> np.ndarray:
        xy = np.asarray(xy, dtype=np.float64)
        out = self.kappa * np.eye(2)
        s2 = self.width**2
        for d, e in self._wells(xy):
            out = out + e * (np.eye(2) / s2 - np.outer(d, d) / s2**2)
        return out

    # --- 도메인 간 기울기 phi ----------------------------------------------
    def _tilt_parts(self, xy: np.ndarray):
        d = xy - self.center_a
        r2 = np.sum(d * d, axis=-1)
        q = np.clip(1.0 - r2 / self.tilt_radius**2, 0.0, None)
        return d, q

    def tilt_value(self, xy: ArrayLike) -> np.ndarray:
        d, q = self._tilt_parts(np.asarray(xy, dtype=np.float64))
        return self.tilt * d[..., 1] * q**3

    def tilt_grad(self, xy: ArrayLike) -> np.ndarray:
        d, q = self._tilt_parts(np.asarray(xy, dtype=np.float64))
        r2inv = 1.0 / self.tilt_radius**2
        grad_psi = (-6.0 * r2inv * q**2)[..., None] * d
        out = d[..., 1:2] * grad_psi
        out[..., 1] += q**3
        return self.tilt * out

    def tilt_hessian(self, xy: ArrayLike) -> np.ndarray:
        d, q = self._tilt_parts(np.asarray(xy, dtype=np.float64))
        q = float(q)
        r2inv = 1.0 / self.tilt_radius**2
        grad_psi = -6.0 * r2inv * q**2 * d
        hess_psi = -6.0 * r2inv * q**2 * np.eye(2) + 24.0 * r2inv**2 * q * np.outer(d, d)
        e_y = np.array([0.0, 1.0])
        return self.tilt * (
            np.outer(e_y, grad_psi) + np.outer(grad_psi, e_y) + d[1] * hess_psi
        )

    # --- 도메인별 손실 -------------------------------------------------------
    def domain_loss(self, k: int, xy: ArrayLike) -> np.ndarray:
        sign = 1.0 if k == 0 else -1.0
        return self.shared_loss(xy) + sign * self.tilt_value(xy)

    def domain_grad(self, k: int, xy: ArrayLike) -> np.ndarray:
        sign = 1.0 if k == 0 else -1.0
        return self.shared_grad(xy) + sign * self.tilt_grad(xy)

    def domain_hessian(self, k: int, xy: ArrayLike) -> np.ndarray:
        sign = 1.0 if k == 0 else -1.0
        return self.shared_hessian(xy) + sign * self.tilt_hessian(xy)

    def aggregate_loss(self, xy: ArrayLike) -> np.ndarray:
        return 0.5 * (self.domain_loss(0, xy) + self.domain_loss(1, xy))

    def envs(self) -> list[Environment]:
        return [self._env(k) for k in range(2)]

    def _env(self, k: int) -> Environment:
        def loss(theta: ParamSet) -> float:
            return float(self.domain_loss(k, theta.flatten()))

        def grad(theta: ParamSet) -> ParamSet:
            return theta.unflatten(self.domain_grad(k, theta.flatten()))

        def hessian(theta: ParamSet) -> np.ndarray:
            return self.domain_hessian(k, theta.flatten())

        return Environment(f"domain{k + 1}", loss, grad, hessian)

    # --- 일치도 필드 / 분지 분류 ----------------------------------------------
    def agreement_field(self, xy: ArrayLike) -> np.ndarray:
        """Cosine between the two domain gradients; 0 where either vanishes."""

        g1 = self.domain_grad(0, xy)
        g2 = self.domain_grad(1, xy)
        n1 = np.linalg.norm(g1, axis=-1)
        n2 = np.linalg.norm(g2, axis=-1)
        ok = (n1 > ZERO_NORM) & (n2 > ZERO_NORM)
        denom = np.where(ok, n1 * n2, 1.0)
        return np.where(ok, np.sum(g1 * g2, axis=-1) / denom, 0.0)

    def disk_agreement(self, center: ArrayLike, radius: float, n: int = 32) -> float:
        """Mean agreement over the cell centres of an n x n grid that fall inside the disk."""

        ticks = (np.arange(n) + 0.5) / n * 2.0 - 1.0
        gx, gy = np.meshgrid(ticks, ticks, indexing="ij")
        inside = gx**2 + gy**2 <= 1.0
        pts = np.asarray(center, dtype=np.float64) + radius * np.stack(
            [gx[inside], gy[inside]], axis=-1
        )
        return float(np.mean(self.agreement_field(pts)))

    def classify(self, xy: ArrayLike) -> str:
        xy = np.asarray(xy, dtype=np.float64)
        da = np.linalg.norm(xy - self.minimum_a)
        db = np.linalg.norm(xy - self.minimum_b)
        return "A" if da <= db else "B"


def _refine(land: Toy2DLandscape, start: np.ndarray) -> np.ndarray:
    # 해석적 Hessian 을 쓰는 Newton 반복
    x = np.array(start, dtype=np.float64)
    for _ in range(REFINE_ITERS):
        g = land.shared_grad(x)
        if np.linalg.norm(g) <= 1e-15:
            break
        x = x - np.linalg.solve(land.shared_hessian(x), g)
    g = land.shared_grad(x)
    if np.linalg.norm(g) > MIN_GRAD_TOL or np.linalg.eigvalsh(land.shared_hessian(x)).min() <= 0:
        raise RuntimeError(f"landscape minimum refinement failed near {start}")
    return x


def toy2d_landscape() -> Toy2DLandscape:
    base = Toy2DLandscape(
        kappa=KAPPA,
        depth=WELL_DEPTH,
        width=WELL_WIDTH,
        center_a=np.array(CENTER_A),
        center_b=np.array(CENTER_B),
        tilt=TILT,
        tilt_radius=TILT_RADIUS,
        minimum_a=np.array(CENTER_A),
        minimum_b=np.array(CENTER_B),
    )
    return Toy2DLandscape(
        **{
            **base.__dict__,
            "minimum_a": _refine(base, base.center_a),
            "minimum_b": _refine(base, base.center_b),
        }
    )
