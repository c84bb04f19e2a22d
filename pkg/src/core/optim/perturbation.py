"""Ascent perturbations: whole-model L2 (SAM), scale-adaptive L2, and spectral."""

from __future__ import annotations

from dataclasses import dataclass
from enum import StrEnum
from typing import Optional, Sequence

import numpy as np

from src.core.linalg.polar import DEFAULT_NS_ITERS, newton_schulz_tensor
from src.core.stats.agreement import weighted_mean
from src.lib.errors import ZeroGradient
from src.lib.types import Environment, ParamSet

ASAM_ETA = 0.01


class RuleKind(StrEnum):
    SAM_L2 = "sam_l2"
    SPECTRAL = "spectral"
    ADAPTIVE_L2 = "adaptive_l2"


@dataclass(frozen=True)
class Perturbation:
    eps: ParamSet
    # 모든 텐서의 기울기가 0 이라 섭동을 건너뜀
    zero: bool = False

    @property
    def norm(self) -> float:
        return self.eps.norm()


def sam_perturbation(g: ParamSet, rho: float) -> ParamSet:
    """rho g / ||g||_2 over the flattened model."""

    norm = g.norm()
    if norm == 0.0:
        raise ZeroGradient("SAM perturbation needs a nonzero gradient")
    return g * (rho / norm)


def adaptive_perturbation(
    theta: ParamSet, g: ParamSet, rho: float, eta: float = ASAM_ETA
) -> ParamSet:
    """rho T^2 g / ||T g|| with T = |theta| + eta elementwise."""

    t = theta.map(lambda p: np.abs(p.values) + eta)
    tg = t.zip_map(g, np.multiply)
    norm = tg.norm()
    if norm == 0.0:
        raise ZeroGradient("adaptive perturbation needs a nonzero gradient")
    return t.zip_map(tg, np.multiply) * (rho / norm)


def spectral_perturbation(
    theta: ParamSet, g: ParamSet, rho: float, iters: int = DEFAULT_NS_ITERS
) -> Perturbation:
    """Per tensor: rho ||W||_F NS(G) for matrices, rho g / ||g|| for vectors.

    Tensors whose gradient is zero get a zero perturbation; if that is every
    tensor the result is flagged.
    """

    if not theta.same_layout(g):
        raise ValueError("theta and gradient layouts differ")
    eps, moved = [], False
    for w, gt in zip(theta, g):
        gnorm = float(np.linalg.norm(gt.values))
        if gnorm == 0.0:
            eps.append(np.zeros(w.shape))
        elif w.values.ndim >= 2:
            eps.append(rho * float(np.linalg.norm(w.values)) * newton_schulz_tensor(gt.values, iters))
            moved = True
        else:
            eps.append(rho * gt.values / gnorm)
            moved = True
    return Perturbation(ParamSet.from_arrays(zip(theta.names, eps)), zero=not moved)


@dataclass(frozen=True)
class PerturbationRule:
    kind: RuleKind
    rho: float
    ns_iters: int = DEFAULT_NS_ITERS

    def __post_init__(self):
        object.__setattr__(self, "kind", RuleKind(self.kind))
        if not self.rho > 0:
            raise ValueError(f"rho must be > 0, got {self.rho}")
        if self.ns_iters < 1:
            raise ValueError(f"ns_iters must be >= 1, got {self.ns_iters}")

    def perturb(self, theta: ParamSet, g: ParamSet) -> Perturbation:
        match self.kind:
            case RuleKind.SAM_L2:
                return Perturbation(sam_perturbation(g, self.rho))
            case RuleKind.ADAPTIVE_L2:
                return Perturbation(adaptive_perturbation(theta, g, self.rho))
            case RuleKind.SPECTRAL:
                return spectral_perturbation(theta, g, self.rho, self.ns_iters)
        raise ValueError(f"unknown rule kind: {self.kind}")


def aggregate_loss(envs: Sequence[Environment], theta: ParamSet, weights=None) -> float:
    losses = np.array([env.loss(theta) for env in envs])
    return float(weighted_mean(losses[:, None], weights)[0])


def aggregate_grad(envs: Sequence[Environment], theta: ParamSet, weights=None) -> ParamSet:
    grads = np.stack([env.grad(theta).flatten() for env in envs])
    return theta.unflatten(weighted_mean(grads, weights))


def measure_sharpness(
    theta: ParamSet,
    rule: PerturbationRule,
    envs: Sequence[Environment],
    grad: Optional[ParamSet] = None,
    weights: Optional[Sequence[float]] = None,
) -> float:
    """L(theta + eps) - L(theta) on the aggregate loss, eps from the rule.

    `grad` overrides the aggregate gradient at theta (e.g. the last nonzero
    training gradient at a numerically converged point).
    """

    g = grad if grad is not None else aggregate_grad(envs, theta, weights)
    if g.norm() == 0.0:
        raise ZeroGradient("sharpness measurement needs a nonzero aggregate gradient")
    eps = rule.perturb(theta, g).eps
    return aggregate_loss(envs, theta + eps, weights) - aggregate_loss(envs, theta, weights)
