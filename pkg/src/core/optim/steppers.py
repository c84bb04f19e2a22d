"""Step rules: ERM/SGD, SGLD, SAM and SAGE over a set of environments.

Every step is a pure function of (state, environments, rng): the input state
is never modified, so an exception inside a step leaves the caller's state as
it was.
"""

from __future__ import annotations

import math
import threading
import time
from concurrent.futures import Executor
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from src.core.optim.base import BaseOptimizer, OptimState, make_base
from src.core.optim.perturbation import PerturbationRule, RuleKind
from src.core.stats.agreement import gradient_agreement, noise_scale, weighted_mean
from src.lib.errors import NonFiniteLoss, OperationCancelled, ZeroGradient
from src.lib.logger import setup_logger
from src.lib.rng import Purpose, Rng
from src.lib.types import Environment, ParamSet, StepReport

LOGGER = setup_logger("sage_opt.optim")

STEPPER_NAMES = ("erm", "sam", "sgld", "sage", "sage_noise")


class GradientOracle:
    """Evaluates every environment's loss and gradient at one point.

    Each call to `evaluate` is one evaluation round; `rounds` counts them.
    With an executor the environments are mapped concurrently, and results
    come back in environment order.
    """

    def __init__(self, envs: Sequence[Environment], executor: Optional[Executor] = None):
        self.envs = tuple(envs)
        if not self.envs:
            raise ValueError("GradientOracle needs at least one environment")
        self.executor = executor
        self.rounds = 0

    @property
    def env_ids(self) -> tuple[str, ...]:
        return tuple(env.id for env in self.envs)

    def evaluate(self, theta: ParamSet) -> tuple[np.ndarray, np.ndarray]:
        """Return (losses (K,), flattened gradients (K, d))."""

        self.rounds += 1

        def _one(env: Environment):
            return env.loss(theta), env.grad(theta).flatten()

        if self.executor is None:
            results = [_one(env) for env in self.envs]
        else:
            results = list(self.executor.map(_one, self.envs))

        losses = np.array([r[0] for r in results], dtype=np.float64)
        grads = np.stack([r[1] for r in results])
        if not np.isfinite(losses).all() or not np.isfinite(grads).all():
            bad = [e for e, l in zip(self.env_ids, losses) if not math.isfinite(l)]
            raise NonFiniteLoss(f"non-finite loss or gradient (environments: {bad or 'gradient'})")
        return losses, grads


def _agreement(grads: np.ndarray) -> float:
    return gradient_agreement(grads) if grads.shape[0] >= 2 else 1.0


def _report(
    state: OptimState,
    losses: np.ndarray,
    grads: np.ndarray,
    weights: Sequence[float],
    beta: float,
    eps_norm: float,
    rounds: int,
    zero_perturbation: bool = False,
    agreement: Optional[float] = None,
) -> StepReport:
    return StepReport(
        step=state.step,
        env_losses=tuple(float(l) for l in losses),
        aggregate_loss=float(weighted_mean(losses[:, None], weights)[0]),
        agreement=_agreement(grads) if agreement is None else agreement,
        beta=beta,
        eps_norm=eps_norm,
        grad_rounds=rounds,
        zero_perturbation=zero_perturbation,
    )


def sgd_step(
    state: OptimState,
    oracle: GradientOracle,
    base: BaseOptimizer,
    weights: Sequence[float] = (),
) -> tuple[OptimState, StepReport]:
    """ERM: one base-optimizer update with the weighted total gradient."""

    start = oracle.rounds
    losses, grads = oracle.evaluate(state.params)
    g = weighted_mean(grads, weights)
    new = base.apply(state, state.params.unflatten(g))
    return new, _report(state, losses, grads, weights, 0.0, 0.0, oracle.rounds - start)


def sgld_step(
    state: OptimState,
    oracle: GradientOracle,
    base: BaseOptimizer,
    sigma: float,
    rng: Rng,
    weights: Sequence[float] = (),
) -> tuple[OptimState, StepReport]:
    """SGD on g + sigma xi: the base update scales the isotropic noise by the learning rate."""

    start = oracle.rounds
    losses, grads = oracle.evaluate(state.params)
    g = weighted_mean(grads, weights)
    if sigma > 0:
        g = g + sigma * rng.stream(Purpose.SGLD, state.step).standard_normal(g.shape)
    new = base.apply(state, state.params.unflatten(g))
    return new, _report(state, losses, grads, weights, 0.0, 0.0, oracle.rounds - start)


def _perturbed_step(
    state: OptimState,
    oracle: GradientOracle,
    rule: Optional[PerturbationRule],
    gamma: float,
    base: BaseOptimizer,
    weights: Sequence[float],
    rng: Optional[Rng],
) -> tuple[OptimState, StepReport]:
    start = oracle.rounds
    theta = state.params

    # 1. 환경별 손실/기울기, 가중 합 기울기
    losses, grads = oracle.evaluate(theta)
    g_w = weighted_mean(grads, weights)

    # 2. 기울기 일치도 S 와 잡음 크기 beta
    agreement = _agreement(grads)
    beta = noise_scale(agreement, gamma)

    # 3~5. 섭동 계산, theta + eps 에서 다시 기울기 평가
    zero, eps_norm = False, 0.0
    if rule is None:
        g_pert = g_w
    else:
        try:
            pert = rule.perturb(theta, theta.unflatten(g_w))
            eps, zero = pert.eps, pert.zero
        except ZeroGradient:
            eps, zero = theta.zeros_like(), True
        if zero:
            LOGGER.warning("Zero aggregate gradient at step %d; skipping the ascent", state.step)
        eps_norm = eps.norm()
        _, grads_pert = oracle.evaluate(theta + eps)
        g_pert = weighted_mean(grads_pert, weights)

    # 6. theta 로 복귀, 일치도에 반비례하는 잡음 추가
    if beta > 0.0:
        xi = rng.stream(Purpose.NOISE, state.step).standard_normal(g_pert.shape)
        g_final = g_pert + beta * xi
    else:
        g_final = g_pert

    # 7. 기본 옵티마이저 갱신
    new = base.apply(state, theta.unflatten(g_final))
    report = _report(
        state, losses, grads, weights, beta, eps_norm, oracle.rounds - start, zero, agreement
    )
    return new, report


def sam_step(
    state: OptimState,
    oracle: GradientOracle,
    rule: PerturbationRule,
    base: BaseOptimizer,
    weights: Sequence[float] = (),
) -> tuple[OptimState, StepReport]:
    """Ascend to theta + eps, descend with the gradient found there."""

    return _perturbed_step(state, oracle, rule, 0.0, base, weights, None)


@dataclass(frozen=True)
class SageConfig:
    """rule=None runs the noise-only variant (one evaluation round per step)."""

    rule: Optional[PerturbationRule]
    gamma: float
    base: BaseOptimizer
    env_weights: tuple[float, ...] = ()

    def __post_init__(self):
        if not self.gamma >= 0:
            raise ValueError(f"gamma must be >= 0, got {self.gamma}")
        if not self.base.lr > 0:
            raise ValueError(f"lr must be > 0, got {self.base.lr}")


def sage_step(
    state: OptimState, oracle: GradientOracle, cfg: SageConfig, rng: Rng
) -> tuple[OptimState, StepReport]:
    """Agreement-scaled noise on top of a perturbed (sharpness-aware) gradient.

    Phases: per-environment gradients and their weighted total; agreement S
    and beta = gamma (1 - S); perturbation eps from the total; gradient at
    theta + eps; g_final = g_pert + beta xi; base-optimizer update at theta.
    """

    return _perturbed_step(state, oracle, cfg.rule, cfg.gamma, cfg.base, cfg.env_weights, rng)


@dataclass(frozen=True)
class Stepper:
    name: str
    base: BaseOptimizer
    rule: Optional[PerturbationRule] = None
    gamma: float = 0.0
    sigma_sgld: float = 0.0
    env_weights: tuple[float, ...] = ()

    def init(self, params: ParamSet) -> OptimState:
        return self.base.init(params)

    def step(
        self, state: OptimState, oracle: GradientOracle, rng: Rng
    ) -> tuple[OptimState, StepReport]:
        match self.name:
            case "erm":
                return sgd_step(state, oracle, self.base, self.env_weights)
            case "sgld":
                return sgld_step(state, oracle, self.base, self.sigma_sgld, rng, self.env_weights)
            case "sam":
                return sam_step(state, oracle, self.rule, self.base, self.env_weights)
            case "sage" | "sage_noise":
                cfg = SageConfig(self.rule, self.gamma, self.base, self.env_weights)
                return sage_step(state, oracle, cfg, rng)
        raise ValueError(f"unknown stepper: {self.name}")


def make_stepper(
    name: str,
    lr: float,
    rho: float = 0.05,
    gamma: float = 0.0,
    rule: str = RuleKind.SPECTRAL,
    ns_iters: int = 5,
    sigma_sgld: float = 0.0,
    base: str = "sgd",
    beta1: float = 0.9,
    beta2: float = 0.999,
    adam_eps: float = 1e-8,
    env_weights: Sequence[float] = (),
) -> Stepper:
    """Build a stepper by name. `sam` always uses the whole-model L2 rule."""

    if name not in STEPPER_NAMES:
        raise ValueError(f"unknown stepper: {name}")
    opt = make_base(base, lr, beta1, beta2, adam_eps)
    match name:
        case "sam":
            perturbation = PerturbationRule(RuleKind.SAM_L2, rho, ns_iters)
        case "sage":
            perturbation = PerturbationRule(rule, rho, ns_iters)
        case _:
            perturbation = None
    return Stepper(
        name,
        opt,
        rule=perturbation,
        gamma=gamma if name in ("sage", "sage_noise") else 0.0,
        sigma_sgld=sigma_sgld if name == "sgld" else 0.0,
        env_weights=tuple(env_weights),
    )


def run_trajectory(
    stepper: Stepper,
    state: OptimState,
    oracle: GradientOracle,
    rng: Rng,
    steps: int,
    cancel_event: threading.Event | None = None,
    on_step: Callable[[OptimState, StepReport], None] | None = None,
) -> tuple[OptimState, list[StepReport]]:
    """Run `steps` steps. Wall time goes to the DEBUG log only."""

    reports = []
    for _ in range(steps):
        if cancel_event is not None and cancel_event.is_set():
            raise OperationCancelled(f"{stepper.name} cancelled at step {state.step}")
        t0 = time.perf_counter()
        state, report = stepper.step(state, oracle, rng)
        reports.append(report)
        LOGGER.debug(
            "step",
            extra={
                "stepper": stepper.name,
                "step": report.step,
                "S": report.agreement,
                "beta": report.beta,
                "eps_norm": report.eps_norm,
                "wall_s": time.perf_counter() - t0,
            },
        )
        if on_step is not None:
            on_step(state, report)
    return state, reports
