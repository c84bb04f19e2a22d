"""CPU-bound experiment drivers. Each returns plain result objects; file output lives in commands."""

from __future__ import annotations

import math
import threading
from concurrent.futures import Executor
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from src.core.optim.base import OptimState
from src.core.optim.perturbation import PerturbationRule, RuleKind, measure_sharpness
from src.core.optim.steppers import (
    STEPPER_NAMES,
    GradientOracle,
    Stepper,
    make_stepper,
    run_trajectory,
)
from src.core.problems.gaussian import gaussian_domain_envs, gaussian_theta
from src.core.problems.mlp import MlpProblem, mlp_problem, rescale_params
from src.core.problems.quadratic import flat_misaligned_family, named_family, quadratic_envs
from src.core.problems.toy2d import Toy2DLandscape, toy2d_landscape
from src.core.stats.agreement import ZERO_NORM
from src.core.theorylab.decomposition import DecompositionReport, mc_excess_risk
from src.lib.config import DecompositionConfig, ScaleInvarianceConfig, Toy2DConfig, TrainConfig
from src.lib.errors import NonFiniteLoss, OperationCancelled
from src.lib.logger import setup_logger
from src.lib.rng import Purpose, Rng
from src.lib.types import Environment, ParamSet, StepReport

LOGGER = setup_logger("sage_opt.drivers")

BASELINES = ("erm", "sam", "sgld")
TRACE_EVERY = 10
TRACED_SEEDS = 5


# --- 분해 검증 격자 ----------------------------------------------------------------


def decomposition_grid(
    cfg: DecompositionConfig,
    seed: int,
    executor: Optional[Executor] = None,
    cancel_event: threading.Event | None = None,
    on_cell: Callable[[DecompositionReport], None] | None = None,
) -> list[DecompositionReport]:
    """One report per (K, sigma) cell. Every cell reuses the same trial streams."""

    fam = named_family(cfg.family, cfg.m)
    rng = Rng(seed)
    reports = []
    for k in cfg.k_values:
        for sigma in cfg.sigmas:
            report = mc_excess_risk(
                fam,
                k,
                sigma,
                cfg.trials,
                rng,
                meta=cfg.meta,
                estimator=cfg.estimator,
                chunk_size=cfg.chunk_size,
                executor=executor,
                cancel_event=cancel_event,
            )
            reports.append(report)
            if on_cell is not None:
                on_cell(report)
    return reports


# --- 2차원 장난감 지형 앙상블 ---------------------------------------------------------


@dataclass(frozen=True)
class ToyRun:
    stepper: str
    seed: int
    start: tuple[float, float]
    final: tuple[float, float]
    basin: str
    path: np.ndarray


@dataclass(frozen=True)
class ToySummary:
    stepper: str
    runs: int
    reached_b: int

    @property
    def fraction_b(self) -> float:
        return self.reached_b / self.runs if self.runs else 0.0


def toy_start(cfg: Toy2DConfig, rng: Rng) -> np.ndarray:
    """Uniform point in the start disk."""

    gen = rng.stream(Purpose.START)
    angle = gen.uniform(0.0, 2.0 * math.pi)
    r = cfg.start_radius * math.sqrt(gen.uniform())
    return np.array([cfg.start_x + r * math.cos(angle), cfg.start_y + r * math.sin(angle)])


def toy_stepper(name: str, cfg: Toy2DConfig) -> Stepper:
    return make_stepper(
        name,
        lr=cfg.lr,
        rho=cfg.rho,
        gamma=cfg.gamma,
        rule=RuleKind.SPECTRAL,
        sigma_sgld=cfg.sigma_sgld,
    )


def run_toy(
    landscape: Toy2DLandscape,
    cfg: Toy2DConfig,
    stepper_name: str,
    seed_index: int,
    run_seed: int,
    start: Optional[Sequence[float]] = None,
    cancel_event: threading.Event | None = None,
) -> ToyRun:
    """One trajectory. Every stepper sees the same start for a given seed index."""

    rng = Rng(run_seed, seed_index)
    origin = toy_start(cfg, rng) if start is None else np.asarray(start, dtype=np.float64)
    stepper = toy_stepper(stepper_name, cfg)
    oracle = GradientOracle(landscape.envs())
    path = [origin]

    def _trace(state: OptimState, _report: StepReport) -> None:
        if state.step % TRACE_EVERY == 0:
            path.append(state.params.flatten())

    state, _ = run_trajectory(
        stepper, stepper.init(ParamSet.vector(origin)), oracle, rng, cfg.steps, cancel_event, _trace
    )
    final = state.params.flatten()
    return ToyRun(
        stepper=stepper_name,
        seed=seed_index,
        start=(float(origin[0]), float(origin[1])),
        final=(float(final[0]), float(final[1])),
        basin=landscape.classify(final),
        path=np.array(path),
    )


def _batch_domain_grads(landscape: Toy2DLandscape, xy: np.ndarray) -> np.ndarray:
    """(n, 2) points -> (2, n, 2) domain gradients."""

    shared = landscape.shared_grad(xy)
    tilt = landscape.tilt_grad(xy)
    grads = np.stack([shared + tilt, shared - tilt])
    if not np.isfinite(grads).all():
        raise NonFiniteLoss("non-finite gradient in the toy ensemble")
    return grads


def _batch_agreement(grads: np.ndarray) -> np.ndarray:
    """Row-wise cosine between the two domain gradients, with the pairwise rules of S."""

    g1, g2 = grads
    n1 = np.sqrt(np.sum(g1 * g1, axis=-1))
    n2 = np.sqrt(np.sum(g2 * g2, axis=-1))
    ok = (n1 > ZERO_NORM) & (n2 > ZERO_NORM)
    cos = np.clip(np.sum(g1 * g2, axis=-1) / np.where(ok, n1 * n2, 1.0), -1.0, 1.0)
    cos = np.where(np.all(g1 == g2, axis=-1), 1.0, cos)
    cos = np.where(np.all(g1 == -g2, axis=-1), -1.0, cos)
    return np.where(ok, cos, 0.0)


def _batch_ascent(g: np.ndarray, rho: float, whole_model: bool) -> np.ndarray:
    norm = np.sqrt(np.sum(g * g, axis=-1, keepdims=True))
    safe = np.where(norm > 0.0, norm, 1.0)
    # sam: g (rho/|g|), spectral 규칙의 벡터 경우: rho g / |g|
    eps = g * (rho / safe) if whole_model else rho * g / safe
    return np.where(norm > 0.0, eps, 0.0)


def run_toy_batch(
    landscape: Toy2DLandscape,
    cfg: Toy2DConfig,
    stepper_name: str,
    seed_indices: Sequence[int],
    run_seed: int,
    cancel_event: threading.Event | None = None,
) -> list[ToyRun]:
    """Every seed of one stepper at once, as an (n, 2) array of points.

    Follows `run_toy` step for step: same start disk draws, the same per-seed
    noise streams keyed by (seed index, step), plain SGD on the mean gradient.
    """

    if stepper_name not in STEPPER_NAMES:
        raise ValueError(f"unknown stepper: {stepper_name}")
    rngs = [Rng(run_seed, s) for s in seed_indices]
    xy = np.stack([toy_start(cfg, rng) for rng in rngs]) if rngs else np.zeros((0, 2))
    origin = xy.copy()
    path = [origin]
    ascent = stepper_name in ("sam", "sage")
    noisy = stepper_name in ("sage", "sage_noise") and cfg.gamma > 0.0

    for t in range(cfg.steps):
        if cancel_event is not None and cancel_event.is_set():
            raise OperationCancelled(f"{stepper_name} ensemble cancelled at step {t}")

        # 1. 환경별 기울기와 평균
        grads = _batch_domain_grads(landscape, xy)
        g = grads.mean(axis=0)

        # 2. 일치도 S -> beta (ascent 이전 지점 기준)
        beta = cfg.gamma * (1.0 - _batch_agreement(grads)) if noisy else None

        # 3. 상승 섭동 후 재평가
        if ascent:
            eps = _batch_ascent(g, cfg.rho, whole_model=stepper_name == "sam")
            g = _batch_domain_grads(landscape, xy + eps).mean(axis=0)

        # 4. 잡음
        if stepper_name == "sgld" and cfg.sigma_sgld > 0.0:
            xi = np.stack([rng.stream(Purpose.SGLD, t).standard_normal(2) for rng in rngs])
            g = g + cfg.sigma_sgld * xi
        elif beta is not None:
            hot = np.flatnonzero(beta > 0.0)
            if hot.size:
                xi = np.zeros_like(g)
                for i in hot:
                    xi[i] = rngs[i].stream(Purpose.NOISE, t).standard_normal(2)
                g = np.where((beta > 0.0)[:, None], g + beta[:, None] * xi, g)

        xy = xy - cfg.lr * g
        if (t + 1) % TRACE_EVERY == 0:
            path.append(xy)

    paths = np.stack(path, axis=1)
    return [
        ToyRun(
            stepper=stepper_name,
            seed=int(s),
            start=(float(origin[i, 0]), float(origin[i, 1])),
            final=(float(xy[i, 0]), float(xy[i, 1])),
            basin=landscape.classify(xy[i]),
            path=paths[i],
        )
        for i, s in enumerate(seed_indices)
    ]


def summarize_toy(runs: Sequence[ToyRun], steppers: Sequence[str]) -> list[ToySummary]:
    out = []
    for name in steppers:
        mine = [r for r in runs if r.stepper == name]
        out.append(ToySummary(name, len(mine), sum(r.basin == "B" for r in mine)))
    return out


def toy_gate(summaries: Sequence[ToySummary], min_gain: float) -> bool:
    """fraction_B(sage_noise) >= fraction_B(baseline) + min_gain for every baseline run."""

    by_name = {s.stepper: s for s in summaries}
    if "sage_noise" not in by_name:
        return True
    ours = by_name["sage_noise"].fraction_b
    return all(ours >= by_name[b].fraction_b + min_gain for b in BASELINES if b in by_name)


# --- 재매개변수화 스윕 ---------------------------------------------------------------


@dataclass(frozen=True)
class ScaleRow:
    alpha: float
    sharpness_sam: float
    sharpness_adaptive: float
    sharpness_spectral: float
    true_flag: bool


def rescale_grad(g: ParamSet, alpha: float) -> ParamSet:
    """Gradient of the rescaled network: dW1 / alpha, db1 / alpha, dW2 * alpha."""

    arrays = {"W1": g["W1"] / alpha, "W2": g["W2"] * alpha}
    if "b1" in g.names:
        arrays["b1"] = g["b1"] / alpha
    return g.replace(**arrays)


def train_mlp(
    problem: MlpProblem,
    steps: int,
    lr: float,
    seed: int,
    cancel_event: threading.Event | None = None,
) -> tuple[ParamSet, ParamSet]:
    """Full-batch SGD. Returns the final parameters and the last nonzero aggregate gradient."""

    stepper = make_stepper("erm", lr=lr)
    oracle = GradientOracle(problem.envs)
    # 마지막 갱신 직전과 직후의 파라미터
    trail = [problem.params, problem.params]

    def _track(state: OptimState, _report: StepReport) -> None:
        trail[0], trail[1] = trail[1], state.params

    state, _ = run_trajectory(
        stepper, stepper.init(problem.params), oracle, Rng(seed), steps, cancel_event, _track
    )
    grad = problem.grad(state.params)
    if grad.norm() == 0.0:
        LOGGER.warning("Aggregate gradient vanished after training; using the previous step's")
        grad = problem.grad(trail[0])
    return state.params, grad


def scale_invariance_sweep(
    cfg: ScaleInvarianceConfig,
    seed: int,
    with_bias: bool,
    cancel_event: threading.Event | None = None,
) -> list[ScaleRow]:
    problem = mlp_problem(seed, with_bias=with_bias)
    params, fallback = train_mlp(problem, cfg.train_steps, cfg.lr, seed, cancel_event)
    true_grad = problem.grad(params).norm() > 0.0

    rules = {
        "sam": PerturbationRule(RuleKind.SAM_L2, cfg.rho),
        "adaptive": PerturbationRule(RuleKind.ADAPTIVE_L2, cfg.rho),
        "spectral": PerturbationRule(RuleKind.SPECTRAL, cfg.rho, cfg.ns_iters),
    }
    rows = []
    for alpha in cfg.alphas:
        p = rescale_params(params, alpha)
        g = None if true_grad else rescale_grad(fallback, alpha)
        measured = {name: measure_sharpness(p, rule, problem.envs, grad=g) for name, rule in rules.items()}
        rows.append(
            ScaleRow(alpha, measured["sam"], measured["adaptive"], measured["spectral"], true_grad)
        )
    return rows


def max_min_ratio(values: Sequence[float]) -> float:
    """max / min of strictly positive values; inf when any value is <= 0."""

    values = list(values)
    if not values or min(values) <= 0:
        return math.inf
    return max(values) / min(values)


def relative_spread(values: Sequence[float], reference: float) -> float:
    if reference == 0:
        return math.inf
    return (max(values) - min(values)) / abs(reference)


@dataclass(frozen=True)
class ScaleGate:
    spectral_ratio: float
    sam_ratio: float
    nobias_spread: float
    passed: bool


def scale_gate(
    with_bias: Sequence[ScaleRow], no_bias: Sequence[ScaleRow], cfg: ScaleInvarianceConfig
) -> ScaleGate:
    spectral_ratio = max_min_ratio(r.sharpness_spectral for r in with_bias)
    sam_ratio = max_min_ratio(r.sharpness_sam for r in with_bias)
    reference = next(r.sharpness_spectral for r in no_bias if r.alpha == 1.0)
    spread = relative_spread([r.sharpness_spectral for r in no_bias], reference)
    passed = (
        spectral_ratio <= cfg.spectral_max_ratio
        and sam_ratio >= cfg.sam_min_ratio
        and spread <= cfg.nobias_tolerance
    )
    return ScaleGate(spectral_ratio, sam_ratio, spread, passed)


# --- 단일 학습 실행 -----------------------------------------------------------------


def train_problem(cfg: TrainConfig, seed: int) -> tuple[list[Environment], ParamSet]:
    """Environments and initial parameters for `[train] problem`."""

    match cfg.problem:
        case "quadratic":
            start = Rng(seed).stream(Purpose.START).standard_normal(2)
            return quadratic_envs(flat_misaligned_family(cfg.m)), ParamSet.vector(start)
        case "gaussian":
            return gaussian_domain_envs(), gaussian_theta()
        case "mlp":
            problem = mlp_problem(seed, with_bias=cfg.mlp_bias)
            return list(problem.envs), problem.params
        case "toy2d":
            defaults = Toy2DConfig()
            return toy2d_landscape().envs(), ParamSet.vector([defaults.start_x, defaults.start_y])
    raise ValueError(f"unknown problem: {cfg.problem}")


def train_stepper(cfg: TrainConfig) -> Stepper:
    return make_stepper(
        cfg.stepper,
        lr=cfg.lr,
        rho=cfg.rho,
        gamma=cfg.gamma,
        rule=cfg.rule,
        ns_iters=cfg.ns_iters,
        sigma_sgld=cfg.sigma_sgld,
        base=cfg.base,
        beta1=cfg.beta1,
        beta2=cfg.beta2,
        adam_eps=cfg.adam_eps,
        env_weights=cfg.env_weights,
    )


def run_training(
    cfg: TrainConfig,
    seed: int,
    state: Optional[OptimState] = None,
    executor: Optional[Executor] = None,
    cancel_event: threading.Event | None = None,
    on_step: Callable[[OptimState, StepReport], None] | None = None,
) -> tuple[OptimState, list[StepReport], tuple[str, ...]]:
    """Train until the step counter reaches cfg.steps, resuming from `state` if given."""

    envs, theta0 = train_problem(cfg, seed)
    if cfg.env_weights and len(cfg.env_weights) != len(envs):
        raise ValueError(f"env_weights has {len(cfg.env_weights)} entries for {len(envs)} environments")
    stepper = train_stepper(cfg)
    if state is None:
        state = stepper.init(theta0)
    elif not state.params.same_layout(theta0):
        raise ValueError("snapshot parameters do not match the configured problem")
    oracle = GradientOracle(envs, executor)
    remaining = max(0, cfg.steps - state.step)
    state, reports = run_trajectory(stepper, state, oracle, Rng(seed), remaining, cancel_event, on_step)
    return state, reports, oracle.env_ids
