"""Run configuration: one frozen dataclass per subcommand section."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import StrEnum
from typing import Optional, Union

from src.lib.errors import ConfigError

STEPPERS = ("erm", "sam", "sgld", "sage", "sage_noise")
RULES = ("sam_l2", "spectral", "adaptive_l2")
PROBLEMS = ("quadratic", "gaussian", "mlp", "toy2d")
BASES = ("sgd", "adam")


class Subcommand(StrEnum):
    VERIFY_DECOMPOSITION = "verify-decomposition"
    COUNTEREXAMPLE = "counterexample"
    MOTIVATING = "motivating"
    SCALE_INVARIANCE = "scale-invariance"
    TOY2D = "toy2d"
    TRAIN = "train"


def _require(cond: bool, msg: str) -> None:
    if not cond:
        raise ConfigError(msg)


def _positive(name: str, value: float) -> None:
    _require(math.isfinite(value) and value > 0, f"{name} must be > 0, got {value}")


def _non_negative(name: str, value: float) -> None:
    _require(math.isfinite(value) and value >= 0, f"{name} must be >= 0, got {value}")


@dataclass(frozen=True)
class DecompositionConfig:
    k_values: tuple[int, ...] = (1, 2, 5, 10)
    sigmas: tuple[float, ...] = (0.0, 0.1, 0.3)
    trials: int = 100_000
    m: float = 10.0
    # flat_misaligned | aligned_sharp | zero_covariance
    family: str = "flat_misaligned"
    # uniform | gaussian
    meta: str = "uniform"
    # closed_form | sgd
    estimator: str = "closed_form"
    chunk_size: int = 8192
    remainder_check: bool = True

    def validate(self) -> None:
        _require(self.trials >= 100, f"trials must be >= 100, got {self.trials}")
        _require(bool(self.k_values), "k_values must not be empty")
        _require(all(k >= 1 for k in self.k_values), "every K must be >= 1")
        _require(bool(self.sigmas), "sigmas must not be empty")
        for s in self.sigmas:
            _non_negative("sigma", s)
        _require(self.m > 1, f"m must be > 1, got {self.m}")
        _require(
            self.family in ("flat_misaligned", "aligned_sharp", "zero_covariance"),
            f"unknown family: {self.family}",
        )
        _require(self.meta in ("uniform", "gaussian"), f"unknown meta: {self.meta}")
        _require(
            self.estimator in ("closed_form", "sgd"), f"unknown estimator: {self.estimator}"
        )
        _require(self.chunk_size >= 1, "chunk_size must be >= 1")


@dataclass(frozen=True)
class CounterexampleConfig:
    m_values: tuple[float, ...] = (1.5, 2.0, 10.0, 100.0)

    def validate(self) -> None:
        _require(bool(self.m_values), "m_values must not be empty")
        _require(all(m > 1 for m in self.m_values), "every M must be > 1")


@dataclass(frozen=True)
class MotivatingConfig:
    delta: float = 0.1
    mu_inv: float = 1.0
    var_inv: float = 9.0
    mu_spur: float = 2.0
    var_spur: float = 0.01

    def validate(self) -> None:
        _positive("var_inv", self.var_inv)
        _positive("var_spur", self.var_spur)
        _require(math.isfinite(self.delta), "delta must be finite")


@dataclass(frozen=True)
class ScaleInvarianceConfig:
    alphas: tuple[float, ...] = (0.1, 0.2, 0.5, 1.0, 2.0, 5.0, 10.0)
    train_steps: int = 5000
    lr: float = 1e-3
    rho: float = 0.05
    ns_iters: int = 5
    # 기본값, 시드 0 에서 spectral 비율은 약 1.41
    spectral_max_ratio: float = 1.5
    sam_min_ratio: float = 5.0
    nobias_tolerance: float = 1e-6

    def validate(self) -> None:
        _require(bool(self.alphas), "alphas must not be empty")
        for a in self.alphas:
            _positive("alpha", a)
        _require(1.0 in self.alphas, "alphas must contain 1.0")
        _require(self.train_steps >= 0, "train_steps must be >= 0")
        _positive("lr", self.lr)
        _positive("rho", self.rho)
        _require(self.ns_iters >= 1, "ns_iters must be >= 1")


@dataclass(frozen=True)
class Toy2DConfig:
    seeds: int = 100
    steps: int = 3000
    lr: float = 0.05
    rho: float = 0.05
    gamma: float = 2.0
    sigma_sgld: float = 0.01
    steppers: tuple[str, ...] = ("erm", "sam", "sgld", "sage_noise")
    start_x: float = -2.2
    start_y: float = 0.9
    start_radius: float = 0.25
    min_gain: float = 0.2
    plot: bool = True

    def validate(self) -> None:
        _require(self.seeds >= 1, "seeds must be >= 1")
        _require(self.steps >= 1, "steps must be >= 1")
        _positive("lr", self.lr)
        _positive("rho", self.rho)
        _non_negative("gamma", self.gamma)
        _non_negative("sigma_sgld", self.sigma_sgld)
        _non_negative("start_radius", self.start_radius)
        _require(bool(self.steppers), "steppers must not be empty")
        for s in self.steppers:
            _require(s in STEPPERS, f"unknown stepper: {s}")


@dataclass(frozen=True)
class TrainConfig:
    problem: str = "gaussian"
    stepper: str = "sage"
    steps: int = 2000
    lr: float = 0.01
    rho: float = 0.05
    gamma: float = 0.01
    ns_iters: int = 5
    rule: str = "spectral"
    base: str = "sgd"
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    sigma_sgld: float = 0.01
    m: float = 10.0
    mlp_bias: bool = True
    env_weights: tuple[float, ...] = ()
    resume: Optional[str] = None

    def validate(self) -> None:
        _require(self.problem in PROBLEMS, f"unknown problem: {self.problem}")
        _require(self.stepper in STEPPERS, f"unknown stepper: {self.stepper}")
        _require(self.rule in RULES, f"unknown rule: {self.rule}")
        _require(self.base in BASES, f"unknown base optimizer: {self.base}")
        _require(self.steps >= 0, "steps must be >= 0")
        _positive("lr", self.lr)
        _positive("rho", self.rho)
        _non_negative("gamma", self.gamma)
        _non_negative("sigma_sgld", self.sigma_sgld)
        _require(self.ns_iters >= 1, "ns_iters must be >= 1")
        _require(0 <= self.beta1 < 1 and 0 <= self.beta2 < 1, "adam betas must be in [0, 1)")
        _positive("adam_eps", self.adam_eps)
        _require(self.m > 1, f"m must be > 1, got {self.m}")
        for w in self.env_weights:
            _non_negative("env weight", w)
        if self.env_weights:
            _require(sum(self.env_weights) > 0, "env_weights must not all be zero")


SectionConfig = Union[
    DecompositionConfig,
    CounterexampleConfig,
    MotivatingConfig,
    ScaleInvarianceConfig,
    Toy2DConfig,
    TrainConfig,
]

SECTION_TYPES: dict[Subcommand, type] = {
    Subcommand.VERIFY_DECOMPOSITION: DecompositionConfig,
    Subcommand.COUNTEREXAMPLE: CounterexampleConfig,
    Subcommand.MOTIVATING: MotivatingConfig,
    Subcommand.SCALE_INVARIANCE: ScaleInvarianceConfig,
    Subcommand.TOY2D: Toy2DConfig,
    Subcommand.TRAIN: TrainConfig,
}


@dataclass(frozen=True)
class RunSection:
    seed: int = 0
    out: str = "out"

    def validate(self) -> None:
        _require(0 <= self.seed < 2**64, f"seed must be a 64-bit unsigned integer, got {self.seed}")
        _require(bool(self.out), "out must not be empty")


@dataclass(frozen=True)
class RunConfig:
    subcommand: Subcommand
    run: RunSection = field(default_factory=RunSection)
    section: Optional[SectionConfig] = None

    def __post_init__(self):
        if self.section is None:
            object.__setattr__(self, "section", SECTION_TYPES[self.subcommand]())

    @property
    def seed(self) -> int:
        return self.run.seed

    @property
    def out(self) -> str:
        return self.run.out
