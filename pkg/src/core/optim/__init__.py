from .base import Adam, OptimState, Sgd, make_base, state_from_snapshot, state_to_snapshot
from .perturbation import (
    Perturbation,
    PerturbationRule,
    RuleKind,
    adaptive_perturbation,
    aggregate_grad,
    aggregate_loss,
    sam_perturbation,
    measure_sharpness,
    spectral_perturbation,
)
from .steppers import (
    GradientOracle,
    SageConfig,
    Stepper,
    make_stepper,
    run_trajectory,
    sage_step,
    sam_step,
    sgd_step,
    sgld_step,
)

__all__ = [
    "Adam",
    "GradientOracle",
    "OptimState",
    "Perturbation",
    "PerturbationRule",
    "RuleKind",
    "SageConfig",
    "Sgd",
    "Stepper",
    "adaptive_perturbation",
    "aggregate_grad",
    "aggregate_loss",
    "make_base",
    "make_stepper",
    "run_trajectory",
    "sage_step",
    "sam_perturbation",
    "sam_step",
    "sgd_step",
    "sgld_step",
    "measure_sharpness",
    "spectral_perturbation",
    "state_from_snapshot",
    "state_to_snapshot",
]
