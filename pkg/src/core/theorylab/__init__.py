from .counterexample import (
    CounterexampleInstance,
    DecouplingReport,
    build_counterexample,
    decoupling_check,
)
from .decomposition import (
    DecompositionReport,
    RemainderRow,
    alignment_term,
    curvature_term,
    mc_excess_risk,
    remainder_spot_check,
)
from .motivating import (
    LedgerEntry,
    MotivatingReport,
    closed_form_references,
    motivating_example_report,
)

__all__ = [
    "CounterexampleInstance",
    "DecompositionReport",
    "DecouplingReport",
    "LedgerEntry",
    "MotivatingReport",
    "RemainderRow",
    "alignment_term",
    "build_counterexample",
    "closed_form_references",
    "curvature_term",
    "decoupling_check",
    "mc_excess_risk",
    "motivating_example_report",
    "remainder_spot_check",
]
