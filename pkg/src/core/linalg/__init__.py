from .finite_diff import finite_diff_gradient, finite_diff_hessian
from .polar import (
    frobenius_norm,
    jacobi_svd,
    newton_schulz_polar,
    newton_schulz_tensor,
    svd_polar_oracle,
)
from .solve import SymPD, is_psd, pd_solve, trace_solve

__all__ = [
    "SymPD",
    "finite_diff_gradient",
    "finite_diff_hessian",
    "frobenius_norm",
    "is_psd",
    "jacobi_svd",
    "newton_schulz_polar",
    "newton_schulz_tensor",
    "pd_solve",
    "svd_polar_oracle",
    "trace_solve",
]
