"""Two-domain motivating example: every quantity recomputed from the domain environments."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from src.core.linalg.solve import pd_solve, trace_solve
from src.core.optim.perturbation import aggregate_loss
from src.core.problems.gaussian import GaussianDomainSpec, gaussian_domain_envs, gaussian_theta
from src.core.stats.agreement import env_stats


@dataclass(frozen=True)
class LedgerEntry:
    """One computed quantity, optionally with a reference value and tolerance."""

    name: str
    computed: tuple[float, ...]
    reference: Optional[tuple[float, ...]] = None
    tolerance: Optional[float] = None
    provenance: str = ""

    @property
    def passed(self) -> bool:
        if self.reference is None:
            return True
        diff = np.abs(np.subtract(self.computed, self.reference))
        return bool(np.all(diff <= self.tolerance))


@dataclass(frozen=True)
class MotivatingReport:
    entries: tuple[LedgerEntry, ...]

    def __getitem__(self, name: str) -> LedgerEntry:
        for e in self.entries:
            if e.name == name:
                return e
        raise KeyError(name)

    @property
    def passed(self) -> bool:
        return all(e.passed for e in self.entries)


def _flat(m: np.ndarray) -> tuple[float, ...]:
    return tuple(float(v) for v in np.asarray(m).ravel())


# 기본 도메인에 대해 발표된 값; 반올림된 최적점은 허용오차가 큼
PUBLISHED = {
    "h_bar": ((10.0, 0.0, 0.0, 4.01), 1e-12),
    "theta_star": ((0.1, 0.0), 1e-10),
    "grad_d1_origin": ((-1.0, -2.0), 1e-12),
    "grad_d2_origin": ((-1.0, 2.0), 1e-12),
    "optimum_d1": ((0.0003, 0.499), 5e-4),
    "optimum_d2": ((0.0003, -0.499), 5e-4),
    "sigma_g_star": ((0.0, 0.0, 0.0, 3.24), 1e-10),
    "tr_hinv_sigma": ((0.80798,), 1e-5),
}
CLOSED_FORM_RTOL = 1e-9


def closed_form_references(
    domain: GaussianDomainSpec, delta: float
) -> dict[str, tuple[tuple[float, ...], float]]:
    """Reference values written directly in terms of (mu_inv, var_inv, mu_spur, var_spur).

    H_bar = diag(m^2 + v, s^2 + w), theta* = (m / (m^2 + v), 0), the domain
    optima are (m w, +-v s) / det H_k, and at theta* the domain gradients are
    (0, +-s (m t - 1)), so Sigma_g = diag(0, s^2 (1 - m t)^2).
    """

    m, v, s, w = domain.mu_inv, domain.var_inv, domain.mu_spur, domain.var_spur
    h_inv, h_spur = m * m + v, s * s + w
    t = m / h_inv
    det = m * m * w + v * s * s + v * w
    spread = s * s * (1.0 - m * t) ** 2
    values = {
        "h_bar": (h_inv, 0.0, 0.0, h_spur),
        "theta_star": (t, 0.0),
        "grad_d1_origin": (-m, -s),
        "grad_d2_origin": (-m, s),
        "optimum_d1": (m * w / det, v * s / det),
        "optimum_d2": (m * w / det, -v * s / det),
        "sigma_g_star": (0.0, 0.0, 0.0, spread),
        "tr_hinv_sigma": (spread / h_spur,),
        "loss_increase_delta": (0.5 * h_inv * delta**2,),
    }
    return {
        name: (ref, CLOSED_FORM_RTOL * max(1.0, float(np.max(np.abs(ref)))))
        for name, ref in values.items()
    }


def reference_values(domain: GaussianDomainSpec, delta: float) -> tuple[dict, str]:
    """Published values for the default domain, closed forms for any other."""

    if domain == GaussianDomainSpec():
        refs = dict(PUBLISHED)
        refs["loss_increase_delta"] = ((5.0 * delta**2,), 1e-10)
        return refs, "published"
    return closed_form_references(domain, delta), "closed form"


def motivating_example_report(
    domain: GaussianDomainSpec | None = None, delta: float = 0.1
) -> MotivatingReport:
    domain = domain or GaussianDomainSpec()
    if domain.cubic != 0.0:
        raise ValueError("the motivating example needs the purely quadratic domain (cubic = 0)")
    envs = gaussian_domain_envs(domain)
    origin = gaussian_theta()
    refs, source = reference_values(domain, delta)

    at_origin = env_stats(envs, origin)
    h_bar = at_origin.h_bar
    # 집계 손실은 2차이므로 한 번의 Newton 스텝이 정확한 최소점
    theta_star = pd_solve(h_bar, -at_origin.g_bar)
    at_star = env_stats(envs, gaussian_theta(theta_star))

    optima = []
    for env, g0 in zip(envs, at_origin.env_grads):
        optima.append(pd_solve(env.hessian(origin), -g0))

    shift = theta_star + np.array([delta, 0.0])
    increase = aggregate_loss(envs, gaussian_theta(shift)) - aggregate_loss(
        envs, gaussian_theta(theta_star)
    )
    eig = np.linalg.eigvalsh(h_bar)

    def checked(name: str, computed: tuple[float, ...], provenance: str) -> LedgerEntry:
        ref, tol = refs[name]
        return LedgerEntry(name, computed, ref, tol, f"{provenance}; reference: {source}")

    entries = (
        checked("h_bar", _flat(h_bar), "mean of domain Hessians"),
        checked("theta_star", _flat(theta_star), "-H_bar^-1 g_bar(0)"),
        checked("grad_d1_origin", _flat(at_origin.env_grads[0]), "domain 1 gradient at 0"),
        checked("grad_d2_origin", _flat(at_origin.env_grads[1]), "domain 2 gradient at 0"),
        checked("optimum_d1", _flat(optima[0]), "-H_1^-1 g_1(0)"),
        checked("optimum_d2", _flat(optima[1]), "-H_2^-1 g_2(0)"),
        checked("sigma_g_star", _flat(at_star.sigma_g), "gradient covariance at theta_star"),
        checked("tr_hinv_sigma", (trace_solve(h_bar, at_star.sigma_g),), "tr(H_bar^-1 Sigma_g)"),
        checked("loss_increase_delta", (increase,), f"L(theta_star + {delta!r} e_inv) - L(theta_star)"),
        LedgerEntry("agreement_star", (at_star.agreement,), None, None, "gradient agreement at theta_star"),
        LedgerEntry("snr_spurious", (domain.snr_spurious(),), None, None, "mu_spur^2 / var_spur"),
        LedgerEntry("snr_invariant", (domain.snr_invariant(),), None, None, "mu_inv^2 / var_inv"),
        LedgerEntry("curvature_ratio", (float(eig[-1] / eig[0]),), None, None, "sharp / flat eigenvalue of H_bar"),
    )
    return MotivatingReport(entries)
