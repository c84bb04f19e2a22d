"""Flatness and gradient alignment are independent: explicit quadratic constructions."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from src.core.linalg.solve import trace_solve
from src.core.problems.quadratic import QuadraticFamily, named_family, quadratic_envs
from src.core.stats.agreement import env_stats, gradient_covariance
from src.lib.rng import Purpose, Rng

VARIANTS = ("flat_misaligned", "aligned_sharp")
BOUND_RTOL = 1e-12


def _le(a: float, b: float) -> bool:
    return a <= b * (1.0 + BOUND_RTOL)


def _ge(a: float, b: float) -> bool:
    return a >= b * (1.0 - BOUND_RTOL)


@dataclass(frozen=True)
class CounterexampleInstance:
    variant: str
    M: float
    family: QuadraticFamily
    tr_h: float
    tr_hinv_sigma: float

    @property
    def bound_check(self) -> bool:
        """(i): tr H <= 1/M and tr(H^-1 Sigma) >= M; (ii): the two bounds swapped."""
        if self.variant == "flat_misaligned":
            return _le(self.tr_h, 1.0 / self.M) and _ge(self.tr_hinv_sigma, self.M)
        return _le(self.tr_hinv_sigma, 1.0 / self.M) and _ge(self.tr_h, self.M)


def build_counterexample(m: float, variant: str) -> CounterexampleInstance:
    if not m > 1:
        raise ValueError(f"M must be > 1, got {m}")
    if variant not in VARIANTS:
        raise ValueError(f"unknown variant: {variant}")
    fam = named_family(variant, m)
    # 하드코딩하지 않고 env_stats 로 다시 계산
    stats = env_stats(quadratic_envs(fam), fam.theta_star())
    return CounterexampleInstance(
        variant=variant,
        M=m,
        family=fam,
        tr_h=float(np.trace(stats.h_bar)),
        tr_hinv_sigma=trace_solve(stats.h_bar, stats.sigma_g),
    )


@dataclass(frozen=True)
class DecouplingReport:
    h_bar_fixed_under_b_swaps: bool
    sigma_fixed_under_a_swaps: bool
    joint_swaps_as_predicted: bool
    replacements: int

    @property
    def passed(self) -> bool:
        return (
            self.h_bar_fixed_under_b_swaps
            and self.sigma_fixed_under_a_swaps
            and self.joint_swaps_as_predicted
        )


def _random_pd(gen: np.random.Generator, d: int) -> np.ndarray:
    m = gen.standard_normal((d, d))
    a = m.T @ m + np.eye(d)
    return 0.5 * (a + a.T)


def _random_b_set(gen: np.random.Generator, d: int) -> np.ndarray:
    v = gen.standard_normal(d)
    return np.stack([v, -v])


def decoupling_check(
    fam: QuadraticFamily, rng: Rng | None = None, replacements: int = 5
) -> DecouplingReport:
    """Swap b_set and A independently and watch H_bar and Sigma_g at theta = 0.

    H_bar must stay equal to A bit for bit when only b_set changes; Sigma_g
    must stay bit-identical when only A changes; swapping both must give the
    new A and the covariance of the new b_set.
    """

    gen = (rng or Rng(0)).stream(Purpose.FAMILY)
    d = fam.dim
    theta = fam.theta_star()
    base = env_stats(quadratic_envs(fam), theta)
    a = np.asarray(fam.a.matrix)

    h_ok = sigma_ok = joint_ok = True
    for _ in range(replacements):
        b_new = _random_b_set(gen, d)
        a_new = _random_pd(gen, d)

        s = env_stats(quadratic_envs(fam.with_b_set(b_new)), theta)
        h_ok &= bool(np.array_equal(s.h_bar, a))

        s = env_stats(quadratic_envs(fam.with_a(a_new)), theta)
        sigma_ok &= bool(np.array_equal(s.sigma_g, base.sigma_g))

        both = QuadraticFamily.build(a_new, b_new)
        s = env_stats(quadratic_envs(both), theta)
        joint_ok &= bool(
            np.array_equal(s.h_bar, np.asarray(both.a.matrix))
            and np.array_equal(s.sigma_g, gradient_covariance(both.b_set))
        )
    return DecouplingReport(h_ok, sigma_ok, joint_ok, replacements)
