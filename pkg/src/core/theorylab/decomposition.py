"""Excess-risk decomposition: closed-form terms and Monte Carlo estimates.

On the quadratic family the excess risk of the empirical minimizer over K
sampled environments, plus isotropic parameter noise of scale sigma, has
expectation tr(A^-1 Sigma_g) / 2K + sigma^2 tr(A) / 2 with no remainder.
"""

from __future__ import annotations

import math
import threading
from concurrent.futures import Executor
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from numpy.typing import ArrayLike

from src.core.linalg.solve import SymPD, is_psd, pd_solve, trace_solve
from src.core.problems.gaussian import GaussianDomainSpec, gaussian_domain_envs, gaussian_theta
from src.core.problems.quadratic import QuadraticFamily, quadratic_envs
from src.core.stats.agreement import env_stats
from src.lib.errors import OperationCancelled
from src.lib.logger import setup_logger
from src.lib.rng import Purpose, Rng

LOGGER = setup_logger("sage_opt.theorylab")

DEFAULT_CHUNK = 8192
GATE_SIGMAS = 3.0
GATE_ABS = 1e-12
SGD_MAX_ITERS = 10_000
SGD_TOL = 1e-13


def _as_sympd(h: SymPD | ArrayLike) -> SymPD:
    return h if isinstance(h, SymPD) else SymPD.from_matrix(h)


def alignment_term(h: SymPD | ArrayLike, sigma: ArrayLike, k: int) -> float:
    """tr(H^-1 Sigma_g) / 2K."""

    if k < 1:
        raise ValueError(f"K must be >= 1, got {k}")
    h = _as_sympd(h)
    sigma = np.asarray(sigma, dtype=np.float64)
    if sigma.shape != h.matrix.shape:
        raise ValueError(f"Sigma shape {sigma.shape} does not match H {h.matrix.shape}")
    if not is_psd(sigma):
        raise ValueError("Sigma must be symmetric PSD")
    return trace_solve(h, sigma) / (2.0 * k)


def curvature_term(h: SymPD | ArrayLike, sigma: float) -> float:
    """sigma^2 tr(H) / 2."""

    if sigma < 0:
        raise ValueError(f"sigma must be >= 0, got {sigma}")
    m = h.matrix if isinstance(h, SymPD) else np.asarray(h, dtype=np.float64)
    return sigma**2 * float(np.trace(m)) / 2.0


@dataclass(frozen=True)
class DecompositionReport:
    K: int
    sigma: float
    alignment_term: float
    curvature_term: float
    mc_excess_mean: float
    mc_excess_se: float
    trials: int

    @property
    def closed_form(self) -> float:
        return self.alignment_term + self.curvature_term

    @property
    def deviation(self) -> float:
        return abs(self.mc_excess_mean - self.closed_form)

    @property
    def passed(self) -> bool:
        """|mean - closed form| <= 3 SE (+ a rounding allowance for zero-variance cells)."""
        allowance = GATE_ABS * max(1.0, abs(self.closed_form))
        return self.deviation <= GATE_SIGMAS * self.mc_excess_se + allowance


def _sqrt_psd(sigma: np.ndarray) -> np.ndarray:
    w, v = np.linalg.eigh(sigma)
    return v * np.sqrt(np.clip(w, 0.0, None))


def _theta_hat_sgd(a: np.ndarray, g_hat: np.ndarray) -> np.ndarray:
    # 모든 시행을 한꺼번에 경사하강: theta <- theta - lr (A theta + g)
    lr = 1.0 / float(np.linalg.eigvalsh(a).max())
    theta = np.zeros_like(g_hat)
    for _ in range(SGD_MAX_ITERS):
        grad = theta @ a + g_hat
        if np.abs(grad).max() <= SGD_TOL * max(1.0, float(np.abs(g_hat).max())):
            break
        theta = theta - lr * grad
    return theta


def _chunk_excess(
    fam: QuadraticFamily,
    k: int,
    sigma: float,
    n: int,
    rng: Rng,
    meta: str,
    estimator: str,
    sqrt_sigma_g: np.ndarray,
) -> np.ndarray:
    gen = rng.stream(Purpose.TRIAL)
    d = fam.dim
    if meta == "uniform":
        idx = gen.integers(0, fam.n, size=(n, k))
        g_hat = fam.b_set[idx].mean(axis=1)
    else:
        z = gen.standard_normal((n, k, d))
        g_hat = (z @ sqrt_sigma_g.T).mean(axis=1)

    if estimator == "closed_form":
        theta_hat = -pd_solve(fam.a, g_hat.T).T
    else:
        theta_hat = _theta_hat_sgd(np.asarray(fam.a.matrix), g_hat)

    xi = sigma * gen.standard_normal((n, d))
    # R(theta*) = 0 (theta* = 0)
    return fam.risk(theta_hat + xi)


def mc_excess_risk(
    fam: QuadraticFamily,
    k: int,
    sigma: float,
    trials: int,
    rng: Rng,
    meta: str = "uniform",
    estimator: str = "closed_form",
    chunk_size: int = DEFAULT_CHUNK,
    executor: Optional[Executor] = None,
    cancel_event: threading.Event | None = None,
) -> DecompositionReport:
    """Monte Carlo excess risk of theta_hat + xi against both closed-form terms.

    Trials are split into fixed-size chunks; chunk c draws from the stream of
    trial index c, and chunks are reduced in index order, so the result does
    not depend on how many workers ran them.
    """

    if trials < 100:
        raise ValueError(f"trials must be >= 100, got {trials}")
    if meta not in ("uniform", "gaussian"):
        raise ValueError(f"unknown meta distribution: {meta}")
    if estimator not in ("closed_form", "sgd"):
        raise ValueError(f"unknown estimator: {estimator}")

    stats = env_stats(quadratic_envs(fam), fam.theta_star()) if fam.n >= 2 else None
    sigma_g = stats.sigma_g if stats else np.zeros((fam.dim, fam.dim))
    h_bar = stats.h_bar if stats else np.asarray(fam.a.matrix)
    sqrt_sigma_g = _sqrt_psd(sigma_g)

    sizes = [min(chunk_size, trials - start) for start in range(0, trials, chunk_size)]

    def _run(c: int) -> np.ndarray:
        if cancel_event is not None and cancel_event.is_set():
            raise OperationCancelled(f"Monte Carlo cancelled at chunk {c}")
        return _chunk_excess(
            fam, k, sigma, sizes[c], rng.for_trial(c), meta, estimator, sqrt_sigma_g
        )

    if executor is None:
        chunks = [_run(c) for c in range(len(sizes))]
    else:
        chunks = list(executor.map(_run, range(len(sizes))))
    excess = np.concatenate(chunks)

    mean = float(np.mean(excess))
    se = float(np.std(excess, ddof=1) / math.sqrt(excess.size))
    report = DecompositionReport(
        K=k,
        sigma=sigma,
        alignment_term=alignment_term(h_bar, sigma_g, k),
        curvature_term=curvature_term(h_bar, sigma),
        mc_excess_mean=mean,
        mc_excess_se=se,
        trials=trials,
    )
    LOGGER.debug(
        "decomposition cell",
        extra={"K": k, "sigma": sigma, "mean": mean, "se": se, "closed": report.closed_form},
    )
    return report


# --- 3차 섭동 문제에서의 나머지 항 점검 (게이트 아님) -------------------------------


@dataclass(frozen=True)
class RemainderRow:
    K: int
    expected_excess: float
    alignment_term: float
    gap: float
    decay_ratio: Optional[float]


def _minimize(domain: GaussianDomainSpec, weight1: float, start: np.ndarray) -> np.ndarray:
    """Newton's method on weight1 L_1 + (1 - weight1) L_2."""

    b = weight1 * domain.b(0) + (1.0 - weight1) * domain.b(1)
    h = weight1 * domain.hessian(0) + (1.0 - weight1) * domain.hessian(1)
    x = np.array(start, dtype=np.float64)
    for _ in range(100):
        g = h @ x - b
        g[0] += 3.0 * domain.cubic * x[0] ** 2
        if np.abs(g).max() <= 1e-15:
            break
        hx = h.copy()
        hx[0, 0] += 6.0 * domain.cubic * x[0]
        x = x - np.linalg.solve(hx, g)
    return x


def _population_risk(domain: GaussianDomainSpec, x: np.ndarray) -> float:
    h = 0.5 * (domain.hessian(0) + domain.hessian(1))
    b = 0.5 * (domain.b(0) + domain.b(1))
    return float(0.5 - b @ x + 0.5 * x @ h @ x + domain.cubic * x[0] ** 3)


def remainder_spot_check(
    cubic: float = 0.01, ks: Sequence[int] = (4, 16, 64)
) -> list[RemainderRow]:
    """|E[excess] - alignment term| on the two-domain task plus cubic * theta_inv^3.

    The expectation over which domain each of the K draws comes from is taken
    exactly by summing over the binomial count of domain-1 draws.
    """

    domain = GaussianDomainSpec(cubic=cubic)
    start = np.linalg.solve(0.5 * (domain.hessian(0) + domain.hessian(1)), 0.5 * (domain.b(0) + domain.b(1)))
    theta_star = _minimize(domain, 0.5, start)
    stats = env_stats(gaussian_domain_envs(domain), gaussian_theta(theta_star))
    r_star = _population_risk(domain, theta_star)

    rows: list[RemainderRow] = []
    for k in ks:
        expected = 0.0
        for j in range(k + 1):
            p = math.comb(k, j) / 2.0**k
            theta_hat = _minimize(domain, j / k, theta_star)
            expected += p * (_population_risk(domain, theta_hat) - r_star)
        align = alignment_term(stats.h_bar, stats.sigma_g, k)
        gap = abs(expected - align)
        ratio = rows[-1].gap / gap if rows and gap > 0 else None
        rows.append(RemainderRow(k, expected, align, gap, ratio))
    return rows
