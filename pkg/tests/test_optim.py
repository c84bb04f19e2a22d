import threading

import numpy as np
import pytest

from src.core.optim import (
    Adam,
    GradientOracle,
    PerturbationRule,
    RuleKind,
    SageConfig,
    adaptive_perturbation,
    make_stepper,
    run_trajectory,
    sage_step,
    sam_perturbation,
    measure_sharpness,
    spectral_perturbation,
    state_from_snapshot,
    state_to_snapshot,
)
from src.core.optim.base import Sgd
from src.core.problems.gaussian import gaussian_domain_envs, gaussian_theta
from src.core.problems.quadratic import QuadraticFamily, flat_misaligned_family, quadratic_envs
from src.lib.errors import NonFiniteLoss, OperationCancelled, ZeroGradient
from src.lib.records import decode_snapshot, encode_snapshot
from src.lib.rng import Purpose, Rng
from src.lib.types import Environment, ParamSet


def _rotation(angle: float) -> np.ndarray:
    return np.array([[np.cos(angle), -np.sin(angle)], [np.sin(angle), np.cos(angle)]])


def _bowl(diag=(1.0, 1.0)) -> list[Environment]:
    """Two identical environments 1/2 theta^T diag theta."""
    return quadratic_envs(QuadraticFamily.build(np.diag(diag), np.zeros((2, 2))))


def _trajectory(name: str, steps: int, seed: int = 7, **kwargs):
    stepper = make_stepper(name, **kwargs)
    oracle = GradientOracle(gaussian_domain_envs())
    state, reports = run_trajectory(
        stepper, stepper.init(gaussian_theta((0.5, 0.5))), oracle, Rng(seed), steps
    )
    return state, reports, oracle


# --- 섭동 규칙 ------------------------------------------------------------------


def test_sam_perturbation_examples():
    eps = sam_perturbation(ParamSet.vector([3.0, 4.0]), 1.0)
    assert np.allclose(eps.flatten(), [0.6, 0.8], atol=1e-15)

    g = ParamSet.from_arrays({"W": [[1.0, -2.0], [0.5, 3.0]], "b": [0.1, 0.2]})
    eps = sam_perturbation(g, 0.05)
    assert eps.norm() == pytest.approx(0.05, abs=1e-12)
    assert np.allclose(sam_perturbation(g * 10.0, 0.05).flatten(), eps.flatten(), rtol=1e-15, atol=0)

    with pytest.raises(ZeroGradient):
        sam_perturbation(g.zeros_like(), 0.05)


def test_spectral_perturbation_on_identity_and_rotation():
    r = _rotation(0.3)
    theta = ParamSet.from_arrays({"W": np.eye(2), "b": [1.0, 1.0]})
    g = ParamSet.from_arrays({"W": r, "b": [3.0, 4.0]})

    pert = spectral_perturbation(theta, g, 0.1)
    assert not pert.zero
    assert np.allclose(pert.eps["W"], 0.1 * np.sqrt(2.0) * r, atol=1e-10)
    assert np.allclose(pert.eps["b"], [0.06, 0.08], atol=1e-15)


def test_spectral_perturbation_scaling_is_exact(gen):
    w = gen.standard_normal((4, 3))
    gw = gen.standard_normal((4, 3))
    base = spectral_perturbation(ParamSet.vector(w, "W"), ParamSet.vector(gw, "W"), 0.1).eps["W"]

    # 기울기 크기만 바뀌면 결과는 비트 단위로 같음
    scaled = spectral_perturbation(ParamSet.vector(w, "W"), ParamSet.vector(4.0 * gw, "W"), 0.1)
    assert np.array_equal(scaled.eps["W"], base)

    # W -> 2W, G -> G/2 이면 eps -> 2 eps
    reparam = spectral_perturbation(ParamSet.vector(2.0 * w, "W"), ParamSet.vector(gw / 2.0, "W"), 0.1)
    assert np.array_equal(reparam.eps["W"], 2.0 * base)


def test_spectral_perturbation_zero_tensors():
    theta = ParamSet.from_arrays({"W": np.eye(2), "b": [1.0, 1.0]})
    partial = spectral_perturbation(
        theta, ParamSet.from_arrays({"W": np.zeros((2, 2)), "b": [0.0, 2.0]}), 0.1
    )
    assert not partial.zero
    assert np.array_equal(partial.eps["W"], np.zeros((2, 2)))
    assert np.allclose(partial.eps["b"], [0.0, 0.1])

    flagged = spectral_perturbation(theta, theta.zeros_like(), 0.1)
    assert flagged.zero
    assert flagged.norm == 0.0


def test_adaptive_perturbation_matches_formula():
    theta = ParamSet.vector([2.0, -0.5])
    g = ParamSet.vector([1.0, 1.0])
    t = np.abs(theta.flatten()) + 0.01
    expected = 0.1 * t * t * g.flatten() / np.linalg.norm(t * g.flatten())
    assert np.allclose(adaptive_perturbation(theta, g, 0.1).flatten(), expected, atol=1e-15)


def test_perturbation_rule_validation():
    with pytest.raises(ValueError):
        PerturbationRule(RuleKind.SAM_L2, 0.0)
    with pytest.raises(ValueError):
        PerturbationRule(RuleKind.SPECTRAL, 0.1, ns_iters=0)
    with pytest.raises(ValueError):
        PerturbationRule("sideways", 0.1)
    assert PerturbationRule("spectral", 0.1).kind is RuleKind.SPECTRAL


# --- 날카로움 측정 ---------------------------------------------------------------


def test_measure_sharpness_on_quadratic():
    # 상승 방향 eps = +rho g/|g| = (0.1, 0): 1/2 * 2 * (1.1^2 - 1^2) = 0.21
    envs = _bowl((2.0, 1.0))
    value = measure_sharpness(ParamSet.vector([1.0, 0.0]), PerturbationRule(RuleKind.SAM_L2, 0.1), envs)
    assert value == pytest.approx(0.21, abs=1e-12)


def test_measure_sharpness_at_minimum_raises():
    with pytest.raises(ZeroGradient):
        measure_sharpness(ParamSet.vector([0.0, 0.0]), PerturbationRule(RuleKind.SAM_L2, 0.1), _bowl())


def test_measure_sharpness_accepts_fallback_gradient():
    rule = PerturbationRule(RuleKind.SAM_L2, 0.1)
    value = measure_sharpness(
        ParamSet.vector([0.0, 0.0]), rule, _bowl((2.0, 1.0)), grad=ParamSet.vector([1.0, 0.0])
    )
    assert value == pytest.approx(0.01, abs=1e-15)


# --- 스텝 규칙 -------------------------------------------------------------------


def test_sgd_step_closed_form():
    stepper = make_stepper("erm", lr=0.5)
    oracle = GradientOracle(_bowl())
    state, report = stepper.step(stepper.init(ParamSet.vector([1.0, 0.0])), oracle, Rng(0))
    assert state.params.flatten().tolist() == [0.5, 0.0]
    assert state.step == 1
    assert report.grad_rounds == 1
    assert report.beta == 0.0


def test_sgld_without_noise_equals_sgd():
    sgd, _, _ = _trajectory("erm", 30, lr=0.01)
    sgld, _, _ = _trajectory("sgld", 30, lr=0.01, sigma_sgld=0.0)
    assert np.array_equal(sgd.params.flatten(), sgld.params.flatten())

    noisy, _, _ = _trajectory("sgld", 30, lr=0.01, sigma_sgld=0.1)
    assert not np.array_equal(sgd.params.flatten(), noisy.params.flatten())


def test_sam_approaches_sgd_as_rho_shrinks():
    theta = gaussian_theta((0.5, 0.5))
    sgd = make_stepper("erm", lr=0.01)
    reference, _ = sgd.step(sgd.init(theta), GradientOracle(gaussian_domain_envs()), Rng(0))

    diffs = []
    for rho in (1e-2, 1e-3, 1e-4):
        sam = make_stepper("sam", lr=0.01, rho=rho)
        state, _ = sam.step(sam.init(theta), GradientOracle(gaussian_domain_envs()), Rng(0))
        diff = np.linalg.norm(state.params.flatten() - reference.params.flatten())
        assert diff <= 1.0 * rho
        diffs.append(diff)
    assert diffs[0] > diffs[1] > diffs[2]


def test_sage_without_noise_and_l2_rule_is_sam():
    sam, sam_reports, _ = _trajectory("sam", 50, lr=0.01, rho=0.05)
    sage, sage_reports, _ = _trajectory("sage", 50, lr=0.01, rho=0.05, gamma=0.0, rule="sam_l2")
    assert np.array_equal(sam.params.flatten(), sage.params.flatten())
    assert [r.eps_norm for r in sam_reports] == [r.eps_norm for r in sage_reports]


@pytest.mark.parametrize(("name", "rounds"), [("sage", 2), ("sam", 2), ("sage_noise", 1), ("erm", 1)])
def test_evaluation_rounds_per_step(name, rounds):
    _, reports, oracle = _trajectory(name, 12, lr=0.01, gamma=0.1)
    assert oracle.rounds == rounds * 12
    assert all(r.grad_rounds == rounds for r in reports)


def test_duplicate_environments_give_zero_beta():
    d1 = gaussian_domain_envs()[0]
    stepper = make_stepper("sage", lr=0.01, gamma=0.7)
    oracle = GradientOracle([d1, d1])
    _, reports = run_trajectory(stepper, stepper.init(gaussian_theta((0.5, 0.5))), oracle, Rng(1), 25)
    assert all(r.beta == 0.0 for r in reports)
    assert all(r.agreement == 1.0 for r in reports)


def test_sage_noise_is_scaled_by_disagreement():
    envs = gaussian_domain_envs()
    theta = gaussian_theta((0.1, 0.0))
    cfg = SageConfig(None, gamma=0.5, base=Sgd(0.01))
    state, report = sage_step(Sgd(0.01).init(theta), GradientOracle(envs), cfg, Rng(3))

    # theta* 에서 두 도메인 기울기는 정반대: S = -1, beta = 2 gamma
    assert report.agreement == -1.0
    assert report.beta == 1.0
    xi = Rng(3).stream(Purpose.NOISE, 0).standard_normal(2)
    # 평균 기울기가 0 이므로 갱신은 잡음뿐
    assert np.allclose(state.params.flatten(), theta.flatten() - 0.01 * xi, atol=1e-14)


def _linear_env(env_id: str, g) -> Environment:
    g = np.asarray(g, dtype=np.float64)
    return Environment(env_id, lambda th: float(g @ th.flatten()), lambda th: th.unflatten(g))


def test_sage_noise_is_isotropic_and_grows_with_one_minus_agreement():
    """부분 일치(S = 1/sqrt2)에서 beta = gamma (1 - S), 잡음은 좌표마다 같은 beta 로 곱해진 N(0, I)"""
    envs = [_linear_env("e1", (1.0, 0.0)), _linear_env("e2", (1.0, 1.0))]
    theta = ParamSet.vector([0.3, -0.2])
    gamma, lr = 0.5, 0.01
    cfg = SageConfig(None, gamma=gamma, base=Sgd(lr))
    state, report = sage_step(Sgd(lr).init(theta), GradientOracle(envs), cfg, Rng(11))

    s = 1.0 / np.sqrt(2.0)
    assert report.agreement == pytest.approx(s, abs=1e-15)
    assert report.beta == pytest.approx(gamma * (1.0 - s), abs=1e-15)

    xi = Rng(11).stream(Purpose.NOISE, 0).standard_normal(2)
    g_mean = np.array([1.0, 0.5])
    noise = (theta.flatten() - state.params.flatten()) / lr - g_mean
    np.testing.assert_allclose(noise, report.beta * xi, rtol=0, atol=1e-12)


def test_noise_is_zero_mean():
    beta, d, n = 0.3, 2, 10_000
    rng = Rng(42)
    draws = np.stack([beta * rng.stream(Purpose.NOISE, step).standard_normal(d) for step in range(n)])
    assert np.linalg.norm(draws.mean(axis=0)) <= 4.0 * beta * np.sqrt(d / n)


def test_zero_aggregate_gradient_skips_the_ascent():
    fam = flat_misaligned_family(10.0)
    stepper = make_stepper("sam", lr=0.1, rho=0.05)
    oracle = GradientOracle(quadratic_envs(fam))
    state, report = stepper.step(stepper.init(fam.theta_star()), oracle, Rng(0))
    assert report.zero_perturbation
    assert report.eps_norm == 0.0
    assert report.grad_rounds == 2
    assert np.array_equal(state.params.flatten(), np.zeros(2))


def test_steppers_are_deterministic():
    a, ra, _ = _trajectory("sage", 40, seed=9, lr=0.01, gamma=0.3)
    b, rb, _ = _trajectory("sage", 40, seed=9, lr=0.01, gamma=0.3)
    c, _, _ = _trajectory("sage", 40, seed=10, lr=0.01, gamma=0.3)
    assert np.array_equal(a.params.flatten(), b.params.flatten())
    assert ra == rb
    assert not np.array_equal(a.params.flatten(), c.params.flatten())


def test_non_finite_loss_aborts_the_step():
    bad = Environment("bad", lambda t: float("nan"), lambda t: t.zeros_like())
    stepper = make_stepper("sage", lr=0.1, gamma=0.1)
    state = stepper.init(ParamSet.vector([1.0, 2.0]))
    with pytest.raises(NonFiniteLoss):
        stepper.step(state, GradientOracle([gaussian_domain_envs()[0], bad]), Rng(0))
    assert state.params.flatten().tolist() == [1.0, 2.0]
    assert state.step == 0


def test_run_trajectory_honours_cancellation():
    event = threading.Event()
    event.set()
    stepper = make_stepper("erm", lr=0.1)
    with pytest.raises(OperationCancelled):
        run_trajectory(stepper, stepper.init(gaussian_theta()), GradientOracle(gaussian_domain_envs()), Rng(0), 5, event)


def test_make_stepper_rejects_unknown_names():
    with pytest.raises(ValueError):
        make_stepper("momentum", lr=0.1)
    with pytest.raises(ValueError):
        make_stepper("erm", lr=0.1, base="rmsprop")


# --- 기본 옵티마이저와 스냅샷 ----------------------------------------------------------


def test_adam_first_step_is_sign_like():
    opt = Adam(lr=0.1)
    state = opt.apply(opt.init(ParamSet.vector([1.0, 1.0])), ParamSet.vector([2.0, -0.5]))
    assert np.allclose(state.params.flatten(), [0.9, 1.1], atol=1e-7)
    assert state.step == 1
    assert set(state.slots) == {"m", "v"}


def test_snapshot_round_trip_keeps_optimizer_slots():
    opt = Adam(lr=0.1)
    params = ParamSet.from_arrays({"W": np.eye(2), "b": [0.0, 1.0]})
    grad = ParamSet.from_arrays({"W": np.ones((2, 2)), "b": [1.0, -1.0]})
    state = opt.apply(opt.init(params), grad)
    restored = state_from_snapshot(decode_snapshot(encode_snapshot(state_to_snapshot(state))))
    assert restored.step == 1
    assert restored.params.names == ("W", "b")
    for slot in ("m", "v"):
        assert np.array_equal(restored.slots[slot].flatten(), state.slots[slot].flatten())


@pytest.mark.parametrize("base", ["sgd", "adam"])
def test_resume_equals_uninterrupted_run(base):
    stepper = make_stepper("sage", lr=0.01, gamma=0.4, base=base)
    envs = gaussian_domain_envs()
    theta = gaussian_theta((0.5, 0.5))

    full, full_reports = run_trajectory(stepper, stepper.init(theta), GradientOracle(envs), Rng(5), 10)

    first, first_reports = run_trajectory(stepper, stepper.init(theta), GradientOracle(envs), Rng(5), 4)
    restored = state_from_snapshot(decode_snapshot(encode_snapshot(state_to_snapshot(first))))
    second, second_reports = run_trajectory(stepper, restored, GradientOracle(envs), Rng(5), 6)

    assert np.array_equal(second.params.flatten(), full.params.flatten())
    assert first_reports + second_reports == full_reports
