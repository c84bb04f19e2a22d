import threading

import numpy as np
import pytest

from src.core.experiments.drivers import (
    ToySummary,
    decomposition_grid,
    max_min_ratio,
    relative_spread,
    run_toy,
    run_toy_batch,
    run_training,
    scale_gate,
    scale_invariance_sweep,
    summarize_toy,
    toy_gate,
)
from src.core.problems.toy2d import toy2d_landscape
from src.lib.config import DecompositionConfig, ScaleInvarianceConfig, Toy2DConfig, TrainConfig
from src.lib.errors import OperationCancelled


@pytest.fixture(scope="module")
def land():
    return toy2d_landscape()


# --- 장난감 지형 ---------------------------------------------------------------------


def test_every_stepper_reaches_b_from_inside_its_basin(land):
    cfg = Toy2DConfig(steps=400)
    for name in ("erm", "sam", "sgld", "sage_noise"):
        run = run_toy(land, cfg, name, 0, 1, start=(1.2, 0.4))
        assert run.basin == "B"
        assert run.start == (1.2, 0.4)


def test_gradient_descent_from_the_start_region_stays_in_a(land):
    cfg = Toy2DConfig(steps=500)
    run = run_toy(land, cfg, "erm", 0, 0)
    assert run.basin == "A"
    assert np.linalg.norm(np.array(run.final) - land.minimum_a) < 1e-3


def test_sage_noise_without_gamma_is_plain_descent(land):
    cfg = Toy2DConfig(steps=300, gamma=0.0)
    for seed in range(3):
        erm = run_toy(land, cfg, "erm", seed, 0)
        noiseless = run_toy(land, cfg, "sage_noise", seed, 0)
        assert erm.final == noiseless.final
        assert np.array_equal(erm.path, noiseless.path)


def test_steppers_share_start_points(land):
    cfg = Toy2DConfig(steps=10)
    starts = {run_toy(land, cfg, name, 4, 99).start for name in ("erm", "sgld", "sage_noise")}
    assert len(starts) == 1
    (start,) = starts
    assert np.hypot(start[0] - cfg.start_x, start[1] - cfg.start_y) <= cfg.start_radius


def test_toy_paths_are_traced_every_ten_steps(land):
    run = run_toy(land, Toy2DConfig(steps=100), "erm", 0, 0)
    assert run.path.shape == (11, 2)
    assert tuple(run.path[0]) == run.start


def test_toy_ensemble_gate(land):
    cfg = Toy2DConfig(seeds=10, steps=2000)
    runs = [
        run for name in cfg.steppers for run in run_toy_batch(land, cfg, name, range(cfg.seeds), 2024)
    ]
    summaries = summarize_toy(runs, cfg.steppers)
    by_name = {s.stepper: s for s in summaries}
    assert by_name["erm"].fraction_b == 0.0
    assert toy_gate(summaries, cfg.min_gain)


@pytest.mark.parametrize("name", ["erm", "sam", "sgld", "sage", "sage_noise"])
def test_toy_batch_follows_single_runs(land, name):
    """배열 묶음 실행이 시드별 단일 실행과 같은 궤적을 따름"""
    cfg = Toy2DConfig(steps=60)
    seeds = [0, 1, 2, 7]
    batch = run_toy_batch(land, cfg, name, seeds, 5)
    assert [r.seed for r in batch] == seeds
    for run in batch:
        single = run_toy(land, cfg, name, run.seed, 5)
        assert run.stepper == name
        assert run.start == single.start
        assert run.basin == single.basin
        assert run.path.shape == single.path.shape == (7, 2)
        np.testing.assert_allclose(run.final, single.final, rtol=0, atol=1e-9)
        np.testing.assert_allclose(run.path, single.path, rtol=0, atol=1e-9)


def test_toy_batch_rejects_unknown_stepper_and_honours_cancel(land):
    with pytest.raises(ValueError):
        run_toy_batch(land, Toy2DConfig(steps=5), "adamw", [0], 0)
    cancel = threading.Event()
    cancel.set()
    with pytest.raises(OperationCancelled):
        run_toy_batch(land, Toy2DConfig(steps=5), "erm", [0, 1], 0, cancel_event=cancel)


def test_toy_gate_arithmetic():
    summaries = [ToySummary("erm", 10, 1), ToySummary("sam", 10, 0), ToySummary("sage_noise", 10, 4)]
    assert toy_gate(summaries, 0.2)
    assert not toy_gate(summaries, 0.35)
    assert toy_gate([ToySummary("erm", 10, 0)], 0.2)


# --- 재매개변수화 스윕 ---------------------------------------------------------------


def test_ratio_helpers():
    assert max_min_ratio([1.0, 2.0, 4.0]) == 4.0
    assert max_min_ratio([1.0, -1.0]) == float("inf")
    assert relative_spread([1.0, 1.5], 2.0) == 0.25
    assert relative_spread([1.0], 0.0) == float("inf")


@pytest.mark.parametrize("seed", [0, 1, 2, 3])
def test_spectral_sharpness_is_exactly_invariant_without_bias(seed):
    rows = scale_invariance_sweep(ScaleInvarianceConfig(train_steps=200), seed, with_bias=False)
    assert [r.alpha for r in rows] == list(ScaleInvarianceConfig().alphas)
    reference = next(r.sharpness_spectral for r in rows if r.alpha == 1.0)
    assert relative_spread([r.sharpness_spectral for r in rows], reference) <= 1e-6
    assert all(r.true_flag for r in rows)


@pytest.mark.parametrize("seed", [1, 2, 3])
def test_sam_sharpness_breaks_under_rescaling_for_any_seed(seed):
    """편향이 있는 MLP 에서 SAM 샤프니스는 시드와 상관없이 α 에 크게 흔들림"""
    cfg = ScaleInvarianceConfig(train_steps=200)
    rows = scale_invariance_sweep(cfg, seed, with_bias=True)
    assert max_min_ratio(r.sharpness_sam for r in rows) >= cfg.sam_min_ratio
    assert np.isfinite([r.sharpness_spectral for r in rows]).all()


def test_scale_invariance_gate_at_defaults():
    cfg = ScaleInvarianceConfig()
    with_bias = scale_invariance_sweep(cfg, 0, with_bias=True)
    no_bias = scale_invariance_sweep(cfg, 0, with_bias=False)
    alpha_one = next(r for r in with_bias if r.alpha == 1.0)
    assert np.isfinite([alpha_one.sharpness_sam, alpha_one.sharpness_adaptive, alpha_one.sharpness_spectral]).all()
    gate = scale_gate(with_bias, no_bias, cfg)
    assert gate.passed, gate


# --- 분해 격자 / 학습 ----------------------------------------------------------------


def test_decomposition_grid_order_and_callback():
    cfg = DecompositionConfig(k_values=(1, 2), sigmas=(0.0, 0.3), trials=400, family="zero_covariance")
    seen = []
    reports = decomposition_grid(cfg, 0, on_cell=seen.append)
    assert [(r.K, r.sigma) for r in reports] == [(1, 0.0), (1, 0.3), (2, 0.0), (2, 0.3)]
    assert seen == reports
    assert reports[0].mc_excess_mean == 0.0


def test_sage_training_on_two_domain_task_converges_near_theta_star():
    state, reports, env_ids = run_training(TrainConfig(), 0)
    assert env_ids == ("d1", "d2")
    assert state.step == 2000
    assert len(reports) == 2000
    assert [r.step for r in reports] == list(range(2000))
    assert np.linalg.norm(state.params.flatten() - [0.1, 0.0]) <= 0.05


@pytest.mark.parametrize("problem", ["quadratic", "mlp", "toy2d"])
def test_training_runs_on_every_problem(problem):
    state, reports, env_ids = run_training(TrainConfig(problem=problem, steps=5, gamma=0.0), 1)
    assert state.step == 5
    assert len(env_ids) == 2
    assert all(r.grad_rounds == 2 for r in reports)


def test_training_rejects_mismatched_weights():
    with pytest.raises(ValueError):
        run_training(TrainConfig(steps=1, env_weights=(1.0, 2.0, 3.0)), 0)
