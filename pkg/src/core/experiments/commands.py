"""Subcommands: run a driver, write CSV/SVG/snapshot outputs, write the run manifest."""

from __future__ import annotations

import asyncio
from dataclasses import dataclass
from pathlib import Path
from typing import Awaitable, Callable

from tqdm import tqdm

from src.core.experiments.drivers import (
    TRACED_SEEDS,
    decomposition_grid,
    run_toy_batch,
    run_training,
    scale_gate,
    scale_invariance_sweep,
    summarize_toy,
    toy_gate,
)
from src.core.experiments.plots import scale_invariance_svg, trajectories_svg
from src.core.experiments.runner import ExperimentRunner
from src.core.optim.base import state_from_snapshot, state_to_snapshot
from src.core.problems.gaussian import GaussianDomainSpec
from src.core.problems.quadratic import flat_misaligned_family
from src.core.problems.toy2d import toy2d_landscape
from src.core.theorylab.counterexample import VARIANTS, build_counterexample, decoupling_check
from src.core.theorylab.decomposition import remainder_spot_check
from src.core.theorylab.motivating import motivating_example_report
from src.lib.config import RunConfig, Subcommand
from src.lib.logger import setup_logger
from src.lib.records import read_snapshot, write_bytes, write_csv, write_run_files, write_snapshot
from src.lib.rng import Rng
from src.lib.types import RunRecord

LOGGER = setup_logger("sage_opt.commands")

EXIT_OK = 0
EXIT_GATE = 1
EXIT_USAGE = 2


@dataclass(frozen=True)
class CommandResult:
    exit_code: int
    files: tuple[Path, ...]

    @property
    def passed(self) -> bool:
        return self.exit_code == EXIT_OK


async def _finish(cfg: RunConfig, out: Path, files: list[Path], passed: bool) -> CommandResult:
    manifest = await write_run_files(out, cfg, files)
    return CommandResult(EXIT_OK if passed else EXIT_GATE, (*files, manifest))


def _out_dir(cfg: RunConfig) -> Path:
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


async def cmd_verify_decomposition(cfg: RunConfig, runner: ExperimentRunner) -> CommandResult:
    section = cfg.section
    out = _out_dir(cfg)

    cells = len(section.k_values) * len(section.sigmas)
    pbar = tqdm(total=cells, desc="Decomposition", unit="cell")
    try:
        # 청크는 runner 의 풀에서 돌기 때문에 격자 순회는 별도 스레드에서
        reports = await asyncio.to_thread(
            decomposition_grid,
            section,
            cfg.seed,
            runner.executor,
            runner.cancel_event,
            lambda _r: pbar.update(1),
        )
    finally:
        pbar.close()

    for r in reports:
        LOGGER.info(
            "K=%d sigma=%r closed=%.6g mc=%.6g se=%.3g -> %s",
            r.K,
            r.sigma,
            r.closed_form,
            r.mc_excess_mean,
            r.mc_excess_se,
            "pass" if r.passed else "FAIL",
        )
    files = [
        await write_csv(
            out / "decomposition.csv",
            ["K", "sigma", "alignment_term", "curvature_term", "mc_mean", "mc_se", "trials", "pass"],
            [
                [r.K, r.sigma, r.alignment_term, r.curvature_term, r.mc_excess_mean, r.mc_excess_se, r.trials, r.passed]
                for r in reports
            ],
        )
    ]

    if section.remainder_check:
        rows = await asyncio.to_thread(remainder_spot_check)
        for row in rows:
            LOGGER.info(
                "remainder K=%d gap=%.3g decay=%s (informational)",
                row.K,
                row.gap,
                "-" if row.decay_ratio is None else f"{row.decay_ratio:.3g}",
            )
        files.append(
            await write_csv(
                out / "remainder.csv",
                ["K", "expected_excess", "alignment_term", "gap", "decay_ratio"],
                [
                    [r.K, r.expected_excess, r.alignment_term, r.gap, "" if r.decay_ratio is None else r.decay_ratio]
                    for r in rows
                ],
            )
        )

    return await _finish(cfg, out, files, all(r.passed for r in reports))


async def cmd_counterexample(cfg: RunConfig, runner: ExperimentRunner) -> CommandResult:
    section = cfg.section
    out = _out_dir(cfg)

    instances = [build_counterexample(m, v) for m in section.m_values for v in VARIANTS]
    for inst in instances:
        LOGGER.info(
            "M=%r %s: tr_H=%.6g tr_HinvSigma=%.6g -> %s",
            inst.M,
            inst.variant,
            inst.tr_h,
            inst.tr_hinv_sigma,
            "pass" if inst.bound_check else "FAIL",
        )
    decoupling = await runner.run(
        decoupling_check, flat_misaligned_family(section.m_values[0]), Rng(cfg.seed)
    )
    LOGGER.info("decoupling check -> %s", "pass" if decoupling.passed else "FAIL")

    files = [
        await write_csv(
            out / "counterexample.csv",
            ["M", "variant", "tr_H", "tr_HinvSigma", "bound_check"],
            [[i.M, i.variant, i.tr_h, i.tr_hinv_sigma, i.bound_check] for i in instances],
        ),
        await write_csv(
            out / "decoupling.csv",
            ["check", "passed"],
            [
                ["h_bar_fixed_under_b_swaps", decoupling.h_bar_fixed_under_b_swaps],
                ["sigma_fixed_under_a_swaps", decoupling.sigma_fixed_under_a_swaps],
                ["joint_swaps_as_predicted", decoupling.joint_swaps_as_predicted],
            ],
        ),
    ]
    passed = all(i.bound_check for i in instances) and decoupling.passed
    return await _finish(cfg, out, files, passed)


async def cmd_motivating(cfg: RunConfig, runner: ExperimentRunner) -> CommandResult:
    section = cfg.section
    out = _out_dir(cfg)
    domain = GaussianDomainSpec(section.mu_inv, section.var_inv, section.mu_spur, section.var_spur)
    report = motivating_example_report(domain, section.delta)

    rows = []
    for e in report.entries:
        for i, value in enumerate(e.computed):
            ref = "" if e.reference is None else e.reference[i]
            tol = "" if e.tolerance is None else e.tolerance
            rows.append([e.name, i, value, ref, tol, e.passed, e.provenance])
        LOGGER.info("%s = %s%s", e.name, e.computed, "" if e.passed else "  <- FAIL")
    files = [
        await write_csv(
            out / "motivating.csv",
            ["quantity", "component", "computed", "reference", "tolerance", "pass", "provenance"],
            rows,
        )
    ]
    return await _finish(cfg, out, files, report.passed)


async def cmd_scale_invariance(cfg: RunConfig, runner: ExperimentRunner) -> CommandResult:
    section = cfg.section
    out = _out_dir(cfg)

    pbar = tqdm(total=2, desc="Scale sweep", unit="model")
    try:
        with_bias, no_bias = await runner.map(
            lambda bias: scale_invariance_sweep(section, cfg.seed, bias, runner.cancel_event),
            [True, False],
            on_done=lambda: pbar.update(1),
        )
    finally:
        pbar.close()

    gate = scale_gate(with_bias, no_bias, section)
    LOGGER.info(
        "spectral max/min=%.4g (<= %r), sam max/min=%.4g (>= %r), no-bias spread=%.3g (<= %r) -> %s",
        gate.spectral_ratio,
        section.spectral_max_ratio,
        gate.sam_ratio,
        section.sam_min_ratio,
        gate.nobias_spread,
        section.nobias_tolerance,
        "pass" if gate.passed else "FAIL",
    )

    header = ["alpha", "sharpness_sam", "sharpness_adaptive", "sharpness_spectral", "true_flag"]

    def _rows(rows):
        return [
            [r.alpha, r.sharpness_sam, r.sharpness_adaptive, r.sharpness_spectral, r.true_flag]
            for r in rows
        ]

    svg = await asyncio.to_thread(scale_invariance_svg, with_bias, no_bias)
    files = [
        await write_csv(out / "scale_invariance.csv", header, _rows(with_bias)),
        await write_csv(out / "scale_invariance_nobias.csv", header, _rows(no_bias)),
        await write_bytes(out / "scale_invariance.svg", svg),
    ]
    return await _finish(cfg, out, files, gate.passed)


async def cmd_toy2d(cfg: RunConfig, runner: ExperimentRunner) -> CommandResult:
    section = cfg.section
    out = _out_dir(cfg)
    landscape = toy2d_landscape()

    # 스텝 규칙마다 모든 시드를 한 배열로 묶어 진행
    seeds = range(section.seeds)
    pbar = tqdm(total=len(section.steppers), desc="Toy ensemble", unit="stepper")
    try:
        batches = await runner.map(
            lambda name: run_toy_batch(
                landscape, section, name, seeds, cfg.seed, cancel_event=runner.cancel_event
            ),
            section.steppers,
            on_done=lambda: pbar.update(1),
        )
    finally:
        pbar.close()
    runs = [run for batch in batches for run in batch]

    summaries = summarize_toy(runs, section.steppers)
    for s in summaries:
        LOGGER.info("%s: %d/%d runs reached B (%.2f)", s.stepper, s.reached_b, s.runs, s.fraction_b)
    passed = toy_gate(summaries, section.min_gain)

    traced = [r for r in runs if r.seed < TRACED_SEEDS]
    files = [
        await write_csv(
            out / "toy2d_runs.csv",
            ["stepper", "seed", "start_x", "start_y", "final_x", "final_y", "basin"],
            [[r.stepper, r.seed, *r.start, *r.final, r.basin] for r in runs],
        ),
        await write_csv(
            out / "toy2d_summary.csv",
            ["stepper", "runs", "reached_b", "fraction_b"],
            [[s.stepper, s.runs, s.reached_b, s.fraction_b] for s in summaries],
        ),
        await write_csv(
            out / "toy2d_trajectories.csv",
            ["stepper", "seed", "point", "x", "y"],
            [[r.stepper, r.seed, i, x, y] for r in traced for i, (x, y) in enumerate(r.path)],
        ),
    ]
    if section.plot:
        svg = await asyncio.to_thread(trajectories_svg, landscape, traced)
        files.append(await write_bytes(out / "trajectories.svg", svg))
    return await _finish(cfg, out, files, passed)


async def cmd_train(cfg: RunConfig, runner: ExperimentRunner) -> CommandResult:
    section = cfg.section
    out = _out_dir(cfg)

    state = None
    if section.resume:
        state = state_from_snapshot(await read_snapshot(Path(section.resume)))
        LOGGER.info("Resuming from %s at step %d", section.resume, state.step)

    total = max(0, section.steps - (state.step if state else 0))
    pbar = tqdm(total=total, desc=f"Train {section.stepper}", unit="step")
    try:
        state, reports, env_ids = await asyncio.to_thread(
            run_training,
            section,
            cfg.seed,
            state,
            runner.executor,
            runner.cancel_event,
            lambda _s, _r: pbar.update(1),
        )
    finally:
        pbar.close()

    if reports:
        last = reports[-1]
        LOGGER.info(
            "Finished at step %d: aggregate loss %.6g, S=%.4f", state.step, last.aggregate_loss, last.agreement
        )
    files = [
        await write_csv(
            out / "train.csv",
            RunRecord.header(env_ids),
            [RunRecord.from_report(r, env_ids).as_row() for r in reports],
        ),
        await write_snapshot(out / "params.bin", state_to_snapshot(state)),
    ]
    return await _finish(cfg, out, files, True)


COMMANDS: dict[Subcommand, Callable[[RunConfig, ExperimentRunner], Awaitable[CommandResult]]] = {
    Subcommand.VERIFY_DECOMPOSITION: cmd_verify_decomposition,
    Subcommand.COUNTEREXAMPLE: cmd_counterexample,
    Subcommand.MOTIVATING: cmd_motivating,
    Subcommand.SCALE_INVARIANCE: cmd_scale_invariance,
    Subcommand.TOY2D: cmd_toy2d,
    Subcommand.TRAIN: cmd_train,
}


async def run_command(cfg: RunConfig, runner: ExperimentRunner) -> CommandResult:
    return await COMMANDS[cfg.subcommand](cfg, runner)
