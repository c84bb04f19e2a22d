import argparse
import asyncio
import sys
from pathlib import Path
from typing import Optional

from src.core.experiments.commands import EXIT_GATE, EXIT_OK, EXIT_USAGE, run_command
from src.core.experiments.runner import ExperimentRunner
from src.lib.config import Subcommand
from src.lib.errors import ConfigError, OperationCancelled
from src.lib.logger import setup_logger
from src.lib.parser import load_config

LOGGER = setup_logger("sage_opt")


def _u64(raw: str) -> int:
    try:
        value = int(raw, 0)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {raw!r}") from None
    if not 0 <= value < 2**64:
        raise argparse.ArgumentTypeError(f"seed must fit in 64 unsigned bits: {raw}")
    return value


async def main(
    subcommand: Subcommand | str,
    config: Optional[str | Path] = None,
    out: Optional[str | Path] = None,
    seed: Optional[int] = None,
    workers: Optional[int] = None,
) -> int:
    """Run one subcommand and return its exit code (0 pass, 1 gate failure, 2 usage error)."""

    # 1. 설정 로드 (CLI 인자가 [run] 섹션보다 우선)
    try:
        cfg = await load_config(config, subcommand, seed=seed, out=out)
    except ConfigError as e:
        LOGGER.error("Config error: %s", e)
        return EXIT_USAGE

    LOGGER.info("Subcommand: %s (seed=%d) -> %s", cfg.subcommand.value, cfg.seed, cfg.out)

    # 2. 실행
    try:
        async with ExperimentRunner(max_workers=workers) as runner:
            LOGGER.info("Threads: %d", runner.max_workers)
            result = await run_command(cfg, runner)
    except ConfigError as e:
        LOGGER.error("Config error: %s", e)
        return EXIT_USAGE
    except OperationCancelled:
        LOGGER.warning("Cancelled before completion; outputs are incomplete")
        return EXIT_GATE
    except Exception:
        LOGGER.exception("Subcommand %s failed", cfg.subcommand.value)
        return EXIT_GATE

    # 3. 결과 보고
    for path in result.files:
        LOGGER.info("Wrote %s", path)
    if result.exit_code == EXIT_OK:
        LOGGER.info("%s: all checks passed", cfg.subcommand.value)
    else:
        LOGGER.error("%s: gate failed", cfg.subcommand.value)
    return result.exit_code


def _build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="sage-opt",
        description="Excess-risk decomposition checks and the SAGE optimizer experiments",
    )
    sub = p.add_subparsers(dest="subcommand", required=True, metavar="<subcommand>")
    for name in Subcommand:
        sp = sub.add_parser(name.value, help=f"run the {name.value} experiment")
        sp.add_argument("--config", "-c", help="Config file (key = value sections)")
        sp.add_argument("--out", "-o", help="Output directory (overrides [run] out)")
        sp.add_argument("--seed", "-s", type=_u64, help="64-bit seed (overrides [run] seed)")
        sp.add_argument("--workers", "-w", type=int, help="Thread pool size (default: $SAGE_OPT_THREADS or 1)")
    return p


def _cli(argv: Optional[list[str]] = None) -> int:
    p = _build_parser()
    try:
        args = p.parse_args(argv)
    except SystemExit as e:
        # argparse 는 사용법 오류에 2를 사용
        return EXIT_USAGE if e.code else EXIT_OK

    try:
        return asyncio.run(main(args.subcommand, args.config, args.out, args.seed, args.workers))
    except KeyboardInterrupt:
        LOGGER.warning("Interrupted by user. Stopping...")
        return EXIT_GATE


if __name__ == "__main__":
    sys.exit(_cli())
