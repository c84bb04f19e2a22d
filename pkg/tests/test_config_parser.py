from pathlib import Path

import pytest

from src.lib.config import (
    DecompositionConfig,
    RunConfig,
    Subcommand,
    Toy2DConfig,
    TrainConfig,
)
from src.lib.errors import ConfigError
from src.lib.parser import load_config, parse_config_text, render_config


@pytest.mark.parametrize("sub", list(Subcommand))
def test_empty_config_gives_defaults(sub):
    cfg = parse_config_text("", sub)
    assert cfg == RunConfig(sub)
    assert cfg.seed == 0
    assert cfg.out == "out"


@pytest.mark.parametrize("sub", list(Subcommand))
def test_resolved_config_round_trips(sub):
    """렌더링한 설정을 다시 파싱하면 같은 객체"""
    cfg = parse_config_text("[run]\nseed = 18446744073709551615\nout = results/x\n", sub)
    again = parse_config_text(render_config(cfg), sub)
    assert again == cfg


def test_values_are_typed():
    text = """
[run]
seed = 7

[train]
problem = mlp
stepper = sage_noise
steps = 15
lr = 0.5
mlp_bias = no
env_weights = 1, 3
resume = out/params.bin

[toy2d]
steppers = erm, sage_noise
plot = false
"""
    cfg = parse_config_text(text, "train")
    assert cfg.subcommand is Subcommand.TRAIN
    assert cfg.section == TrainConfig(
        problem="mlp",
        stepper="sage_noise",
        steps=15,
        lr=0.5,
        mlp_bias=False,
        env_weights=(1.0, 3.0),
        resume="out/params.bin",
    )
    # 다른 서브커맨드 섹션도 검증은 하지만 결과에는 들어가지 않음
    toy = parse_config_text(text, "toy2d").section
    assert toy == Toy2DConfig(steppers=("erm", "sage_noise"), plot=False)


def test_round_trip_keeps_custom_values():
    cfg = parse_config_text(
        "[verify-decomposition]\nk_values = 3, 4\nsigmas = 0.25\ntrials = 1000\nmeta = gaussian\n",
        "verify-decomposition",
    )
    assert cfg.section == DecompositionConfig(k_values=(3, 4), sigmas=(0.25,), trials=1000, meta="gaussian")
    assert parse_config_text(render_config(cfg), "verify-decomposition") == cfg


def test_cli_overrides_win():
    cfg = parse_config_text("[run]\nseed = 1\nout = a\n", "motivating", seed=5, out=Path("b"))
    assert (cfg.seed, cfg.out) == (5, "b")


@pytest.mark.parametrize(
    "text",
    [
        "[run]\ncolour = blue\n",
        "[bogus]\nx = 1\n",
        "seed = 3\n",
        "[verify-decomposition]\ntrials = 1\n",
        "[verify-decomposition]\ntrials = many\n",
        "[verify-decomposition]\nsigmas = 0.1, , 0.2\n",
        "[verify-decomposition]\nfamily = wobbly\n",
        "[scale-invariance]\nalphas = 0.5, 2\n",
        "[train]\nlr = nan\n",
        "[train]\nstepper = adagrad\n",
        "[toy2d]\nplot = maybe\n",
        "[run]\nseed = -1\n",
        "[run]\nseed = 18446744073709551616\n",
        "[run]\nseed = 1\n[run]\nseed = 2\n",
        # 다른 서브커맨드 섹션의 오류도 거부
        "[counterexample]\nm_values = 1.0\n",
    ],
)
def test_invalid_configs_are_rejected(text):
    with pytest.raises(ConfigError):
        parse_config_text(text, "verify-decomposition")


@pytest.mark.asyncio
async def test_load_config_from_file(tmp_path: Path):
    path = tmp_path / "run.ini"
    path.write_text("[run]\nseed = 42\n\n[counterexample]\nm_values = 2, 10\n", encoding="utf-8")
    cfg = await load_config(path, "counterexample")
    assert cfg.seed == 42
    assert cfg.section.m_values == (2.0, 10.0)


@pytest.mark.asyncio
async def test_load_config_missing_file(tmp_path: Path):
    with pytest.raises(ConfigError):
        await load_config(tmp_path / "missing.ini", "motivating")


@pytest.mark.asyncio
async def test_load_config_without_file_uses_defaults():
    cfg = await load_config(None, "toy2d", seed=3)
    assert cfg.section == Toy2DConfig()
    assert cfg.seed == 3
