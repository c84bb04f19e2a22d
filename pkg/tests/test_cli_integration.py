import time
from pathlib import Path

import pytest

from src.lib.records import decode_snapshot
from src.main import _cli, main
from tests.conftest import read_csv_minimal


def _rows(path: Path) -> list[dict[str, str]]:
    header, *rows = read_csv_minimal(path.read_text(encoding="utf-8"))
    return [dict(zip(header, r)) for r in rows]


def _config(tmp_path: Path, text: str) -> Path:
    path = tmp_path / "run.ini"
    path.write_text(text, encoding="utf-8")
    return path


@pytest.mark.asyncio
async def test_motivating_writes_ledger(tmp_path: Path):
    out = tmp_path / "out"
    assert await main("motivating", out=out) == 0

    rows = _rows(out / "motivating.csv")
    theta = [r for r in rows if r["quantity"] == "theta_star"]
    assert [float(r["computed"]) for r in theta] == pytest.approx([0.1, 0.0], abs=1e-10)
    assert all(r["pass"] == "1" for r in rows)
    assert (out / "resolved_config.ini").exists()
    assert "file.motivating.csv=" in (out / "manifest.txt").read_text()


@pytest.mark.asyncio
async def test_motivating_with_configured_domain_passes(tmp_path: Path):
    """기본값이 아닌 [motivating] 설정도 닫힌 형식 기준값으로 통과"""
    cfg = _config(tmp_path, "[motivating]\nvar_inv = 4\nmu_spur = 1.5\n")
    out = tmp_path / "out"
    assert await main("motivating", config=cfg, out=out) == 0

    rows = _rows(out / "motivating.csv")
    h_bar = [float(r["reference"]) for r in rows if r["quantity"] == "h_bar"]
    assert h_bar == pytest.approx([5.0, 0.0, 0.0, 2.26])
    assert all(r["pass"] == "1" for r in rows)
    assert any("closed form" in r["provenance"] for r in rows)


@pytest.mark.asyncio
async def test_counterexample_rows(tmp_path: Path):
    cfg = _config(tmp_path, "[counterexample]\nm_values = 2, 10\n")
    out = tmp_path / "out"
    assert await main("counterexample", config=cfg, out=out) == 0

    rows = _rows(out / "counterexample.csv")
    assert [(r["M"], r["variant"]) for r in rows] == [
        ("2.0", "flat_misaligned"),
        ("2.0", "aligned_sharp"),
        ("10.0", "flat_misaligned"),
        ("10.0", "aligned_sharp"),
    ]
    flat10 = rows[2]
    assert float(flat10["tr_H"]) == pytest.approx(0.1, rel=1e-10)
    assert float(flat10["tr_HinvSigma"]) == pytest.approx(20.0, rel=1e-10)
    assert all(r["passed"] == "1" for r in _rows(out / "decoupling.csv"))


@pytest.mark.asyncio
async def test_verify_decomposition_small_grid(tmp_path: Path):
    cfg = _config(
        tmp_path,
        "[verify-decomposition]\nk_values = 1\nsigmas = 0.0\ntrials = 1000\nchunk_size = 300\n",
    )
    out = tmp_path / "out"
    assert await main("verify-decomposition", config=cfg, out=out, workers=2) == 0

    (row,) = _rows(out / "decomposition.csv")
    assert row["K"] == "1"
    assert row["trials"] == "1000"
    assert float(row["alignment_term"]) == pytest.approx(10.0)
    assert row["pass"] == "1"
    assert len(_rows(out / "remainder.csv")) == 3


@pytest.mark.asyncio
async def test_toy2d_gate_failure_exits_one(tmp_path: Path):
    # gamma=0 이면 sage_noise 가 erm 과 같으므로 개선 폭 0.2 를 만족할 수 없음
    cfg = _config(tmp_path, "[toy2d]\nseeds = 2\nsteps = 30\ngamma = 0\nsteppers = erm, sage_noise\n")
    out = tmp_path / "out"
    assert await main("toy2d", config=cfg, out=out) == 1

    runs = _rows(out / "toy2d_runs.csv")
    assert len(runs) == 4
    summary = _rows(out / "toy2d_summary.csv")
    assert [s["stepper"] for s in summary] == ["erm", "sage_noise"]
    assert summary[0]["fraction_b"] == summary[1]["fraction_b"]
    assert (out / "toy2d_trajectories.csv").exists()
    assert (out / "trajectories.svg").read_bytes().lstrip().startswith(b"<?xml")


@pytest.mark.asyncio
async def test_toy2d_defaults_finish_within_a_minute(tmp_path: Path):
    """기본 설정(100 시드 x 3000 스텝 x 4 규칙)이 60초 안에 끝나고 검사 통과"""
    out = tmp_path / "out"
    t0 = time.perf_counter()
    code = await main("toy2d", out=out)
    elapsed = time.perf_counter() - t0

    assert code == 0
    assert elapsed < 60.0
    summary = {s["stepper"]: float(s["fraction_b"]) for s in _rows(out / "toy2d_summary.csv")}
    assert summary["erm"] == 0.0
    assert summary["sage_noise"] >= max(summary["erm"], summary["sam"], summary["sgld"]) + 0.2
    assert len(_rows(out / "toy2d_runs.csv")) == 400


@pytest.mark.asyncio
async def test_scale_invariance_writes_tables_and_plot(tmp_path: Path):
    cfg = _config(tmp_path, "[scale-invariance]\nalphas = 0.5, 1, 2\ntrain_steps = 20\n")
    out = tmp_path / "out"
    assert await main("scale-invariance", config=cfg, out=out) in (0, 1)

    for name in ("scale_invariance.csv", "scale_invariance_nobias.csv"):
        rows = _rows(out / name)
        assert [float(r["alpha"]) for r in rows] == [0.5, 1.0, 2.0]
    assert (out / "scale_invariance.svg").exists()


@pytest.mark.asyncio
async def test_train_is_reproducible_and_resumable(tmp_path: Path):
    text = "[train]\nstepper = sage\nsteps = {steps}\ngamma = 0.2\n{extra}"
    full = tmp_path / "full"
    again = tmp_path / "again"
    cfg_full = _config(tmp_path, text.format(steps=50, extra=""))
    assert await main("train", config=cfg_full, out=full, seed=3) == 0
    assert await main("train", config=cfg_full, out=again, seed=3) == 0
    for name in ("train.csv", "params.bin"):
        assert (full / name).read_bytes() == (again / name).read_bytes()

    # 20 스텝에서 멈췄다가 스냅샷으로 이어서 50 스텝까지
    first = tmp_path / "first"
    second = tmp_path / "second"
    cfg_first = _config(tmp_path, text.format(steps=20, extra=""))
    assert await main("train", config=cfg_first, out=first, seed=3) == 0
    cfg_resume = _config(tmp_path, text.format(steps=50, extra=f"resume = {first / 'params.bin'}\n"))
    assert await main("train", config=cfg_resume, out=second, seed=3) == 0

    assert (second / "params.bin").read_bytes() == (full / "params.bin").read_bytes()
    resumed_rows = _rows(second / "train.csv")
    assert [r["step"] for r in resumed_rows] == [str(s) for s in range(20, 50)]
    assert resumed_rows == _rows(full / "train.csv")[20:]
    assert decode_snapshot((full / "params.bin").read_bytes()).names[0] == "theta"


@pytest.mark.asyncio
async def test_config_errors_exit_two(tmp_path: Path):
    cfg = _config(tmp_path, "[verify-decomposition]\ntrials = 1\n")
    assert await main("verify-decomposition", config=cfg, out=tmp_path / "o") == 2
    assert await main("motivating", config=tmp_path / "missing.ini", out=tmp_path / "o") == 2


def test_cli_usage_errors_exit_two(tmp_path: Path):
    assert _cli(["frobnicate"]) == 2
    assert _cli(["motivating", "--seed", "-1"]) == 2
    assert _cli(["motivating", "--seed", "18446744073709551616"]) == 2


def test_cli_runs_a_subcommand(tmp_path: Path):
    assert _cli(["counterexample", "--out", str(tmp_path / "cli"), "--seed", "0x10"]) == 0
    assert "seed=16" in (tmp_path / "cli" / "manifest.txt").read_text()
