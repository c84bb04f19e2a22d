import hashlib
import struct
from pathlib import Path

import numpy as np
import pytest

from src.lib.config import RunConfig, Subcommand
from src.lib.errors import SnapshotFormatError
from src.lib.parser import parse_config_text
from src.lib.records import (
    SNAPSHOT_MAGIC,
    decode_snapshot,
    encode_snapshot,
    read_snapshot,
    render_csv,
    write_csv,
    write_run_files,
    write_snapshot,
)
from src.lib.types import ParamSet, RunRecord, StepReport
from tests.conftest import read_csv_minimal


def test_render_csv_cells():
    text = render_csv(["name", "x", "flag", "n"], [['a,"b"', 0.1, True, np.int64(3)], ["c", 1e-20, False, 0]])
    assert "\r" not in text
    assert text.endswith("\n")
    rows = read_csv_minimal(text)
    assert rows == [
        ["name", "x", "flag", "n"],
        ['a,"b"', "0.1", "1", "3"],
        ["c", "1e-20", "0", "0"],
    ]


def test_render_csv_checks_row_width():
    with pytest.raises(ValueError):
        render_csv(["a", "b"], [[1]])


@pytest.mark.asyncio
async def test_write_csv_uses_lf(tmp_path: Path):
    path = await write_csv(tmp_path / "sub" / "t.csv", ["a"], [[1], [2]])
    assert path.read_bytes() == b"a\n1\n2\n"


def test_run_record_rows():
    report = StepReport(3, (0.5, 0.25), 0.375, -0.5, 0.3, 0.05, 2)
    record = RunRecord.from_report(report, ("d1", "d2"))
    header = RunRecord.header(("d1", "d2"))
    assert header == ["step", "loss_d1", "loss_d2", "aggregate_loss", "agreement", "beta", "eps_norm"]
    assert record.as_row() == [3, 0.5, 0.25, 0.375, -0.5, 0.3, 0.05]


# --- 스냅샷 -----------------------------------------------------------------------


def _params() -> ParamSet:
    return ParamSet.from_arrays(
        {"W1": np.arange(6.0).reshape(3, 2), "b1": [0.5, -0.5, 1e-300], "T": np.ones((2, 1, 2))}
    )


def test_snapshot_layout():
    data = encode_snapshot(ParamSet.vector([1.5], "x"))
    expected = (
        SNAPSHOT_MAGIC
        + struct.pack("<I", 1)
        + struct.pack("<H", 1)
        + b"x"
        + struct.pack("<BI", 0, 1)
        + struct.pack("<I", 1)
        + struct.pack("<d", 1.5)
    )
    assert data == expected


def test_snapshot_round_trip():
    params = _params()
    decoded = decode_snapshot(encode_snapshot(params))
    assert decoded.names == params.names
    for a, b in zip(decoded, params):
        assert a.shape == b.shape
        assert a.kind == b.kind
        assert np.array_equal(a.values, b.values)


@pytest.mark.parametrize(
    "mutate",
    [
        lambda d: b"NOTSAGE\n" + d[8:],
        lambda d: d[:-3],
        lambda d: d + b"\x00",
        lambda d: d[:12],
    ],
)
def test_snapshot_rejects_corruption(mutate):
    with pytest.raises(SnapshotFormatError):
        decode_snapshot(mutate(encode_snapshot(_params())))


def test_snapshot_rejects_kind_mismatch():
    data = bytearray(encode_snapshot(ParamSet.vector([1.0, 2.0], "x")))
    # kind 바이트: magic(8) + count(4) + name_len(2) + name(1)
    data[15] = 1
    with pytest.raises(SnapshotFormatError):
        decode_snapshot(bytes(data))


@pytest.mark.asyncio
async def test_snapshot_file_round_trip(tmp_path: Path):
    path = await write_snapshot(tmp_path / "params.bin", _params())
    loaded = await read_snapshot(path)
    assert np.array_equal(loaded.flatten(), _params().flatten())


# --- 실행 기록 ---------------------------------------------------------------------


@pytest.mark.asyncio
async def test_run_files_hash_every_output(tmp_path: Path):
    cfg = parse_config_text("[run]\nseed = 9\n", "counterexample", out=tmp_path)
    out = await write_csv(tmp_path / "counterexample.csv", ["a"], [[1]])
    manifest = await write_run_files(tmp_path, cfg, [out])

    resolved = (tmp_path / "resolved_config.ini").read_text(encoding="utf-8")
    assert parse_config_text(resolved, "counterexample") == cfg

    entries = dict(line.split("=", 1) for line in manifest.read_text().splitlines())
    assert entries["subcommand"] == "counterexample"
    assert entries["seed"] == "9"
    assert entries["config_sha256"] == hashlib.sha256(resolved.encode()).hexdigest()
    assert entries["file.counterexample.csv"] == hashlib.sha256(out.read_bytes()).hexdigest()


def test_default_run_config_for_every_subcommand():
    for sub in Subcommand:
        assert RunConfig(sub).section is not None
