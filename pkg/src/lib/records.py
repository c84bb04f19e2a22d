"""Result files: CSV tables, run manifests and parameter snapshots."""

from __future__ import annotations

import csv
import hashlib
import io
import struct
from pathlib import Path
from typing import Iterable, Sequence

import aiofiles
import numpy as np

from src.lib import __version__
from src.lib.config import RunConfig
from src.lib.errors import SnapshotFormatError
from src.lib.logger import setup_logger
from src.lib.parser import render_config
from src.lib.types import NamedTensor, ParamSet, TensorKind

LOGGER = setup_logger("sage_opt.records")

CSV_SCHEMA_VERSION = 1
SNAPSHOT_MAGIC = b"SAGEPS1\n"
RESOLVED_CONFIG = "resolved_config.ini"
MANIFEST = "manifest.txt"


def format_cell(value: object) -> str:
    if isinstance(value, bool):
        return "1" if value else "0"
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return str(value)


def render_csv(header: Sequence[str], rows: Iterable[Sequence[object]]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n", quoting=csv.QUOTE_MINIMAL)
    writer.writerow(header)
    for row in rows:
        if len(row) != len(header):
            raise ValueError(f"row has {len(row)} cells, header has {len(header)}")
        writer.writerow([format_cell(v) for v in row])
    return buf.getvalue()


async def write_bytes(path: Path, data: bytes) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    async with aiofiles.open(path, mode="wb") as f:
        await f.write(data)
    return path


async def write_text(path: Path, text: str) -> Path:
    # 바이트로 기록해야 플랫폼과 무관하게 LF가 유지됨
    return await write_bytes(path, text.encode("utf-8"))


async def write_csv(
    path: Path, header: Sequence[str], rows: Iterable[Sequence[object]]
) -> Path:
    await write_text(path, render_csv(header, rows))
    LOGGER.debug("Wrote %s", path.name)
    return path


def sha256_hex(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


async def write_run_files(out_dir: Path, cfg: RunConfig, outputs: Iterable[Path]) -> Path:
    """Write resolved_config.ini and manifest.txt next to the outputs."""

    resolved = render_config(cfg)
    await write_text(out_dir / RESOLVED_CONFIG, resolved)

    lines = [
        "tool=sage-opt",
        f"version={__version__}",
        f"subcommand={cfg.subcommand.value}",
        f"seed={cfg.seed}",
        f"csv_schema={CSV_SCHEMA_VERSION}",
        f"config_sha256={sha256_hex(resolved.encode('utf-8'))}",
    ]
    for path in sorted(set(outputs), key=lambda p: p.name):
        async with aiofiles.open(path, mode="rb") as f:
            digest = sha256_hex(await f.read())
        lines.append(f"file.{path.name}={digest}")
    return await write_text(out_dir / MANIFEST, "\n".join(lines) + "\n")


def encode_snapshot(params: ParamSet) -> bytes:
    parts = [SNAPSHOT_MAGIC, struct.pack("<I", len(params))]
    for t in params:
        name = t.name.encode("utf-8")
        parts.append(struct.pack("<H", len(name)))
        parts.append(name)
        parts.append(struct.pack("<BI", t.kind.code, t.values.ndim))
        parts.append(struct.pack(f"<{t.values.ndim}I", *t.shape))
        parts.append(np.ascontiguousarray(t.values, dtype="<f8").tobytes())
    return b"".join(parts)


def decode_snapshot(data: bytes) -> ParamSet:
    if not data.startswith(SNAPSHOT_MAGIC):
        raise SnapshotFormatError("bad magic bytes")
    view = memoryview(data)
    pos = len(SNAPSHOT_MAGIC)

    def take(fmt: str):
        nonlocal pos
        size = struct.calcsize(fmt)
        if pos + size > len(data):
            raise SnapshotFormatError("truncated snapshot")
        values = struct.unpack_from(fmt, view, pos)
        pos += size
        return values

    (count,) = take("<I")
    tensors = []
    for _ in range(count):
        (name_len,) = take("<H")
        if pos + name_len > len(data):
            raise SnapshotFormatError("truncated tensor name")
        name = bytes(view[pos : pos + name_len]).decode("utf-8")
        pos += name_len
        kind_code, ndim = take("<BI")
        shape = take(f"<{ndim}I")
        if kind_code > 2 or TensorKind.from_code(kind_code) is not TensorKind.for_ndim(ndim):
            raise SnapshotFormatError(f"tensor {name!r}: kind {kind_code} does not match ndim {ndim}")
        n = int(np.prod(shape)) if shape else 1
        nbytes = 8 * n
        if pos + nbytes > len(data):
            raise SnapshotFormatError(f"tensor {name!r}: truncated data")
        values = np.frombuffer(data, dtype="<f8", count=n, offset=pos).reshape(shape)
        pos += nbytes
        tensors.append(NamedTensor(name, values))
    if pos != len(data):
        raise SnapshotFormatError("trailing bytes after last tensor")
    return ParamSet(tuple(tensors))


async def write_snapshot(path: Path, params: ParamSet) -> Path:
    return await write_bytes(path, encode_snapshot(params))


async def read_snapshot(path: Path) -> ParamSet:
    async with aiofiles.open(path, mode="rb") as f:
        return decode_snapshot(await f.read())
