"""Strict `key = value` config parsing and resolved-config rendering."""

from __future__ import annotations

import configparser
import dataclasses
import math
import types
from pathlib import Path
from typing import Any, Optional, Union, get_args, get_origin, get_type_hints

import aiofiles

from src.lib.config import SECTION_TYPES, RunConfig, RunSection, Subcommand
from src.lib.errors import ConfigError
from src.lib.logger import setup_logger

LOGGER = setup_logger("sage_opt.parser")
RUN_SECTION = "run"
_TRUE = {"true", "yes", "on", "1"}
_FALSE = {"false", "no", "off", "0"}


def _convert(raw: str, hint: Any, key: str) -> Any:
    origin = get_origin(hint)
    if origin in (Union, types.UnionType):
        inner = [a for a in get_args(hint) if a is not type(None)]
        if raw.strip() == "" or raw.strip().lower() == "none":
            return None
        return _convert(raw, inner[0], key)
    if origin is tuple:
        elem = get_args(hint)[0]
        parts = [p.strip() for p in raw.split(",")]
        if parts == [""]:
            return ()
        if any(p == "" for p in parts):
            raise ConfigError(f"{key}: empty list element in {raw!r}")
        return tuple(_convert(p, elem, key) for p in parts)

    value = raw.strip()
    try:
        if hint is bool:
            if value.lower() in _TRUE:
                return True
            if value.lower() in _FALSE:
                return False
            raise ValueError(value)
        if hint is int:
            return int(value)
        if hint is float:
            number = float(value)
            if not math.isfinite(number):
                raise ValueError(value)
            return number
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {value!r} as {hint.__name__}") from None
    if hint is str:
        return value
    raise ConfigError(f"{key}: unsupported field type {hint!r}")


def _render(value: Any) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, tuple):
        return ", ".join(_render(v) for v in value)
    return str(value)


def _build(cls: type, raw: dict[str, str], section: str):
    hints = get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(raw) - names)
    if unknown:
        raise ConfigError(f"[{section}] unknown keys: {', '.join(unknown)}")
    kwargs = {k: _convert(v, hints[k], f"[{section}] {k}") for k, v in raw.items()}
    obj = cls(**kwargs)
    obj.validate()
    return obj


def parse_config_text(
    text: str,
    subcommand: Subcommand | str,
    seed: Optional[int] = None,
    out: Optional[str | Path] = None,
) -> RunConfig:
    """Parse config text for one subcommand.

    Sections for other subcommands are checked for unknown keys but otherwise
    ignored. `seed` and `out` override the [run] section.
    """

    subcommand = Subcommand(subcommand)
    cp = configparser.ConfigParser(interpolation=None, strict=True)
    cp.optionxform = str
    try:
        cp.read_string(text)
    except configparser.Error as e:
        raise ConfigError(f"malformed config: {e}") from None

    if cp.defaults():
        raise ConfigError("keys outside a section are not allowed")

    known = {RUN_SECTION} | {s.value for s in Subcommand}
    unknown_sections = sorted(set(cp.sections()) - known)
    if unknown_sections:
        raise ConfigError(f"unknown sections: {', '.join(unknown_sections)}")

    run_raw = dict(cp[RUN_SECTION]) if cp.has_section(RUN_SECTION) else {}
    if seed is not None:
        run_raw["seed"] = str(seed)
    if out is not None:
        run_raw["out"] = str(out)
    run = _build(RunSection, run_raw, RUN_SECTION)

    active = None
    for sub, cls in SECTION_TYPES.items():
        raw = dict(cp[sub.value]) if cp.has_section(sub.value) else {}
        built = _build(cls, raw, sub.value) if (raw or sub is subcommand) else None
        if sub is subcommand:
            active = built

    return RunConfig(subcommand=subcommand, run=run, section=active)


async def load_config(
    path: Optional[str | Path],
    subcommand: Subcommand | str,
    seed: Optional[int] = None,
    out: Optional[str | Path] = None,
) -> RunConfig:
    text = ""
    if path is not None:
        config_path = Path(path)
        try:
            async with aiofiles.open(config_path, mode="r", encoding="utf-8") as f:
                text = await f.read()
        except OSError as e:
            raise ConfigError(f"cannot read config {config_path}: {e}") from None
        LOGGER.debug("Loaded config %s", config_path)
    return parse_config_text(text, subcommand, seed=seed, out=out)


def render_config(cfg: RunConfig) -> str:
    """Render the fully resolved config. Parsing the result gives back `cfg`."""

    lines = [f"[{RUN_SECTION}]"]
    for f in dataclasses.fields(cfg.run):
        lines.append(f"{f.name} = {_render(getattr(cfg.run, f.name))}")
    lines.append("")
    lines.append(f"[{cfg.subcommand.value}]")
    for f in dataclasses.fields(cfg.section):
        lines.append(f"{f.name} = {_render(getattr(cfg.section, f.name))}")
    return "\n".join(lines) + "\n"
