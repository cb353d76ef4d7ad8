"""Plain ``key = value`` configuration files mapped onto dataclasses."""

from __future__ import annotations

import dataclasses
import os
import types
import typing
from pathlib import Path
from typing import Any, TypeVar

from .errors import ConfigError

T = TypeVar("T")


def parse_kv(text: str) -> dict[str, str]:
    """Parse ``key = value`` lines; ``#`` starts a comment."""
    out: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key = value, got {raw!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if not key:
            raise ConfigError(f"line {lineno}: empty key")
        out[key] = value
    return out


def load_kv(path: str | Path) -> dict[str, str]:
    return parse_kv(Path(path).read_text(encoding="utf-8"))


def _convert(value: Any, typ: Any, key: str) -> Any:
    if isinstance(typ, str):
        typ = {"int": int, "float": float, "bool": bool, "str": str}.get(typ.split("|")[0].strip(), str)
    origin = typing.get_origin(typ)
    if origin in (typing.Union, types.UnionType):
        args = [a for a in typing.get_args(typ) if a is not type(None)]
        if value in (None, "", "none", "None"):
            return None
        typ = args[0]
    if not isinstance(value, str):
        return typ(value) if typ in (int, float) else value
    try:
        if typ is bool:
            v = value.lower()
            if v in ("1", "true", "yes", "on"):
                return True
            if v in ("0", "false", "no", "off"):
                return False
            raise ValueError(value)
        if typ is int:
            return int(float(value)) if "e" in value.lower() else int(value)
        if typ is float:
            return float(value)
    except ValueError:
        raise ConfigError(f"bad value for {key}: {value!r}", key) from None
    return value


def build(cls: type[T], values: dict[str, Any], base: T | None = None) -> T:
    """Instantiate dataclass ``cls`` from string values, rejecting unknown keys."""
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    for key in values:
        if key not in names:
            raise ConfigError(f"unknown config key: {key}", key)
    kwargs = dataclasses.asdict(base) if base is not None else {}
    for key, value in values.items():
        kwargs[key] = _convert(value, hints[key], key)
    try:
        return cls(**kwargs)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def split_keys(values: dict[str, Any], *classes: type) -> list[dict[str, Any]]:
    """Distribute keys over several dataclasses; a key shared by several goes
    to each of them, unknown keys raise."""
    parts: list[dict[str, Any]] = [{} for _ in classes]
    for key, value in values.items():
        found = False
        for part, cls in zip(parts, classes):
            if key in {f.name for f in dataclasses.fields(cls)}:
                part[key] = value
                found = True
        if not found:
            raise ConfigError(f"unknown config key: {key}", key)
    return parts


def thread_count() -> int:
    """Worker count from ``STREETSYNTH_THREADS`` (default 1)."""
    raw = os.environ.get("STREETSYNTH_THREADS", "1")
    try:
        n = int(raw)
    except ValueError:
        raise ConfigError(f"STREETSYNTH_THREADS must be an integer, got {raw!r}") from None
    return max(1, n)
