from __future__ import annotations

import os
import struct
import tempfile
from pathlib import Path

from .errors import FormatError


def _umask() -> int:
    mask = os.umask(0)
    os.umask(mask)
    return mask


def atomic_write_bytes(path: str | Path, data: bytes) -> None:
    """Write to a temporary sibling and rename over ``path``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", suffix=".tmp", dir=path.parent)
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        # mkstemp creates 0600 files; use the mode a plain open() would give
        os.chmod(tmp, 0o666 & ~_umask())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path: str | Path, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))


def check_magic(data: bytes, magic: bytes, what: str) -> None:
    if data[: len(magic)] != magic:
        raise FormatError(f"{what}: expected magic {magic!r}, found {data[:len(magic)]!r}")


def unpack_u32(data: bytes, offset: int, count: int, what: str) -> tuple[int, ...]:
    end = offset + 4 * count
    if len(data) < end:
        raise FormatError(f"{what}: truncated header")
    return struct.unpack_from(f"<{count}I", data, offset)
