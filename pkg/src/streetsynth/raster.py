"""Rasterization, exact Euclidean distance fields and raster file formats.

Rasters are plain 2-D numpy arrays indexed ``[row, col]``. Pixel ``(col,
row)`` is centred on local coordinate ``(col, row) * pixel_m``.
"""

from __future__ import annotations

import math
import struct
import warnings
from pathlib import Path
from typing import Iterable

import numpy as np
from numba import njit
from PIL import Image

from ._io import atomic_write_bytes, atomic_write_text, check_magic, unpack_u32
from .errors import EmptyMaskWarning, FormatError
from .geo import CropSpec, Region
from .graph import Priority, StreetGraph

SGR_MAGIC = b"SGR1"


def _as_region(frame: Region | CropSpec) -> Region:
    return Region.from_crop(frame) if isinstance(frame, CropSpec) else frame


def round_half_down(v: float) -> int:
    """Nearest integer; exact halves go toward negative infinity."""
    return math.ceil(v - 0.5)


@njit(cache=True)
def _draw_lines(mask, lines):
    h, w = mask.shape
    for k in range(lines.shape[0]):
        x0, y0, x1, y1 = lines[k, 0], lines[k, 1], lines[k, 2], lines[k, 3]
        dx = abs(x1 - x0)
        dy = -abs(y1 - y0)
        sx = 1 if x0 < x1 else -1
        sy = 1 if y0 < y1 else -1
        err = dx + dy
        while True:
            if 0 <= x0 < w and 0 <= y0 < h:
                mask[y0, x0] = 1
            if x0 == x1 and y0 == y1:
                break
            e2 = 2 * err
            if e2 >= dy:
                err += dy
                x0 += sx
            if e2 <= dx:
                err += dx
                y0 += sy


def _clip_to_box(p, q, lo, hi_x, hi_y):
    t0, t1 = 0.0, 1.0
    dx, dy = q[0] - p[0], q[1] - p[1]
    for pk, qk in ((-dx, p[0] - lo), (dx, hi_x - p[0]), (-dy, p[1] - lo), (dy, hi_y - p[1])):
        if pk == 0:
            if qk < 0:
                return None
            continue
        r = qk / pk
        if pk < 0:
            if r > t1:
                return None
            t0 = max(t0, r)
        else:
            if r < t0:
                return None
            t1 = min(t1, r)
    if t0 > t1:
        return None
    return (p[0] + t0 * dx, p[1] + t0 * dy), (p[0] + t1 * dx, p[1] + t1 * dy)


def bresenham_pixels(p: tuple[float, float], q: tuple[float, float]) -> list[tuple[int, int]]:
    """Pixels ``(col, row)`` of the Bresenham line between two pixel positions."""
    a = (round_half_down(p[0]), round_half_down(p[1]))
    b = (round_half_down(q[0]), round_half_down(q[1]))
    if b < a:
        a, b = b, a
    x0, y0 = a
    x1, y1 = b
    dx, dy = abs(x1 - x0), -abs(y1 - y0)
    sx = 1 if x0 < x1 else -1
    sy = 1 if y0 < y1 else -1
    err = dx + dy
    out = []
    while True:
        out.append((x0, y0))
        if x0 == x1 and y0 == y1:
            return out
        e2 = 2 * err
        if e2 >= dy:
            err += dy
            x0 += sx
        if e2 <= dx:
            err += dx
            y0 += sy


def rasterize(g: StreetGraph, frame: Region | CropSpec,
              priorities: Iterable[Priority] = (Priority.P1, Priority.P2)) -> np.ndarray:
    """Binary ``uint8`` mask with the Bresenham pixels of the selected edges.

    Endpoints are rounded to the nearest pixel and every line is drawn from
    its lexicographically smaller endpoint, so edge direction does not
    matter. Lines reaching far outside the raster are clipped to a margin
    box before drawing; pixels outside the raster are discarded.
    """
    region = _as_region(frame)
    h, w = region.height_px, region.width_px
    mask = np.zeros((h, w), dtype=np.uint8)
    if not g.n_edges:
        return mask
    keep = np.isin(g.priorities, [int(p) for p in priorities])
    px = g.vertices / region.pixel_m
    margin = 64.0
    lines = []
    for i, j in g.edges[keep].tolist():
        p, q = tuple(px[i]), tuple(px[j])
        inside = all(-1.0 <= c <= lim for c, lim in ((p[0], w), (q[0], w), (p[1], h), (q[1], h)))
        if not inside:
            clipped = _clip_to_box(p, q, -margin, w + margin, h + margin)
            if clipped is None:
                continue
            p, q = clipped
        a = (round_half_down(p[0]), round_half_down(p[1]))
        b = (round_half_down(q[0]), round_half_down(q[1]))
        if b < a:
            a, b = b, a
        lines.append((a[0], a[1], b[0], b[1]))
    if lines:
        _draw_lines(mask, np.array(lines, dtype=np.int64))
    return mask


@njit(cache=True)
def _edt_1d(f, out, v, z):
    n = f.shape[0]
    k = 0
    v[0] = 0
    z[0] = -np.inf
    z[1] = np.inf
    for q in range(1, n):
        s = ((f[q] + q * q) - (f[v[k]] + v[k] * v[k])) / (2.0 * q - 2.0 * v[k])
        while s <= z[k]:
            k -= 1
            s = ((f[q] + q * q) - (f[v[k]] + v[k] * v[k])) / (2.0 * q - 2.0 * v[k])
        k += 1
        v[k] = q
        z[k] = s
        z[k + 1] = np.inf
    k = 0
    for q in range(n):
        while z[k + 1] < q:
            k += 1
        d = q - v[k]
        out[q] = d * d + f[v[k]]


@njit(cache=True)
def _sq_edt(mask, big):
    h, w = mask.shape
    g = np.empty((h, w), dtype=np.float64)
    n = max(h, w)
    f = np.empty(n, dtype=np.float64)
    out = np.empty(n, dtype=np.float64)
    v = np.empty(n, dtype=np.int64)
    z = np.empty(n + 1, dtype=np.float64)
    for c in range(w):
        for r in range(h):
            f[r] = 0.0 if mask[r, c] else big
        _edt_1d(f[:h], out[:h], v, z)
        for r in range(h):
            g[r, c] = out[r]
    for r in range(h):
        for c in range(w):
            f[c] = g[r, c]
        _edt_1d(f[:w], out[:w], v, z)
        for c in range(w):
            g[r, c] = out[c]
    return g


def squared_distance_transform(mask: np.ndarray) -> np.ndarray:
    """Exact squared Euclidean distance (pixels) to the nearest set pixel.

    Two separable passes of the 1-D lower-envelope-of-parabolas transform.
    All intermediate values are integers below 2**53, so results are exact.
    """
    mask = np.ascontiguousarray(np.asarray(mask) != 0)
    h, w = mask.shape
    big = float((h + w) ** 2 + 1)
    return _sq_edt(mask, big)


def distance_field(mask: np.ndarray, d_max_px: float = 16.0) -> np.ndarray:
    """Clamped, normalised distance to the nearest set pixel, in ``[0, 1]``.

    A mask without any set pixel yields an all-ones field and an
    :class:`EmptyMaskWarning`.
    """
    mask = np.asarray(mask)
    if not mask.any():
        warnings.warn("distance field of an empty mask", EmptyMaskWarning, stacklevel=2)
        return np.ones(mask.shape, dtype=np.float64)
    d = np.sqrt(squared_distance_transform(mask))
    return np.minimum(d, d_max_px) / d_max_px


def threshold(df: np.ndarray, tau: float) -> np.ndarray:
    return (np.asarray(df) <= tau).astype(np.uint8)


DEFAULT_STYLE = {
    Priority.P1: ("#c0392b", 12.0),
    Priority.P2: ("#2c3e50", 6.0),
}


def render_svg(g: StreetGraph, style: dict | None = None, extent: tuple[float, float] | None = None) -> str:
    """SVG document with one path per edge, coordinates in meters.

    ``extent`` is ``(width_m, height_m)``; defaults to the frame size when the
    graph carries a region frame, else to the vertex bounding box.
    """
    style = {**DEFAULT_STYLE, **(style or {})}
    if extent is None:
        if g.frame.get("kind") == "region":
            r = Region.from_dict(g.frame)
            extent = (r.width_m, r.height_m)
        elif g.n_vertices:
            extent = tuple(float(v) for v in g.vertices.max(axis=0))
        else:
            extent = (1.0, 1.0)
    w, h = extent
    lines = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" viewBox="0 0 {w:.3f} {h:.3f}" '
        f'width="{w / 4:.0f}" height="{h / 4:.0f}">',
        f'<rect x="0" y="0" width="{w:.3f}" height="{h:.3f}" fill="#ffffff"/>',
    ]
    for (i, j), p in zip(g.edges.tolist(), g.priorities.tolist()):
        color, width = style[Priority(p)]
        (x0, y0), (x1, y1) = g.vertices[i], g.vertices[j]
        lines.append(f'<path d="M{x0:.2f} {y0:.2f}L{x1:.2f} {y1:.2f}" stroke="{color}" '
                     f'stroke-width="{width:g}" stroke-linecap="round" fill="none"/>')
    lines.append("</svg>")
    return "\n".join(lines) + "\n"


def save_svg(g: StreetGraph, path: str | Path, **kw) -> None:
    atomic_write_text(path, render_svg(g, **kw))


def raster_to_bytes(field: np.ndarray) -> bytes:
    field = np.asarray(field)
    if field.ndim != 2:
        raise ValueError("raster must be 2-D")
    h, w = field.shape
    return SGR_MAGIC + struct.pack("<II", h, w) + field.astype("<f4").tobytes()


def raster_from_bytes(data: bytes) -> np.ndarray:
    check_magic(data, SGR_MAGIC, "raster")
    h, w = unpack_u32(data, 4, 2, "raster")
    expected = 12 + 4 * h * w
    if len(data) != expected:
        raise FormatError(f"raster: expected {expected} bytes, found {len(data)}")
    return np.frombuffer(data, dtype="<f4", offset=12).reshape(h, w).astype(np.float64)


def save_raster(field: np.ndarray, path: str | Path) -> None:
    atomic_write_bytes(path, raster_to_bytes(field))


def load_raster(path: str | Path) -> np.ndarray:
    return raster_from_bytes(Path(path).read_bytes())


def save_pgm(mask: np.ndarray, path: str | Path) -> None:
    """Binary PGM (P5); nonzero pixels are written as 255."""
    import io

    buf = io.BytesIO()
    Image.fromarray(np.where(np.asarray(mask) != 0, 255, 0).astype(np.uint8), mode="L").save(buf, format="PPM")
    atomic_write_bytes(path, buf.getvalue())


def load_pgm(path: str | Path) -> np.ndarray:
    """Read a PGM as a binary mask: 1 where the pixel is >= 128 (land)."""
    try:
        with Image.open(path) as im:
            arr = np.asarray(im.convert("L"))
    except OSError as exc:
        raise FormatError(f"cannot read PGM {path}: {exc}") from exc
    return (arr >= 128).astype(np.uint8)
