"""Street-length density grids and per-cell density sampling."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ._io import atomic_write_text
from .geo import Region
from .graph import StreetGraph
from .raster import load_raster, save_raster

SAMPLES_PER_CELL = 4


@dataclass
class DensityGrid:
    """Street length per unit area (m / m^2) on a square sample lattice.

    Sample ``(i, j)`` covers ``[origin + (j, i) * resolution_m, ... + resolution_m)``.
    """

    values: np.ndarray
    resolution_m: float
    origin: tuple[float, float] = (0.0, 0.0)

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape


def _segment_sample_lengths(p, q, res, rows, cols):
    """Split segment p->q at every lattice line; yield (row, col, length)."""
    d = q - p
    length = math.hypot(d[0], d[1])
    if length == 0.0:
        return
    ts = [0.0, 1.0]
    for axis in (0, 1):
        if d[axis] != 0.0:
            lo, hi = sorted((p[axis], q[axis]))
            k0, k1 = math.floor(lo / res) + 1, math.ceil(hi / res) - 1
            if k1 >= k0:
                ks = np.arange(k0, k1 + 1) * res
                ts.extend(((ks - p[axis]) / d[axis]).tolist())
    ts = np.unique(np.clip(ts, 0.0, 1.0))
    mids = (ts[:-1] + ts[1:]) / 2.0
    seg = np.diff(ts) * length
    cx = np.floor((p[0] + mids * d[0]) / res).astype(np.int64)
    cy = np.floor((p[1] + mids * d[1]) / res).astype(np.int64)
    ok = (cx >= 0) & (cx < cols) & (cy >= 0) & (cy < rows) & (seg > 0)
    yield from zip(cy[ok].tolist(), cx[ok].tolist(), seg[ok].tolist())


def build_density_grid(g: StreetGraph, bounds: tuple[float, float, float, float],
                       resolution_m: float) -> DensityGrid:
    """Exact clipped edge length per sample square, divided by the square area.

    ``bounds`` is ``(x_min, y_min, x_max, y_max)`` in the graph frame; the
    lattice starts at ``(x_min, y_min)`` and covers the bounds with whole
    samples.
    """
    x0, y0, x1, y1 = bounds
    cols = max(1, round((x1 - x0) / resolution_m))
    rows = max(1, round((y1 - y0) / resolution_m))
    acc = np.zeros((rows, cols), dtype=np.float64)
    origin = np.array([x0, y0])
    for i, j in g.edges.tolist():
        p = g.vertices[i] - origin
        q = g.vertices[j] - origin
        for r, c, seg in _segment_sample_lengths(p, q, resolution_m, rows, cols):
            acc[r, c] += seg
    return DensityGrid(acc / (resolution_m * resolution_m), resolution_m, (float(x0), float(y0)))


def region_density_grid(g: StreetGraph, region: Region) -> DensityGrid:
    res = region.cell_m / SAMPLES_PER_CELL
    return build_density_grid(g, (0.0, 0.0, region.width_m, region.height_m), res)


def window_samples(grid: DensityGrid, window_m: float) -> int:
    return max(1, round(window_m / grid.resolution_m))


def box_filter(values: np.ndarray, size: int) -> np.ndarray:
    """Mean over a ``size`` x ``size`` window at each sample, zero padded.

    The window of sample ``i`` spans offsets ``[-size // 2, size - size // 2)``;
    an even window is therefore shifted half a sample toward the origin.
    Implemented with a summed-area table.
    """
    rows, cols = values.shape
    lo = size // 2
    sat = np.zeros((rows + 1, cols + 1), dtype=np.float64)
    sat[1:, 1:] = np.cumsum(np.cumsum(values, axis=0), axis=1)
    r = np.arange(rows)
    c = np.arange(cols)
    r0 = np.clip(r - lo, 0, rows)[:, None]
    r1 = np.clip(r - lo + size, 0, rows)[:, None]
    c0 = np.clip(c - lo, 0, cols)[None, :]
    c1 = np.clip(c - lo + size, 0, cols)[None, :]
    total = sat[r1, c1] - sat[r0, c1] - sat[r1, c0] + sat[r0, c0]
    return total / float(size * size)


def sample_cell_density(grid: DensityGrid, center: tuple[float, float], cell_m: float,
                        window_m: float) -> np.ndarray:
    """16-vector of window means at the 4 x 4 sample positions inside one cell.

    Entries are in row-major order over the cell's sub-samples. Windows are
    zero padded outside the grid.
    """
    size = window_samples(grid, window_m)
    lo = size // 2
    rows, cols = grid.shape
    step = cell_m / SAMPLES_PER_CELL
    out = np.zeros(SAMPLES_PER_CELL * SAMPLES_PER_CELL)
    offsets = (np.arange(SAMPLES_PER_CELL) - (SAMPLES_PER_CELL - 1) / 2.0) * step
    for a, dy in enumerate(offsets):
        for b, dx in enumerate(offsets):
            i = math.floor((center[1] + dy - grid.origin[1]) / grid.resolution_m)
            j = math.floor((center[0] + dx - grid.origin[0]) / grid.resolution_m)
            r0, r1 = max(i - lo, 0), min(i - lo + size, rows)
            c0, c1 = max(j - lo, 0), min(j - lo + size, cols)
            if r1 > r0 and c1 > c0:
                out[a * SAMPLES_PER_CELL + b] = grid.values[r0:r1, c0:c1].sum() / (size * size)
    return out


def cell_density_field(grid: DensityGrid, region: Region, window_m: float | None = None) -> np.ndarray:
    """Per-cell density vectors for a whole region, shape ``(cells_y, cells_x, 16)``.

    Matches :func:`sample_cell_density` at every cell centre when the grid
    lattice is aligned with the region cells (four samples per cell).
    """
    if window_m is None:
        window_m = region.cell_m * region.cells_per_side
    s = SAMPLES_PER_CELL
    size = window_samples(grid, window_m)
    padded = np.pad(grid.values, size)
    boxed = box_filter(padded, size)
    oi = round(grid.origin[1] / grid.resolution_m)
    oj = round(grid.origin[0] / grid.resolution_m)
    gi = np.arange(region.cells_y * s) - oi + size
    gj = np.arange(region.cells_x * s) - oj + size
    ok_i = (gi >= 0) & (gi < padded.shape[0])
    ok_j = (gj >= 0) & (gj < padded.shape[1])
    vals = boxed[np.clip(gi, 0, padded.shape[0] - 1)[:, None], np.clip(gj, 0, padded.shape[1] - 1)[None, :]]
    vals = vals * (ok_i[:, None] & ok_j[None, :])
    return vals.reshape(region.cells_y, s, region.cells_x, s).transpose(0, 2, 1, 3).reshape(
        region.cells_y, region.cells_x, s * s)


def save_density(grid: DensityGrid, path: str | Path) -> None:
    """Write the values as an SGR1 raster plus a ``.json`` sidecar."""
    path = Path(path)
    save_raster(grid.values, path)
    meta = {"resolution_m": grid.resolution_m, "origin": list(grid.origin)}
    atomic_write_text(path.with_suffix(path.suffix + ".json"), json.dumps(meta))


def load_density(path: str | Path) -> DensityGrid:
    path = Path(path)
    meta = json.loads(path.with_suffix(path.suffix + ".json").read_text())
    return DensityGrid(load_raster(path), float(meta["resolution_m"]), tuple(meta["origin"]))
