"""Sliding-window autoregressive generation of index fields."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .density import DensityGrid, cell_density_field
from .errors import ConfigMismatch, ShapeMismatch
from .extract import extract_graph
from .geo import Region
from .graph import StreetGraph
from .index_model.config import ModelConfig
from .index_model.data import RegionArrays, pixel_context
from .index_model.model import Params, decode, encode_context
from .index_model.sampling import sample_next
from .vq import Codebook, decode as vq_decode

log = logging.getLogger(__name__)


def _fit(a: np.ndarray, shape: tuple[int, int]) -> np.ndarray:
    """Crop or zero-pad a raster to ``shape`` from the top-left corner."""
    out = np.zeros(shape, dtype=np.float32)
    h, w = min(shape[0], a.shape[0]), min(shape[1], a.shape[1])
    out[:h, :w] = a[:h, :w]
    return out


@dataclass
class ConditionSet:
    """Conditioning maps for a ``rows`` x ``cols`` cell field.

    ``p1_field`` and ``land`` are pixel rasters starting at the field's
    top-left corner; they are cropped or zero padded (zero reads as water)
    to ``rows * 16`` x ``cols * 16`` pixels. The density grid uses the same
    local frame.
    """

    density: DensityGrid
    p1_field: np.ndarray
    land: np.ndarray
    rows: int
    cols: int
    cell_m: float
    pixels_per_cell: int = 16

    def __post_init__(self) -> None:
        if np.shape(self.p1_field) != np.shape(self.land):
            raise ShapeMismatch(f"P1 field {np.shape(self.p1_field)} and land {np.shape(self.land)} differ")
        if self.rows < 1 or self.cols < 1:
            raise ValueError("field must have at least one cell")

    @classmethod
    def from_region(cls, density: DensityGrid, p1_field: np.ndarray, land: np.ndarray, region: Region,
                    rows: int | None = None, cols: int | None = None) -> ConditionSet:
        return cls(density, p1_field, land, rows or region.cells_y, cols or region.cells_x,
                   region.cell_m, region.pixels_per_cell)

    def _grid_region(self) -> Region:
        # only the cell geometry matters for density sampling; every zoom-15
        # tile has the same size in projected metres
        side = self.pixels_per_cell
        zoom = 15
        r = Region(0, 0, self.cols, self.rows, zoom, 16, side)
        if abs(r.cell_m - self.cell_m) > 1e-6:
            raise ConfigMismatch(f"cell size {self.cell_m} m does not match a zoom-15 grid")
        return r

    def arrays(self, window: int, pad_token: int) -> RegionArrays:
        s = self.pixels_per_cell
        shape = (self.rows * s, self.cols * s)
        cell = cell_density_field(self.density, self._grid_region()).astype(np.float32)
        pix = pixel_context(_fit(np.asarray(self.p1_field), shape), _fit(np.asarray(self.land), shape), s)
        return RegionArrays(cell, pix, None, window, pad_token)


def _check(cfg: ModelConfig, cb: Codebook, cs: ConditionSet) -> None:
    if cfg.K != cb.K:
        raise ConfigMismatch(f"model has K={cfg.K}, codebook has K={cb.K}")
    if cb.patch_side != cs.pixels_per_cell:
        raise ConfigMismatch(f"codebook patches are {cb.patch_side} px, cells are {cs.pixels_per_cell} px")
    if cfg.pix_ctx_dim != 2 * cs.pixels_per_cell ** 2:
        raise ConfigMismatch(f"model expects pixel context {cfg.pix_ctx_dim}, cells give {2 * cs.pixels_per_cell ** 2}")


def generate(cs: ConditionSet, params: Params, cfg: ModelConfig, cb: Codebook, seed: int = 0,
             temperature: float = 1.0, top_k: int | None = None,
             on_cell: Callable[[int, int], None] | None = None) -> np.ndarray:
    """Index field ``(rows, cols)`` generated cell by cell in row-major order.

    For target ``(r, c)`` the window covers rows ``r - w + 1 .. r`` and cols
    ``c - w + 1 .. c``, so the target is its last position. Window cells
    outside the field are PAD with zero context. Only the first ``K`` logits
    are sampled, so BOS and PAD never appear in the output.
    """
    _check(cfg, cb, cs)
    w, m = cfg.window, cfg.window - 1
    arrays = cs.arrays(w, cfg.pad)
    rng = np.random.default_rng(seed)
    tok = np.full((cs.rows + m, cs.cols + m), cfg.pad, dtype=np.int64)
    field = np.zeros((cs.rows, cs.cols), dtype=np.int64)
    for r in range(cs.rows):
        for c in range(cs.cols):
            r0, c0 = r - m, c - m
            cell, pix = arrays.context(r0, c0)
            memory = encode_context(params, cfg, cell[None], pix[None])
            window = tok[r:r + w, c:c + w].reshape(-1)
            inputs = np.concatenate([[cfg.bos], window[:-1]])[None]
            logits = decode(params, cfg, inputs, memory, last_only=True)[0, -1]
            t = sample_next(logits[:cfg.K], temperature, top_k, rng)
            tok[r + m, c + m] = t
            field[r, c] = t
            if on_cell is not None:
                on_cell(r, c)
        log.debug("generated row %d/%d", r + 1, cs.rows)
    return field


def generate_region(cs: ConditionSet, params: Params, cfg: ModelConfig, cb: Codebook, seed: int = 0,
                    temperature: float = 1.0, top_k: int | None = None, tau: float = 2.0 / 16.0,
                    min_component_m: float = 300.0) -> tuple[np.ndarray, StreetGraph]:
    """Generate, decode and extract; the graph is in the field's local metres."""
    field = generate(cs, params, cfg, cb, seed, temperature, top_k)
    df = vq_decode(field, cb)
    g = extract_graph(df, cs.cell_m / cs.pixels_per_cell, tau, min_component_m)
    return field, g
