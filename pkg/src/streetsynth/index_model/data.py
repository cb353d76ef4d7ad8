"""Condition windows and training batches cut from whole-region arrays."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import ShapeMismatch
from ..vq import extract_patches


def pixel_context(p1_field: np.ndarray, land: np.ndarray, side: int = 16) -> np.ndarray:
    """Per-cell pixel context ``(rows, cols, 2 * side**2)``: P1 patch then land patch."""
    p1_field = np.asarray(p1_field, dtype=np.float32)
    land = np.asarray(land, dtype=np.float32)
    if p1_field.shape != land.shape:
        raise ShapeMismatch(f"P1 field {p1_field.shape} and land mask {land.shape} differ")
    rows, cols = p1_field.shape[0] // side, p1_field.shape[1] // side
    a = extract_patches(p1_field, side).reshape(rows, cols, side * side)
    b = extract_patches(land, side).reshape(rows, cols, side * side)
    return np.concatenate([a, b], axis=-1).astype(np.float32)


@dataclass
class RegionArrays:
    """Everything the model sees about one region, indexed by cell.

    ``tokens`` may be ``None`` for pure conditioning (generation); the
    arrays are padded by ``window - 1`` cells on every side so any window
    overlapping the region can be sliced without bounds checks.
    """

    cell_ctx: np.ndarray  # (rows, cols, cell_dim)
    pix_ctx: np.ndarray  # (rows, cols, pix_dim)
    tokens: np.ndarray | None
    window: int
    pad_token: int

    def __post_init__(self) -> None:
        rows, cols = self.cell_ctx.shape[:2]
        if self.pix_ctx.shape[:2] != (rows, cols):
            raise ShapeMismatch("cell and pixel contexts cover different cell grids")
        if self.tokens is not None and self.tokens.shape != (rows, cols):
            raise ShapeMismatch("token field and contexts cover different cell grids")
        self.rows, self.cols = rows, cols
        m = self.window - 1
        self._cell = np.pad(self.cell_ctx.astype(np.float32), ((m, m), (m, m), (0, 0)))
        self._pix = np.pad(self.pix_ctx.astype(np.float32), ((m, m), (m, m), (0, 0)))
        if self.tokens is not None:
            self._tok = np.pad(self.tokens.astype(np.int64), m, constant_values=self.pad_token)

    def context(self, r0: int, c0: int) -> tuple[np.ndarray, np.ndarray]:
        """Contexts of the window whose top-left cell is ``(r0, c0)``, zero outside."""
        w, m = self.window, self.window - 1
        cell = self._cell[r0 + m:r0 + m + w, c0 + m:c0 + m + w]
        pix = self._pix[r0 + m:r0 + m + w, c0 + m:c0 + m + w]
        return cell.reshape(w * w, -1), pix.reshape(w * w, -1)

    def window_tokens(self, r0: int, c0: int) -> np.ndarray:
        w, m = self.window, self.window - 1
        return self._tok[r0 + m:r0 + m + w, c0 + m:c0 + m + w].reshape(-1)


@dataclass
class Batch:
    tokens: np.ndarray  # (B, n)
    cell_ctx: np.ndarray  # (B, n, cell_dim)
    pix_ctx: np.ndarray  # (B, n, pix_dim)


class WindowDataset:
    """Random windows over one or more regions.

    A ``border_fraction`` of windows hangs over the top or left edge of a
    region (cells outside become PAD and zero context), matching the windows
    met at the start of each row and column during generation.
    """

    def __init__(self, regions: list[RegionArrays], fixed: list[tuple[int, int, int]] | None = None):
        if not regions:
            raise ValueError("dataset needs at least one region")
        self.regions = regions
        self.fixed = fixed

    def __len__(self) -> int:
        if self.fixed is not None:
            return len(self.fixed)
        w = self.regions[0].window
        return sum((r.rows + w - 1) * (r.cols + w - 1) for r in self.regions)

    def gather(self, picks: list[tuple[int, int, int]]) -> Batch:
        toks, cells, pixs = [], [], []
        for k, r0, c0 in picks:
            reg = self.regions[k]
            toks.append(reg.window_tokens(r0, c0))
            cell, pix = reg.context(r0, c0)
            cells.append(cell)
            pixs.append(pix)
        return Batch(np.stack(toks), np.stack(cells), np.stack(pixs))

    def sample_positions(self, rng: np.random.Generator, n: int, border_fraction: float) -> list[tuple[int, int, int]]:
        if self.fixed is not None:
            idx = rng.integers(len(self.fixed), size=n)
            return [self.fixed[i] for i in idx]
        picks = []
        for _ in range(n):
            k = int(rng.integers(len(self.regions)))
            reg = self.regions[k]
            w = reg.window
            hi_r, hi_c = max(reg.rows - w, 0), max(reg.cols - w, 0)
            if rng.random() < border_fraction:
                r0 = int(rng.integers(-(w - 1), hi_r + 1))
                c0 = int(rng.integers(-(w - 1), hi_c + 1))
                if r0 >= 0 and c0 >= 0:
                    if rng.random() < 0.5:
                        r0 = -int(rng.integers(1, w))
                    else:
                        c0 = -int(rng.integers(1, w))
            else:
                r0 = int(rng.integers(0, hi_r + 1))
                c0 = int(rng.integers(0, hi_c + 1))
            picks.append((k, r0, c0))
        return picks

    def sample(self, rng: np.random.Generator, n: int, border_fraction: float = 0.25) -> Batch:
        return self.gather(self.sample_positions(rng, n, border_fraction))
