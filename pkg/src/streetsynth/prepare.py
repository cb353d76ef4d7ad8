"""Per-region training inputs: P1/P2 distance fields, land mask, density, manifest."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ._io import atomic_write_text
from .density import DensityGrid, cell_density_field, load_density, region_density_grid, save_density
from .errors import FormatError, ShapeMismatch
from .geo import Region
from .graph import Priority, StreetGraph, load_graph, save_graph
from .index_model.data import RegionArrays, pixel_context
from .raster import distance_field, load_pgm, load_raster, rasterize, save_pgm, save_raster
from .vq import Codebook, encode

MANIFEST_VERSION = 1


def resample_nearest(mask: np.ndarray, shape: tuple[int, int]) -> np.ndarray:
    """Nearest-neighbour resampling of a raster to ``shape`` (pixel centres aligned)."""
    mask = np.asarray(mask)
    if mask.shape == tuple(shape):
        return mask.copy()
    h, w = shape
    rows = np.minimum(((np.arange(h) + 0.5) * mask.shape[0] / h).astype(np.int64), mask.shape[0] - 1)
    cols = np.minimum(((np.arange(w) + 0.5) * mask.shape[1] / w).astype(np.int64), mask.shape[1] - 1)
    return mask[rows[:, None], cols[None, :]]


@dataclass
class PreparedRegion:
    region: Region
    graph: StreetGraph
    p1_field: np.ndarray  # (H, W) float32 in [0, 1]
    p2_field: np.ndarray
    land: np.ndarray  # (H, W) uint8
    density: DensityGrid

    def cell_density(self) -> np.ndarray:
        return cell_density_field(self.density, self.region)

    def arrays(self, window: int, pad_token: int, cb: Codebook | None = None) -> RegionArrays:
        """Model inputs for this region; P2 tokens only when a codebook is given."""
        tokens = encode(self.p2_field, cb) if cb is not None else None
        return RegionArrays(self.cell_density().astype(np.float32), pixel_context(self.p1_field, self.land),
                            tokens, window, pad_token)


def prepare_region(graph: StreetGraph, region: Region, land: np.ndarray | None = None,
                   d_max_px: float = 16.0) -> PreparedRegion:
    """Rasterise P1 and P2 over the whole region and compute the density grid.

    Distance fields are computed on the region raster rather than per crop so
    that streets just across a crop border still shape the field.
    """
    shape = (region.height_px, region.width_px)
    if land is None:
        land = np.ones(shape, dtype=np.uint8)
    land = (resample_nearest(land, shape) != 0).astype(np.uint8)
    p1 = distance_field(rasterize(graph, region, [Priority.P1]), d_max_px).astype(np.float32)
    p2 = distance_field(rasterize(graph, region, [Priority.P2]), d_max_px).astype(np.float32)
    return PreparedRegion(region, graph, p1, p2, land, region_density_grid(graph, region))


def save_prepared(pr: PreparedRegion, out_dir: str | Path) -> Path:
    """Write every array plus ``manifest.json``; returns the manifest path."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    files = {"graph": "graph.json", "p1_field": "p1.sgr", "p2_field": "p2.sgr",
             "land": "land.pgm", "density": "density.sgr"}
    save_graph(pr.graph, out / files["graph"])
    save_raster(pr.p1_field, out / files["p1_field"])
    save_raster(pr.p2_field, out / files["p2_field"])
    save_pgm(pr.land, out / files["land"])
    save_density(pr.density, out / files["density"])
    r = pr.region
    crops = [
        {"tile_x": c.tile_x, "tile_y": c.tile_y,
         "row": (c.tile_y - r.tile_y) * r.cells_per_side, "col": (c.tile_x - r.tile_x) * r.cells_per_side}
        for c in r.crops()
    ] if r.cells_x % r.cells_per_side == 0 and r.cells_y % r.cells_per_side == 0 else []
    manifest = {
        "version": MANIFEST_VERSION,
        "region": r.to_dict(),
        "cell_m": r.cell_m,
        "pixel_m": r.pixel_m,
        "cells": [r.cells_y, r.cells_x],
        "pixels": [r.height_px, r.width_px],
        "files": files,
        "crops": crops,
    }
    path = out / "manifest.json"
    atomic_write_text(path, json.dumps(manifest, indent=2))
    return path


def load_prepared(manifest_path: str | Path) -> PreparedRegion:
    path = Path(manifest_path)
    try:
        m = json.loads(path.read_text(encoding="utf-8"))
        if m.get("version") != MANIFEST_VERSION:
            raise FormatError(f"manifest: unsupported version {m.get('version')!r}")
        region = Region.from_dict(m["region"])
        files = m["files"]
    except (ValueError, KeyError, TypeError) as exc:
        raise FormatError(f"manifest: {exc}") from exc
    base = path.parent
    pr = PreparedRegion(region, load_graph(base / files["graph"]), load_raster(base / files["p1_field"]),
                        load_raster(base / files["p2_field"]), load_pgm(base / files["land"]),
                        load_density(base / files["density"]))
    shape = (region.height_px, region.width_px)
    for name in ("p1_field", "p2_field", "land"):
        if getattr(pr, name).shape != shape:
            raise ShapeMismatch(f"{name} is {getattr(pr, name).shape}, region needs {shape}")
    return pr
