"""Procedural test city: river, organic P1 ring with radials, P2 grid by district.

Everything runs offline and is fully determined by the seed, so the whole
pipeline can be exercised without any OpenStreetMap download.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .geo import Region, unproject
from .graph import Priority, StreetGraph, compact, from_edge_list, merge

# Lower Manhattan at zoom 15; any tile works, this one keeps the scale realistic.
DEFAULT_TILE = (9648, 12320)


@dataclass
class SynthCity:
    region: Region
    graph: StreetGraph  # region-local metres
    land: np.ndarray  # (height_px, width_px) uint8, 1 = land


@dataclass
class _Layout:
    center: np.ndarray
    river_dir: np.ndarray
    river_offset: float
    river_amp: float
    river_wavelength: float
    river_phase: float
    river_width: float
    ring_radius: float
    ring_phase: float
    radial_angles: np.ndarray
    spacing_radii: tuple[float, float, float]
    coast_dir: np.ndarray | None = None
    coast_dist: float = 0.0
    coast_amp: float = 0.0
    coast_phase: float = 0.0


def _layout(rng: np.random.Generator, w: float, h: float, water: bool, coast: bool | None) -> _Layout:
    size = min(w, h)
    center = np.array([w, h]) * rng.uniform(0.4, 0.6, size=2)
    theta = rng.uniform(0, np.pi)
    river_dir = np.array([np.cos(theta), np.sin(theta)])
    # the river passes off-centre so the downtown stays on land
    offset = (1 if rng.random() < 0.5 else -1) * rng.uniform(0.3, 0.4) * size
    width = rng.uniform(0.05, 0.08) * size if water else 0.0
    lay = _Layout(
        center=center,
        river_dir=river_dir,
        river_offset=offset,
        river_amp=rng.uniform(0.03, 0.06) * size,
        river_wavelength=rng.uniform(0.6, 1.0) * size,
        river_phase=rng.uniform(0, 2 * np.pi),
        river_width=width,
        ring_radius=rng.uniform(0.22, 0.27) * size,
        ring_phase=rng.uniform(0, 2 * np.pi),
        radial_angles=rng.uniform(0, 2 * np.pi) + np.arange(4) * np.pi / 2 + rng.uniform(-0.25, 0.25, 4),
        spacing_radii=(0.18 * size, 0.34 * size, 0.48 * size),
    )
    has_coast = rng.random() < 0.5 if coast is None else coast
    if water and has_coast:
        phi = rng.uniform(0, 2 * np.pi)
        lay.coast_dir = np.array([np.cos(phi), np.sin(phi)])
        lay.coast_dist = rng.uniform(0.12, 0.3) * size
        lay.coast_amp = rng.uniform(0.02, 0.05) * size
        lay.coast_phase = rng.uniform(0, 2 * np.pi)
    return lay


def _is_sea(lay: _Layout, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    if lay.coast_dir is None:
        return np.zeros(np.broadcast(x, y).shape, dtype=bool)
    dx, dy = x - lay.center[0], y - lay.center[1]
    out = dx * lay.coast_dir[0] + dy * lay.coast_dir[1]
    side = -dx * lay.coast_dir[1] + dy * lay.coast_dir[0]
    return out > lay.coast_dist + lay.coast_amp * np.sin(2 * np.pi * side / (0.5 * lay.river_wavelength) + lay.coast_phase)


def _is_land(lay: _Layout, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    if lay.river_width <= 0:
        return np.ones(np.broadcast(x, y).shape, dtype=bool)
    dx, dy = x - lay.center[0], y - lay.center[1]
    along = dx * lay.river_dir[0] + dy * lay.river_dir[1]
    across = -dx * lay.river_dir[1] + dy * lay.river_dir[0]
    mid = lay.river_offset + lay.river_amp * np.sin(2 * np.pi * along / lay.river_wavelength + lay.river_phase)
    return (np.abs(across - mid) > lay.river_width / 2) & ~_is_sea(lay, x, y)


def _spacing(lay: _Layout, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Grid spacing in cells by distance from the centre; 0 means no grid."""
    r = np.hypot(x - lay.center[0], y - lay.center[1])
    r1, r2, r3 = lay.spacing_radii
    return np.where(r < r1, 2, np.where(r < r2, 3, np.where(r < r3, 4, 0)))


def _polyline_graph(points: np.ndarray, priority: Priority) -> StreetGraph:
    n = len(points)
    edges = np.stack([np.arange(n - 1), np.arange(1, n)], axis=1)
    return from_edge_list(points, edges, np.full(n - 1, priority, dtype=np.int8))


def _p1_network(lay: _Layout, rng: np.random.Generator, w: float, h: float) -> StreetGraph:
    n = 72
    t = np.linspace(0, 2 * np.pi, n, endpoint=False)
    r = lay.ring_radius * (1 + 0.12 * np.sin(3 * t + lay.ring_phase) + 0.05 * np.sin(5 * t + 2 * lay.ring_phase))
    ring = lay.center + np.stack([r * np.cos(t), r * np.sin(t)], axis=1)
    ring_edges = np.stack([np.arange(n), (np.arange(n) + 1) % n], axis=1)
    # the ring breaks into arcs where it would run over the sea
    wet = _is_sea(lay, ring[:, 0], ring[:, 1])
    ring_edges = ring_edges[~(wet[ring_edges[:, 0]] | wet[ring_edges[:, 1]])]
    g = compact(from_edge_list(ring, ring_edges, np.full(len(ring_edges), Priority.P1, dtype=np.int8)))
    reach = float(np.hypot(w, h))
    for a in lay.radial_angles:
        steps = np.arange(0.0, reach, 150.0)
        bend = np.cumsum(rng.normal(0, 0.03, len(steps)))
        ang = a + 0.5 * bend
        pts = lay.center + np.cumsum(np.stack([np.cos(ang), np.sin(ang)], axis=1) * 150.0, axis=0)
        pts = np.vstack([lay.center, pts])
        sea = np.flatnonzero(_is_sea(lay, pts[:, 0], pts[:, 1]))
        if len(sea):
            # radials end at the shore; rivers are bridged
            pts = pts[:max(int(sea[0]), 1)]
        inside = (pts[:, 0] >= 0) & (pts[:, 0] <= w) & (pts[:, 1] >= 0) & (pts[:, 1] <= h)
        last = int(np.flatnonzero(inside).max()) if inside.any() else 0
        pts = pts[:min(last + 2, len(pts))]
        if len(pts) >= 2:
            g = merge(g, _polyline_graph(pts, Priority.P1))
    return g


def _p2_grid(lay: _Layout, rng: np.random.Generator, region: Region, jitter_px: int, dropout: float) -> StreetGraph:
    rows, cols = region.cells_y, region.cells_x
    cell, px = region.cell_m, region.pixel_m
    off_x = rng.integers(-jitter_px, jitter_px + 1, size=cols) * px
    off_y = rng.integers(-jitter_px, jitter_px + 1, size=rows) * px
    xs = (np.arange(cols) + 0.5) * cell + off_x
    ys = (np.arange(rows) + 0.5) * cell + off_y
    gx, gy = np.meshgrid(xs, ys)
    sp = _spacing(lay, gx, gy)
    land = _is_land(lay, gx, gy)
    ii, jj = np.meshgrid(np.arange(rows), np.arange(cols), indexing="ij")
    on_h = (sp > 0) & (ii % np.maximum(sp, 1) == 0) & land  # node lies on a horizontal street
    on_v = (sp > 0) & (jj % np.maximum(sp, 1) == 0) & land
    edges = []

    def mid_land(a, b):
        return bool(_is_land(lay, (gx[a] + gx[b]) / 2, (gy[a] + gy[b]) / 2))

    for i in range(rows):
        for j in range(cols - 1):
            if on_h[i, j] and on_h[i, j + 1] and mid_land((i, j), (i, j + 1)) and rng.random() >= dropout:
                edges.append((i * cols + j, i * cols + j + 1))
    for i in range(rows - 1):
        for j in range(cols):
            if on_v[i, j] and on_v[i + 1, j] and mid_land((i, j), (i + 1, j)) and rng.random() >= dropout:
                edges.append((i * cols + j, (i + 1) * cols + j))
    verts = np.stack([gx.ravel(), gy.ravel()], axis=1)
    e = np.array(edges, dtype=np.int64).reshape(-1, 2)
    return from_edge_list(verts, e, np.full(len(e), Priority.P2, dtype=np.int8))


def synth_city(seed: int = 0, cells: int = 64, tile: tuple[int, int] = DEFAULT_TILE, water: bool = True,
               coast: bool | None = None, jitter_px: int = 2, dropout: float = 0.03) -> SynthCity:
    """A ``cells`` x ``cells`` region with a deterministic street network and land mask.

    ``water`` enables the river and the sea; ``coast`` forces the sea on or
    off (``None`` lets the seed decide).
    """
    region = Region(tile[0], tile[1], cells, cells)
    rng = np.random.default_rng(seed)
    w, h = region.width_m, region.height_m
    lay = _layout(rng, w, h, water, coast)
    p1 = _p1_network(lay, rng, w, h)
    p2 = compact(_p2_grid(lay, rng, region, jitter_px, dropout))
    g = merge(p1, p2)
    g.frame = region.to_dict()
    px = region.pixel_m
    yy, xx = np.mgrid[0:region.height_px, 0:region.width_px]
    land = _is_land(lay, xx * px, yy * px).astype(np.uint8)
    return SynthCity(region, g, land)


def to_overpass(city: SynthCity, extra_ways: bool = True) -> str:
    """Overpass-style JSON for the city's graph (one two-node way per edge)."""
    g, region = city.graph, city.region
    elements = []
    for i, (x, y) in enumerate(g.vertices.tolist()):
        p = unproject(*region.to_world(x, y))
        elements.append({"type": "node", "id": i + 1, "lat": p.lat, "lon": p.lon})
    tag = {Priority.P1: "primary", Priority.P2: "residential"}
    for k, ((a, b), pr) in enumerate(zip(g.edges.tolist(), g.priorities.tolist())):
        elements.append({"type": "way", "id": k + 1, "nodes": [a + 1, b + 1],
                         "tags": {"highway": tag[Priority(pr)]}})
    if extra_ways and g.n_edges:
        # a footpath over existing nodes: must be dropped by classification
        a, b = g.edges[0].tolist()
        elements.append({"type": "way", "id": g.n_edges + 1, "nodes": [a + 1, b + 1],
                         "tags": {"highway": "footway"}})
    return json.dumps({"version": 0.6, "elements": elements})
