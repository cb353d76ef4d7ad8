"""Street-network statistics and histogram comparison of two graphs."""

from __future__ import annotations

import csv
import io
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.sparse import coo_matrix, csr_matrix
from scipy.sparse.csgraph import connected_components, dijkstra

from ._io import atomic_write_text
from .config import thread_count
from .errors import BinMismatch, ClosedSegment, InsufficientConnectivity, NoLand
from .graph import StreetGraph

METRICS = ("circuity", "transport_ratio", "pagerank", "pagerank_by_edge", "density")


def _default_bins() -> dict[str, list[float]]:
    return {
        "circuity": np.linspace(1.0, 2.0, 21).tolist(),
        "transport_ratio": np.linspace(1.0, 3.0, 21).tolist(),
        # PageRank scores are reported relative to the uniform score 1/n
        "pagerank": np.linspace(0.0, 3.0, 31).tolist(),
        "pagerank_by_edge": np.linspace(0.0, 3.0, 31).tolist(),
        "density": np.linspace(0.0, 0.04, 21).tolist(),
    }


@dataclass
class MetricsConfig:
    transport_pairs: int = 500
    pagerank_k: float = 0.85
    edge_pagerank_k: float = 0.95
    tol: float = 1e-10
    max_iter: int = 100_000
    seed: int = 0
    density_tile_m: float = 1222.992452
    bins: dict[str, list[float]] = field(default_factory=_default_bins)

    def __post_init__(self) -> None:
        if not 0 < self.pagerank_k < 1 or not 0 < self.edge_pagerank_k < 1:
            raise ValueError("damping factors must lie in (0, 1)")
        if self.transport_pairs < 1:
            raise ValueError("transport_pairs must be at least 1")


# ---------------------------------------------------------------- segments

def _incidence(g: StreetGraph) -> list[list[tuple[int, int]]]:
    """Per vertex, sorted ``(neighbour, edge id)`` pairs."""
    inc: list[list[tuple[int, int]]] = [[] for _ in range(g.n_vertices)]
    for k, (a, b) in enumerate(g.edges.tolist()):
        inc[a].append((b, k))
        inc[b].append((a, k))
    for lst in inc:
        lst.sort()
    return inc


def segments(g: StreetGraph) -> list[list[int]]:
    """Maximal vertex paths whose interior vertices have degree 2.

    Every edge belongs to exactly one segment. A cycle made only of degree-2
    vertices becomes one closed segment starting and ending at its lowest
    vertex index.
    """
    inc = _incidence(g)
    deg = np.array([len(x) for x in inc], dtype=np.int64)
    used = np.zeros(g.n_edges, dtype=bool)
    out: list[list[int]] = []

    def walk(start: int, nxt: int, eid: int) -> list[int]:
        path = [start, nxt]
        used[eid] = True
        prev_e, cur = eid, nxt
        while deg[cur] == 2 and cur != start:
            (a, ea), (b, eb) = inc[cur]
            w, e = (b, eb) if ea == prev_e else (a, ea)
            if used[e]:
                break
            used[e] = True
            path.append(w)
            prev_e, cur = e, w
        return path

    for v in range(g.n_vertices):
        if deg[v] == 2:
            continue
        for w, e in inc[v]:
            if not used[e]:
                out.append(walk(v, w, e))
    for v in range(g.n_vertices):
        for w, e in inc[v]:
            if not used[e]:
                out.append(walk(v, w, e))
    return out


def circuity(g: StreetGraph, seg: list[int]) -> float:
    """Path length over the straight distance between the segment's ends."""
    pts = g.vertices[seg]
    d = np.diff(pts, axis=0)
    length = float(np.hypot(d[:, 0], d[:, 1]).sum())
    chord = float(np.hypot(*(pts[-1] - pts[0])))
    if seg[0] == seg[-1] or chord == 0.0:
        raise ClosedSegment("segment starts and ends at the same point")
    return length / chord


def circuities(g: StreetGraph) -> np.ndarray:
    vals = []
    for seg in segments(g):
        try:
            vals.append(circuity(g, seg))
        except ClosedSegment:
            continue
    return np.array(vals, dtype=np.float64)


# ---------------------------------------------------------------- transport ratio

def _weighted_adjacency(g: StreetGraph) -> csr_matrix:
    n = g.n_vertices
    e = g.edges
    w = g.edge_lengths()
    # zero-length edges would vanish from a sparse matrix; keep them connected
    w = np.where(w > 0, w, 1e-12)
    m = coo_matrix((np.concatenate([w, w]), (np.concatenate([e[:, 0], e[:, 1]]), np.concatenate([e[:, 1], e[:, 0]]))),
                   shape=(n, n))
    return m.tocsr()


def transport_ratio(g: StreetGraph, cfg: MetricsConfig | None = None) -> np.ndarray:
    """``(n, 3)`` rows ``(i, j, ratio)`` for seeded uniform vertex pairs.

    Pairs that coincide in space or lie in different components are
    rejected and redrawn, at most ``100 * n`` draws in total.
    """
    cfg = cfg or MetricsConfig()
    n = cfg.transport_pairs
    if g.n_vertices < 2 or g.n_edges == 0:
        raise InsufficientConnectivity("graph has no connected vertex pairs")
    adj = _weighted_adjacency(g)
    _, label = connected_components(adj, directed=False)
    rng = np.random.default_rng(cfg.seed)
    cache: dict[int, np.ndarray] = {}
    rows = []
    attempts = 0
    while len(rows) < n:
        if attempts >= 100 * n:
            raise InsufficientConnectivity(f"only {len(rows)} of {n} pairs found in {attempts} draws")
        attempts += 1
        i, j = (int(x) for x in rng.integers(g.n_vertices, size=2))
        if i == j or label[i] != label[j]:
            continue
        euclid = float(np.hypot(*(g.vertices[i] - g.vertices[j])))
        if euclid == 0.0:
            continue
        if i not in cache:
            cache[i] = dijkstra(adj, directed=False, indices=i)
        walk = float(cache[i][j])
        rows.append((i, j, walk / euclid))
    return np.array(rows, dtype=np.float64)


# ---------------------------------------------------------------- pagerank

def _adjacency01(n: int, edges: np.ndarray) -> csr_matrix:
    if len(edges) == 0:
        return csr_matrix((n, n))
    r = np.concatenate([edges[:, 0], edges[:, 1]])
    c = np.concatenate([edges[:, 1], edges[:, 0]])
    m = coo_matrix((np.ones(len(r)), (r, c)), shape=(n, n)).tocsr()
    m.data[:] = 1.0
    return m


def pagerank_matrix(adj: csr_matrix, k: float, tol: float = 1e-10, max_iter: int = 100_000) -> np.ndarray:
    """Stationary distribution of the damped random walk on an undirected graph.

    With probability ``k`` the walker follows a uniformly chosen incident
    edge, otherwise it restarts at a uniform vertex; vertices without edges
    spread their mass uniformly. Iterates until the L1 change is below
    ``tol``.
    """
    n = adj.shape[0]
    if n == 0:
        return np.zeros(0)
    deg = np.asarray(adj.sum(axis=1)).ravel()
    dangling = deg == 0
    inv = np.where(dangling, 0.0, 1.0 / np.where(dangling, 1.0, deg))
    at = adj.T.tocsr()
    x = np.full(n, 1.0 / n)
    for _ in range(max_iter):
        nxt = k * (at @ (x * inv)) + (k * x[dangling].sum() + (1.0 - k)) / n
        nxt /= nxt.sum()
        delta = np.abs(nxt - x).sum()
        x = nxt
        if delta < tol:
            break
    return x


def pagerank(g: StreetGraph, k: float = 0.85, tol: float = 1e-10) -> np.ndarray:
    return pagerank_matrix(_adjacency01(g.n_vertices, g.edges), k, tol)


def edge_graph(g: StreetGraph) -> csr_matrix:
    """Adjacency of the edge graph: edges are adjacent when they share an endpoint."""
    m = g.n_edges
    if m == 0:
        return csr_matrix((0, 0))
    inc = coo_matrix((np.ones(2 * m), (np.repeat(np.arange(m), 2), g.edges.ravel())),
                     shape=(m, g.n_vertices)).tocsr()
    eg = (inc @ inc.T).tocoo()
    keep = eg.row != eg.col
    out = coo_matrix((np.ones(int(keep.sum())), (eg.row[keep], eg.col[keep])), shape=(m, m)).tocsr()
    out.data[:] = 1.0
    return out


def pagerank_by_edge(g: StreetGraph, k: float = 0.95, tol: float = 1e-10) -> np.ndarray:
    return pagerank_matrix(edge_graph(g), k, tol)


# ---------------------------------------------------------------- density

def street_density(g: StreetGraph, land: np.ndarray | None, meters_per_pixel: float) -> float:
    """Total street length per square metre of land."""
    if land is None:
        raise NoLand("a land mask is required")
    n_land = int(np.count_nonzero(land))
    if n_land == 0:
        raise NoLand("land mask has no land pixels")
    return g.total_length() / (n_land * meters_per_pixel ** 2)


def local_densities(g: StreetGraph, land: np.ndarray, meters_per_pixel: float, tile_m: float) -> np.ndarray:
    """Land-normalised density of each square tile that contains land."""
    from .density import build_density_grid

    h, w = land.shape
    tile_px = max(1, round(tile_m / meters_per_pixel))
    rows, cols = -(-h // tile_px), -(-w // tile_px)
    grid = build_density_grid(g, (0.0, 0.0, cols * tile_px * meters_per_pixel, rows * tile_px * meters_per_pixel),
                              tile_px * meters_per_pixel)
    length = grid.values * (tile_px * meters_per_pixel) ** 2
    padded = np.zeros((rows * tile_px, cols * tile_px), dtype=np.int64)
    padded[:h, :w] = land != 0
    land_px = padded.reshape(rows, tile_px, cols, tile_px).sum(axis=(1, 3))
    ok = land_px > 0
    return length[ok] / (land_px[ok] * meters_per_pixel ** 2)


# ---------------------------------------------------------------- blocks

def _faces(g: StreetGraph) -> list[list[int]]:
    """Vertex cycles of all faces, walked by always taking the next edge in
    angular order around each vertex."""
    inc = [[] for _ in range(g.n_vertices)]
    for a, b in g.edges.tolist():
        inc[a].append(b)
        inc[b].append(a)
    order: list[list[int]] = []
    pos: list[dict[int, int]] = []
    for v, nb in enumerate(inc):
        d = g.vertices[nb] - g.vertices[v] if nb else np.zeros((0, 2))
        ang = np.arctan2(d[:, 1], d[:, 0]) if nb else np.zeros(0)
        srt = [nb[i] for i in np.lexsort((nb, ang))]
        order.append(srt)
        pos.append({w: i for i, w in enumerate(srt)})
    seen: set[tuple[int, int]] = set()
    faces = []
    for a, b in g.edges.tolist():
        for u, v in ((a, b), (b, a)):
            if (u, v) in seen:
                continue
            cyc = []
            x, y = u, v
            while (x, y) not in seen:
                seen.add((x, y))
                cyc.append(x)
                around = order[y]
                z = around[(pos[y][x] - 1) % len(around)]
                x, y = y, z
            faces.append(cyc)
    return faces


def _signed_area(pts: np.ndarray) -> float:
    x, y = pts[:, 0], pts[:, 1]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1)))


def convex_hull(pts: np.ndarray) -> np.ndarray:
    """Andrew's monotone chain; counter-clockwise (in x-right, y-up terms), no repeats."""
    p = np.unique(np.asarray(pts, dtype=np.float64), axis=0)
    if len(p) <= 2:
        return p

    def half(points):
        out: list[np.ndarray] = []
        for q in points:
            while len(out) >= 2:
                o, a = out[-2], out[-1]
                if (a[0] - o[0]) * (q[1] - o[1]) - (a[1] - o[1]) * (q[0] - o[0]) > 0:
                    break
                out.pop()
            out.append(q)
        return out

    lower = half(p)
    upper = half(p[::-1])
    return np.array(lower[:-1] + upper[:-1])


def min_area_rect(pts: np.ndarray) -> tuple[float, float]:
    """(short, long) sides of the minimum-area enclosing rectangle.

    One side of an optimal rectangle is collinear with a hull edge, so every
    hull edge direction is tried. Different rectangles can share the minimum
    area (any triangle has up to three); among those within a relative 1e-9
    the squarest wins, which keeps the result independent of orientation.
    """
    hull = convex_hull(pts)
    if len(hull) == 1:
        return 0.0, 0.0
    if len(hull) == 2:
        return 0.0, float(np.hypot(*(hull[1] - hull[0])))
    cands = []
    nxt = np.roll(hull, -1, axis=0)
    for a, b in zip(hull, nxt):
        d = b - a
        n = math.hypot(d[0], d[1])
        if n == 0.0:
            continue
        u = d / n
        v = np.array([-u[1], u[0]])
        pu = hull @ u
        pv = hull @ v
        w, h = pu.max() - pu.min(), pv.max() - pv.min()
        cands.append((w * h, min(w, h), max(w, h)))
    least = min(c[0] for c in cands)
    tied = [c for c in cands if c[0] <= least * (1 + 1e-9)]
    _, short, long = max(tied, key=lambda c: c[1])
    return short, long


def block_stats(g: StreetGraph) -> np.ndarray:
    """``(blocks, 2)`` array of (short, long) minimum-rectangle sides per interior face.

    In every connected component the face with the largest absolute signed
    area is the outer one and is dropped, as are faces with no area.
    """
    if g.n_edges == 0:
        return np.zeros((0, 2))
    _, label = connected_components(_adjacency01(g.n_vertices, g.edges), directed=False)
    faces = _faces(g)
    areas = [_signed_area(g.vertices[f]) for f in faces]
    outer: dict[int, int] = {}
    for i, f in enumerate(faces):
        c = int(label[f[0]])
        if c not in outer or abs(areas[i]) > abs(areas[outer[c]]):
            outer[c] = i
    drop = set(outer.values())
    out = []
    scale = max(1.0, float(np.abs(g.vertices).max()))
    for i, f in enumerate(faces):
        if i in drop or abs(areas[i]) <= 1e-12 * scale * scale:
            continue
        out.append(min_area_rect(g.vertices[f]))
    return np.array(out, dtype=np.float64).reshape(-1, 2)


# ---------------------------------------------------------------- reports

@dataclass
class Histogram:
    edges: np.ndarray
    mass: np.ndarray  # sums to 1 when there were samples

    def to_dict(self) -> dict:
        return {"edges": self.edges.tolist(), "mass": self.mass.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> Histogram:
        return cls(np.asarray(d["edges"], dtype=np.float64), np.asarray(d["mass"], dtype=np.float64))


def histogram(values: np.ndarray, edges: list[float] | np.ndarray) -> Histogram:
    """Normalised histogram; values outside the range go to the end bins."""
    e = np.asarray(edges, dtype=np.float64)
    v = np.clip(np.asarray(values, dtype=np.float64), e[0], e[-1])
    counts, _ = np.histogram(v, bins=e)
    total = counts.sum()
    return Histogram(e, counts / total if total else counts.astype(np.float64))


def l1_distance(a: Histogram, b: Histogram) -> float:
    if a.edges.shape != b.edges.shape or not np.array_equal(a.edges, b.edges):
        raise BinMismatch("histograms use different bin edges")
    return float(np.abs(a.mass - b.mass).sum())


def summarize(values: np.ndarray) -> dict[str, float]:
    v = np.asarray(values, dtype=np.float64)
    if v.size == 0:
        return {"mean": math.nan, "median": math.nan, "p5": math.nan, "p95": math.nan, "count": 0}
    return {"mean": float(v.mean()), "median": float(np.median(v)), "p5": float(np.percentile(v, 5)),
            "p95": float(np.percentile(v, 95)), "count": int(v.size)}


@dataclass
class MetricsReport:
    samples: dict[str, np.ndarray]
    histograms: dict[str, Histogram]
    summary: dict[str, dict[str, float]]
    blocks: np.ndarray
    transport_pairs: np.ndarray
    density: float | None

    def to_json(self) -> str:
        return json.dumps({"summary": self.summary, "density": self.density,
                           "histograms": {k: h.to_dict() for k, h in self.histograms.items()}}, indent=2)


def compute_metrics(g: StreetGraph, land: np.ndarray | None = None, meters_per_pixel: float | None = None,
                    cfg: MetricsConfig | None = None) -> MetricsReport:
    """All statistics for one graph. Without a land mask, the graph's
    bounding box counts as land for the density figures."""
    cfg = cfg or MetricsConfig()
    if land is None or meters_per_pixel is None:
        meters_per_pixel = meters_per_pixel or 4.777314267823516
        hi = g.vertices.max(axis=0) if g.n_vertices else np.ones(2)
        shape = (max(1, math.ceil(hi[1] / meters_per_pixel)), max(1, math.ceil(hi[0] / meters_per_pixel)))
        land = np.ones(shape, dtype=np.uint8)
    tasks = {
        "circuity": lambda: circuities(g),
        "transport_ratio": lambda: transport_ratio(g, cfg),
        "pagerank": lambda: pagerank(g, cfg.pagerank_k, cfg.tol) * g.n_vertices,
        "pagerank_by_edge": lambda: pagerank_by_edge(g, cfg.edge_pagerank_k, cfg.tol) * g.n_edges,
        "density": lambda: local_densities(g, land, meters_per_pixel, cfg.density_tile_m),
        "blocks": lambda: block_stats(g),
    }
    with ThreadPoolExecutor(max_workers=thread_count()) as pool:
        futures = {k: pool.submit(f) for k, f in tasks.items()}
        results = {k: f.result() for k, f in futures.items()}
    pairs = results.pop("transport_ratio")
    blocks = results.pop("blocks")
    samples = dict(results)
    samples["transport_ratio"] = pairs[:, 2] if len(pairs) else np.zeros(0)
    samples = {k: samples[k] for k in METRICS}
    hists = {k: histogram(samples[k], cfg.bins[k]) for k in METRICS}
    summary = {k: summarize(v) for k, v in samples.items()}
    summary["block_short"] = summarize(blocks[:, 0])
    summary["block_long"] = summarize(blocks[:, 1])
    total = street_density(g, land, meters_per_pixel) if np.count_nonzero(land) else None
    return MetricsReport(samples, hists, summary, blocks, pairs, total)


def _write_csv(path: Path, header: list[str], rows) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    atomic_write_text(path, buf.getvalue())


def save_report(rep: MetricsReport, out_dir: str | Path) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for k in ("circuity", "pagerank", "pagerank_by_edge", "density"):
        _write_csv(out / f"{k}.csv", ["index", k], ((i, repr(float(v))) for i, v in enumerate(rep.samples[k])))
    _write_csv(out / "transport_ratio.csv", ["i", "j", "transport_ratio"],
               ((int(i), int(j), repr(float(r))) for i, j, r in rep.transport_pairs))
    _write_csv(out / "blocks.csv", ["index", "short_m", "long_m"],
               ((i, repr(float(a)), repr(float(b))) for i, (a, b) in enumerate(rep.blocks)))
    atomic_write_text(out / "summary.json", rep.to_json())


def load_histograms(path: str | Path) -> dict[str, Histogram]:
    d = json.loads(Path(path).read_text(encoding="utf-8"))
    return {k: Histogram.from_dict(v) for k, v in d["histograms"].items()}


def compare(a: dict[str, Histogram], b: dict[str, Histogram]) -> dict[str, float]:
    """L1 distance per metric present in both reports."""
    if set(a) != set(b):
        raise BinMismatch(f"reports cover different metrics: {sorted(set(a) ^ set(b))}")
    return {k: l1_distance(a[k], b[k]) for k in sorted(a)}


def histogram_svg(name: str, a: Histogram, b: Histogram, labels: tuple[str, str] = ("A", "B")) -> str:
    """Side-by-side bar chart of two histograms over the same bins."""
    if not np.array_equal(a.edges, b.edges):
        raise BinMismatch(f"{name}: histograms use different bin edges")
    w, h, pad = 480, 240, 30
    nb = len(a.mass)
    top = max(float(a.mass.max(initial=0)), float(b.mass.max(initial=0)), 1e-12)
    bw = (w - 2 * pad) / nb
    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">',
             f'<text x="{pad}" y="18" font-family="sans-serif" font-size="13">{name}</text>']
    for i in range(nb):
        for j, (hist, color) in enumerate(((a, "#d62728"), (b, "#ff7f0e"))):
            bh = (h - 2 * pad) * float(hist.mass[i]) / top
            x = pad + i * bw + j * bw / 2
            parts.append(f'<rect x="{x:.2f}" y="{h - pad - bh:.2f}" width="{bw / 2:.2f}" height="{bh:.2f}" '
                         f'fill="{color}"/>')
    parts.append(f'<text x="{pad}" y="{h - 8}" font-family="sans-serif" font-size="11">'
                 f'{a.edges[0]:g}</text>')
    parts.append(f'<text x="{w - pad}" y="{h - 8}" font-family="sans-serif" font-size="11" '
                 f'text-anchor="end">{a.edges[-1]:g}</text>')
    parts.append(f'<text x="{w - pad}" y="18" font-family="sans-serif" font-size="11" text-anchor="end">'
                 f'<tspan fill="#d62728">{labels[0]}</tspan> / <tspan fill="#ff7f0e">{labels[1]}</tspan></text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def save_comparison(a: dict[str, Histogram], b: dict[str, Histogram], out_dir: str | Path,
                    labels: tuple[str, str] = ("A", "B")) -> dict[str, float]:
    """One CSV and one SVG per metric plus ``distances.json``."""
    dist = compare(a, b)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for k in sorted(a):
        ha, hb = a[k], b[k]
        _write_csv(out / f"{k}.csv", ["bin_lo", "bin_hi", labels[0], labels[1]],
                   ((repr(float(lo)), repr(float(hi)), repr(float(x)), repr(float(y)))
                    for lo, hi, x, y in zip(ha.edges[:-1], ha.edges[1:], ha.mass, hb.mass)))
        atomic_write_text(out / f"{k}.svg", histogram_svg(k, ha, hb, labels))
    atomic_write_text(out / "distances.json", json.dumps(dist, indent=2))
    return dist
