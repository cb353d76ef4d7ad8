"""Oracles and builders shared by the unit and acceptance tests."""

from __future__ import annotations

import numpy as np
from scipy.spatial import cKDTree

from streetsynth.extract import thin, trace
from streetsynth.graph import from_edge_list
from streetsynth.index_model.config import ModelConfig
from streetsynth.index_model.model import Params, forward, init_params, loss, loss_and_grads
from streetsynth.raster import distance_field, rasterize, threshold


def tiny_config(**kw) -> ModelConfig:
    base = dict(K=5, embed_dim=8, heads=2, encoder_layers=1, decoder_layers=1, window=3, ffn_dim=12,
                cell_ctx_dim=4, pix_ctx_dim=6, density_scale=3.0, seed=1)
    base.update(kw)
    return ModelConfig(**base)


def random_problem(cfg: ModelConfig, n: int = 6, batch: int = 2, seed: int = 0):
    """Float64 parameters with every tensor perturbed (the default zero head
    would hide most gradients) plus one batch that includes a PAD target."""
    rng = np.random.default_rng(seed)
    p = init_params(cfg, np.float64)
    p = {k: v + rng.normal(0, 0.3, v.shape) for k, v in p.items()}
    tokens = rng.integers(0, cfg.K, size=(batch, n))
    tokens[0, -1] = cfg.pad
    cell = rng.normal(0, 0.2, size=(batch, n, cfg.cell_ctx_dim))
    pix = rng.random((batch, n, cfg.pix_ctx_dim))
    return p, tokens, cell, pix


def batch_loss(p: Params, cfg: ModelConfig, tokens, cell, pix) -> float:
    return loss(forward(p, cfg, tokens, cell, pix), tokens, cfg.pad)


def gradient_errors(cfg: ModelConfig, names=None, h: float = 1e-5, seed: int = 0) -> dict[str, float]:
    """Relative error ``|g - g_fd| / max(|g|, |g_fd|)`` (2-norms) per tensor,
    with ``g_fd`` from central differences over every entry."""
    p, tokens, cell, pix = random_problem(cfg, seed=seed)
    _, grads = loss_and_grads(p, cfg, tokens, cell, pix)
    out = {}
    for name in names or list(p):
        arr = p[name]
        fd = np.zeros_like(arr)
        flat, gflat = arr.reshape(-1), fd.reshape(-1)
        for i in range(flat.size):
            old = flat[i]
            flat[i] = old + h
            up = batch_loss(p, cfg, tokens, cell, pix)
            flat[i] = old - h
            down = batch_loss(p, cfg, tokens, cell, pix)
            flat[i] = old
            gflat[i] = (up - down) / (2 * h)
        a, b = grads[name], fd
        scale = max(np.linalg.norm(a), np.linalg.norm(b))
        out[name] = 0.0 if scale == 0 else float(np.linalg.norm(a - b) / scale)
    return out


def causality_violations(cfg: ModelConfig, n: int = 6, seed: int = 0) -> list[tuple[int, int]]:
    """Pairs ``(j, i)`` where changing target token ``j`` altered the logits at
    a position ``i <= j``, or failed to alter position ``j + 1``."""
    p, tokens, cell, pix = random_problem(cfg, n=n, batch=1, seed=seed)
    tokens[0, -1] = 0
    base = forward(p, cfg, tokens, cell, pix)
    bad = []
    for j in range(n):
        t2 = tokens.copy()
        t2[0, j] = (t2[0, j] + 1) % cfg.K
        out = forward(p, cfg, t2, cell, pix)
        for i in range(n):
            changed = not np.array_equal(out[0, i], base[0, i])
            if (i <= j and changed) or (i == j + 1 and not changed):
                bad.append((j, i))
    return bad


# ---------------------------------------------------------------- extraction round trip

def jittered_grid_graph(rng: np.random.Generator, pixel_m: float, n: int = 5, spacing_px: float = 44.0,
                        jitter_px: float = 6.0, keep: float = 0.7):
    """Planar test graph: an ``n`` x ``n`` jittered lattice with random edge
    dropout. Non-incident edges stay at least ~30 px apart."""

    pts = {(i, j): np.array([20 + j * spacing_px + rng.uniform(-jitter_px, jitter_px),
                             20 + i * spacing_px + rng.uniform(-jitter_px, jitter_px)])
           for i in range(n) for j in range(n)}
    edges = []
    for i in range(n):
        for j in range(n):
            if j + 1 < n and rng.random() < keep:
                edges.append(((i, j), (i, j + 1)))
            if i + 1 < n and rng.random() < keep:
                edges.append(((i, j), (i + 1, j)))
    keys = sorted({k for e in edges for k in e})
    idx = {k: t for t, k in enumerate(keys)}
    verts = np.array([pts[k] for k in keys]) * pixel_m
    e = np.array([(idx[a], idx[b]) for a, b in edges]).reshape(-1, 2)
    return from_edge_list(verts, e, np.full(len(e), 2, np.int8))


def topology(g) -> tuple[list[int], list[tuple[int, int]]]:
    """Vertices of degree != 2 and the chains between them (degree-2 runs contracted)."""
    deg = g.degrees()
    adj = g.adjacency()
    nodes = sorted(np.flatnonzero(deg != 2).tolist())
    node_set = set(nodes)
    seen = set()
    chains = []
    for u in nodes:
        for w in adj[u]:
            if (u, w) in seen:
                continue
            seen.add((u, w))
            prev, cur = u, w
            while cur not in node_set:
                prev, cur = cur, next(x for x in adj[cur] if x != prev)
            seen.add((cur, prev))
            chains.append((u, cur))
    return nodes, chains


def _sample_edges(g, step: float) -> np.ndarray:
    out = [g.vertices]
    for i, j in g.edges.tolist():
        a, b = g.vertices[i], g.vertices[j]
        k = max(1, int(np.ceil(np.hypot(*(b - a)) / step)))
        t = np.linspace(0, 1, k + 1)[:, None]
        out.append(a + t * (b - a))
    return np.concatenate(out)


def hausdorff(a: np.ndarray, b: np.ndarray) -> float:

    if not len(a) or not len(b):
        return float("inf")
    return float(max(cKDTree(b).query(a)[0].max(), cKDTree(a).query(b)[0].max()))


def round_trip(g, region, tau: float):
    """Rasterise, threshold, thin and trace ``g``; returns
    ``(vertex_hausdorff_px, same_adjacency, curve_hausdorff_px)``."""

    pm = region.pixel_m
    df = distance_field(rasterize(g, region))
    t = trace(thin(threshold(df, tau)), pm, dist_px=df * 16.0, band_px=tau * 16.0)
    na, ca = topology(g)
    nb, cb = topology(t)
    a, b = g.vertices[na] / pm, t.vertices[nb] / pm
    vh = hausdorff(a, b)
    curve = hausdorff(_sample_edges(g, pm / 4) / pm, _sample_edges(t, pm / 4) / pm)
    if len(a) != len(b):
        return vh, False, curve
    d = np.hypot(*(a[:, None] - b[None]).transpose(2, 0, 1))
    match = {u: nb[k] for u, k in zip(na, d.argmin(axis=1))}
    if len(set(match.values())) != len(nb):
        return vh, False, curve
    want = sorted(tuple(sorted((match[u], match[v]))) for u, v in ca)
    got = sorted(tuple(sorted(x)) for x in cb)
    return vh, want == got, curve


# ---------------------------------------------------------------- metric graphs

def random_connected(seed: int, n: int = 20, extra: int = 10):
    rng = np.random.default_rng(seed)
    pts = rng.uniform(0, 1000, (n, 2))
    edges = {tuple(sorted((i, int(rng.integers(i))))) for i in range(1, n)}
    while len(edges) < n - 1 + extra:
        a, b = (int(x) for x in rng.integers(n, size=2))
        if a != b:
            edges.add((min(a, b), max(a, b)))
    return from_edge_list(pts, sorted(edges))


def dense_pagerank(adj: np.ndarray, k: float) -> np.ndarray:
    n = len(adj)
    p = adj / adj.sum(axis=1, keepdims=True)
    return np.linalg.solve(np.eye(n) - k * p.T, np.full(n, (1 - k) / n))


def grid_graph(n=4, spacing=100.0, jitter=0.0, seed=0):
    rng = np.random.default_rng(seed)
    xs, ys = np.meshgrid(np.arange(n) * spacing, np.arange(n) * spacing)
    pts = np.stack([xs.ravel(), ys.ravel()], axis=1) + rng.uniform(-jitter, jitter, (n * n, 2))
    idx = np.arange(n * n).reshape(n, n)
    edges = np.concatenate([np.stack([idx[:, :-1].ravel(), idx[:, 1:].ravel()], 1),
                            np.stack([idx[:-1].ravel(), idx[1:].ravel()], 1)])
    return from_edge_list(pts, edges)
