from __future__ import annotations

import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from helpers import dense_pagerank, grid_graph, random_connected

from streetsynth.errors import BinMismatch, ClosedSegment, InsufficientConnectivity
from streetsynth.graph import from_edge_list
from streetsynth.metrics import (METRICS, MetricsConfig, block_stats, circuity, compute_metrics, edge_graph,
                                 histogram, l1_distance, load_histograms, pagerank, pagerank_by_edge,
                                 save_comparison, save_report, segments, transport_ratio)


def dense_adjacency(g):
    a = np.zeros((g.n_vertices, g.n_vertices))
    a[g.edges[:, 0], g.edges[:, 1]] = a[g.edges[:, 1], g.edges[:, 0]] = 1
    return a


@pytest.mark.parametrize("k", [0.85, 0.95])
@pytest.mark.parametrize("seed", range(5))
def test_pagerank_matches_dense_solve(seed, k):
    g = random_connected(seed)
    pr = pagerank(g, k)
    assert np.abs(pr - dense_pagerank(dense_adjacency(g), k)).max() <= 1e-8
    assert abs(pr.sum() - 1) <= 1e-9


def test_edge_graph_is_line_graph():
    g = random_connected(3)
    eg = edge_graph(g).toarray()
    e = g.edges
    expect = np.array([[float(i != j and len(set(e[i]) & set(e[j])) > 0) for j in range(len(e))]
                       for i in range(len(e))])
    assert np.array_equal(eg, expect)
    pr = pagerank_by_edge(g, 0.95)
    assert np.abs(pr - dense_pagerank(expect, 0.95)).max() <= 1e-8


def test_pagerank_star_centre_dominates():
    g = from_edge_list([[0, 0], [1, 0], [0, 1], [-1, 0], [0, -1]], [[0, 1], [0, 2], [0, 3], [0, 4]])
    pr = pagerank(g, 0.85)
    assert pr[0] > pr[1] and np.allclose(pr[1:], pr[1])


def floyd_warshall(g):
    n = g.n_vertices
    d = np.full((n, n), np.inf)
    np.fill_diagonal(d, 0)
    for (a, b), w in zip(g.edges, g.edge_lengths()):
        d[a, b] = d[b, a] = min(d[a, b], w)
    for m in range(n):
        d = np.minimum(d, d[:, m:m + 1] + d[m:m + 1, :])
    return d


def test_transport_ratio_against_brute_force():
    g = random_connected(7, n=30)
    pairs = transport_ratio(g, MetricsConfig(transport_pairs=500, seed=1))
    assert pairs.shape == (500, 3)
    d = floyd_warshall(g)
    i, j = pairs[:, 0].astype(int), pairs[:, 1].astype(int)
    euclid = np.hypot(*(g.vertices[i] - g.vertices[j]).T)
    assert np.allclose(pairs[:, 2], d[i, j] / euclid, rtol=1e-12)
    assert (pairs[:, 2] >= 1 - 1e-12).all()


def test_transport_ratio_is_seeded():
    g = random_connected(2)
    a = transport_ratio(g, MetricsConfig(seed=5))
    assert np.array_equal(a, transport_ratio(g, MetricsConfig(seed=5)))


def test_transport_ratio_needs_edges():
    g = from_edge_list([[0, 0], [1, 1]], np.zeros((0, 2), int))
    with pytest.raises(InsufficientConnectivity):
        transport_ratio(g)


def test_semicircle_circuity():
    t = np.linspace(0, np.pi, 2001)
    pts = np.stack([np.cos(t), np.sin(t)], axis=1) * 300.0
    g = from_edge_list(pts, [[i, i + 1] for i in range(len(t) - 1)])
    segs = segments(g)
    assert len(segs) == 1
    assert circuity(g, segs[0]) == pytest.approx(np.pi / 2, abs=0.01)


def test_closed_segment_raises():
    g = from_edge_list([[0, 0], [1, 0], [1, 1], [0, 1]], [[0, 1], [1, 2], [2, 3], [3, 0]])
    segs = segments(g)
    assert len(segs) == 1 and segs[0][0] == segs[0][-1] == 0
    with pytest.raises(ClosedSegment):
        circuity(g, segs[0])


@settings(max_examples=40)
@given(st.integers(0, 10_000), st.integers(2, 25), st.integers(0, 15))
def test_segments_partition_edges(seed, n, extra):
    g = random_connected(seed, n, min(extra, n * (n - 1) // 2 - (n - 1)))
    deg = g.degrees()
    seen = []
    for s in segments(g):
        assert all(deg[v] == 2 for v in s[1:-1])
        seen += [tuple(sorted(p)) for p in zip(s[:-1], s[1:])]
    assert sorted(seen) == sorted(map(tuple, np.sort(g.edges, axis=1).tolist()))


def test_block_stats_on_rectangles():
    g = from_edge_list([[0, 0], [200, 0], [400, 0], [0, 100], [200, 100], [400, 100]],
                       [[0, 1], [1, 2], [3, 4], [4, 5], [0, 3], [1, 4], [2, 5]])
    b = block_stats(g)
    assert b.shape == (2, 2)
    assert np.allclose(b, [[100, 200], [100, 200]])
    assert block_stats(grid_graph(4)).shape == (9, 2)


@pytest.mark.parametrize("angle", [0.3, 1.1, 2.9])
def test_block_stats_rotation_invariant(angle):
    g = grid_graph(5, jitter=20.0, seed=3)
    c, s = np.cos(angle), np.sin(angle)
    rot = from_edge_list(g.vertices @ np.array([[c, s], [-s, c]]) + 500.0, g.edges)
    a, b = block_stats(g), block_stats(rot)
    order = lambda x: x[np.lexsort(x.T[::-1])]
    assert np.abs(order(a) - order(b)).max() <= 1e-9


def test_histogram_clips_and_normalises():
    h = histogram(np.array([-5.0, 0.5, 1.5, 99.0]), [0, 1, 2])
    assert h.mass.tolist() == [0.5, 0.5]
    assert l1_distance(h, h) == 0
    other = histogram(np.array([1.5]), [0, 1, 2])
    assert l1_distance(h, other) == pytest.approx(1.0)
    with pytest.raises(BinMismatch):
        l1_distance(h, histogram(np.array([1.0]), [0, 1, 3]))


def test_report_and_comparison(tmp_path):
    a = compute_metrics(grid_graph(6, jitter=10.0, seed=1))
    b = compute_metrics(grid_graph(6, jitter=25.0, seed=2))
    assert set(a.histograms) == set(METRICS)
    for h in a.histograms.values():
        assert h.mass.sum() == pytest.approx(1.0)
    save_report(a, tmp_path / "a")
    summary = json.loads((tmp_path / "a" / "summary.json").read_text())
    assert summary["summary"]["circuity"]["count"] == len(a.samples["circuity"])
    ha = load_histograms(tmp_path / "a" / "summary.json")
    dist = save_comparison(ha, b.histograms, tmp_path / "cmp")
    assert set(dist) == set(METRICS)
    assert len(list((tmp_path / "cmp").glob("*.csv"))) == 5
    assert len(list((tmp_path / "cmp").glob("*.svg"))) == 5
    assert save_comparison(ha, ha, tmp_path / "same") == {k: 0.0 for k in METRICS}
