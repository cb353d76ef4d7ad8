"""Embedded street graphs and their JSON file format."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import IntEnum
from pathlib import Path

import numpy as np

from ._io import atomic_write_text
from .errors import FormatError, GraphInvariantError


class Priority(IntEnum):
    EXCLUDED = 0
    P1 = 1
    P2 = 2

    @classmethod
    def parse(cls, name: str) -> Priority:
        try:
            return cls[name]
        except KeyError:
            raise ValueError(f"unknown priority {name!r}") from None


@dataclass
class StreetGraph:
    """Undirected graph with vertices in meters and a priority per edge.

    ``edges`` rows are ``(i, j)`` with ``i < j``; ``priorities`` holds the
    matching :class:`Priority` values.
    """

    vertices: np.ndarray = field(default_factory=lambda: np.zeros((0, 2)))
    edges: np.ndarray = field(default_factory=lambda: np.zeros((0, 2), dtype=np.int64))
    priorities: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int8))
    frame: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        self.vertices = np.asarray(self.vertices, dtype=np.float64).reshape(-1, 2)
        self.edges = np.asarray(self.edges, dtype=np.int64).reshape(-1, 2)
        self.priorities = np.asarray(self.priorities, dtype=np.int8).reshape(-1)

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    def edge_lengths(self) -> np.ndarray:
        if not self.n_edges:
            return np.zeros(0)
        d = self.vertices[self.edges[:, 1]] - self.vertices[self.edges[:, 0]]
        return np.hypot(d[:, 0], d[:, 1])

    def total_length(self) -> float:
        return float(self.edge_lengths().sum())

    def degrees(self) -> np.ndarray:
        return np.bincount(self.edges.ravel(), minlength=self.n_vertices)

    def adjacency(self) -> list[list[int]]:
        adj: list[list[int]] = [[] for _ in range(self.n_vertices)]
        for i, j in self.edges.tolist():
            adj[i].append(j)
            adj[j].append(i)
        return adj

    def select(self, priorities: set[Priority] | None) -> StreetGraph:
        """Subgraph with the edges of the given priorities; unused vertices dropped."""
        if priorities is None:
            return self
        keep = np.isin(self.priorities, [int(p) for p in priorities])
        return compact(StreetGraph(self.vertices, self.edges[keep], self.priorities[keep], dict(self.frame)))

    def check(self) -> None:
        """Raise :class:`GraphInvariantError` unless all graph invariants hold."""
        n = self.n_vertices
        if not np.all(np.isfinite(self.vertices)):
            raise GraphInvariantError("non-finite vertex coordinate")
        if len(self.priorities) != self.n_edges:
            raise GraphInvariantError("priority count differs from edge count")
        if self.n_edges:
            i, j = self.edges[:, 0], self.edges[:, 1]
            if np.any(i < 0) or np.any(j >= n):
                raise GraphInvariantError("edge index out of range")
            if np.any(i == j):
                raise GraphInvariantError("self-loop")
            if np.any(i > j):
                raise GraphInvariantError("edge not stored as (i, j) with i < j")
            if len(np.unique(self.edges, axis=0)) != self.n_edges:
                raise GraphInvariantError("duplicate edge")
            if not np.all(np.isin(self.priorities, (Priority.P1, Priority.P2))):
                raise GraphInvariantError("edge priority must be P1 or P2")

    def to_json(self) -> str:
        doc = {
            "frame": self.frame,
            "vertices": [[float(x), float(y)] for x, y in self.vertices.tolist()],
            "edges": [[int(i), int(j), Priority(int(p)).name]
                      for (i, j), p in zip(self.edges.tolist(), self.priorities.tolist())],
        }
        return json.dumps(doc, separators=(",", ":"))

    @classmethod
    def from_json(cls, text: str) -> StreetGraph:
        try:
            doc = json.loads(text)
            vertices = np.array(doc["vertices"], dtype=np.float64).reshape(-1, 2)
            edges = [(int(e[0]), int(e[1])) for e in doc["edges"]]
            prios = [Priority.parse(e[2]) for e in doc["edges"]]
        except (KeyError, TypeError, IndexError, ValueError) as exc:
            raise FormatError(f"bad graph JSON: {exc}") from exc
        g = cls(vertices, np.array(edges, dtype=np.int64).reshape(-1, 2),
                np.array(prios, dtype=np.int8), doc.get("frame") or {})
        g.check()
        return g


def save_graph(g: StreetGraph, path: str | Path) -> None:
    atomic_write_text(path, g.to_json())


def load_graph(path: str | Path) -> StreetGraph:
    return StreetGraph.from_json(Path(path).read_text(encoding="utf-8"))


def from_edge_list(vertices, edges, priorities=None, frame: dict | None = None) -> StreetGraph:
    """Build a valid graph from loosely ordered edges.

    Self-loops are dropped and duplicate edges collapse, keeping the
    higher priority (P1 over P2). Vertex indices are kept as given.
    """
    vertices = np.asarray(vertices, dtype=np.float64).reshape(-1, 2)
    edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
    if priorities is None:
        priorities = np.full(len(edges), Priority.P2, dtype=np.int8)
    best: dict[tuple[int, int], int] = {}
    for (a, b), p in zip(edges.tolist(), np.asarray(priorities).tolist()):
        if a == b:
            continue
        key = (a, b) if a < b else (b, a)
        old = best.get(key)
        best[key] = p if old is None else min(old, p)
    keys = sorted(best)
    return StreetGraph(vertices, np.array(keys, dtype=np.int64).reshape(-1, 2),
                       np.array([best[k] for k in keys], dtype=np.int8), dict(frame or {}))


def compact(g: StreetGraph) -> StreetGraph:
    """Drop vertices without incident edges and renumber the rest in order."""
    used = np.zeros(g.n_vertices, dtype=bool)
    used[g.edges.ravel()] = True
    remap = np.cumsum(used) - 1
    return StreetGraph(g.vertices[used], remap[g.edges] if g.n_edges else g.edges,
                       g.priorities.copy(), dict(g.frame))


def merge(a: StreetGraph, b: StreetGraph) -> StreetGraph:
    """Disjoint union of two graphs sharing a frame."""
    n = a.n_vertices
    return from_edge_list(np.vstack([a.vertices, b.vertices]),
                          np.vstack([a.edges, b.edges + n]),
                          np.concatenate([a.priorities, b.priorities]), a.frame or b.frame)
