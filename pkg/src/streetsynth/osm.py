"""Overpass JSON ingestion: roads, priority classes and graph building."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import ParseError
from .geo import GeoPoint, Region, project
from .graph import Priority, StreetGraph, compact, from_edge_list

log = logging.getLogger(__name__)

P1_TYPES = frozenset({
    "motorway", "trunk", "primary", "secondary",
    "motorway_link", "trunk_link", "primary_link", "secondary_link",
})
P2_TYPES = frozenset({
    "tertiary", "tertiary_link", "residential", "living_street", "road", "unclassified",
})

# Query used to fetch a bounding box; {bbox} is "south,west,north,east".
OVERPASS_QUERY = """[out:json][timeout:180];
(
  way["highway"]({bbox});
);
(._;>;);
out body;
"""


@dataclass
class Way:
    id: int
    nodes: list[int]
    highway: str


@dataclass
class RoadData:
    nodes: dict[int, GeoPoint] = field(default_factory=dict)
    ways: list[Way] = field(default_factory=list)
    dropped_ways: int = 0


def classify(highway_tag: str) -> Priority:
    if highway_tag in P1_TYPES:
        return Priority.P1
    if highway_tag in P2_TYPES:
        return Priority.P2
    return Priority.EXCLUDED


def _byte_offset(text: str | bytes, char_pos: int) -> int:
    if isinstance(text, bytes):
        return char_pos
    return len(text[:char_pos].encode("utf-8"))


def parse_overpass(text: str | bytes) -> RoadData:
    """Parse an Overpass ``[out:json]`` document.

    Only ways carrying a ``highway`` tag are kept. Ways with fewer than two
    nodes or referencing a node absent from the document are dropped and
    counted in ``dropped_ways``.
    """
    if isinstance(text, bytes):
        try:
            decoded = text.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise ParseError(f"invalid UTF-8: {exc.reason}", exc.start) from exc
    else:
        decoded = text
    try:
        doc = json.loads(decoded)
    except json.JSONDecodeError as exc:
        raise ParseError(f"malformed JSON: {exc.msg}", _byte_offset(decoded, exc.pos)) from exc
    if not isinstance(doc, dict) or not isinstance(doc.get("elements"), list):
        raise ParseError("expected an object with an 'elements' array")

    data = RoadData()
    raw_ways = []
    for k, el in enumerate(doc["elements"]):
        if not isinstance(el, dict):
            raise ParseError(f"element {k} is not an object")
        kind = el.get("type")
        try:
            if kind == "node":
                data.nodes[int(el["id"])] = GeoPoint(float(el["lat"]), float(el["lon"]))
            elif kind == "way":
                tags = el.get("tags") or {}
                if "highway" in tags:
                    raw_ways.append(Way(int(el["id"]), [int(n) for n in el["nodes"]], str(tags["highway"])))
        except (KeyError, TypeError, ValueError) as exc:
            raise ParseError(f"element {k} ({kind}) is malformed: {exc!r}") from exc

    for way in raw_ways:
        if len(way.nodes) < 2 or any(n not in data.nodes for n in way.nodes):
            data.dropped_ways += 1
            continue
        data.ways.append(way)
    if data.dropped_ways:
        log.warning("dropped %d ways with missing nodes or fewer than two nodes", data.dropped_ways)
    return data


def _clip(p: np.ndarray, q: np.ndarray, w: float, h: float) -> tuple[float, float] | None:
    """Liang-Barsky clip of segment p->q to [0,w]x[0,h]; returns (t0, t1) or None."""
    t0, t1 = 0.0, 1.0
    d = q - p
    for pk, qk in ((-d[0], p[0]), (d[0], w - p[0]), (-d[1], p[1]), (d[1], h - p[1])):
        if pk == 0.0:
            if qk < 0.0:
                return None
            continue
        r = qk / pk
        if pk < 0.0:
            if r > t1:
                return None
            t0 = max(t0, r)
        else:
            if r < t0:
                return None
            t1 = min(t1, r)
    if t1 - t0 <= 0.0:
        return None
    return t0, t1


def build_graph(d: RoadData, region: Region) -> StreetGraph:
    """Turn classified ways into a graph in region-local meters.

    Every OSM node used by a retained way becomes a vertex. Segments crossing
    the region border are clipped; each crossing point becomes a new vertex
    shared by all ways using that segment.
    """
    w, h = region.width_m, region.height_m
    ids: dict[object, int] = {}
    coords: list[tuple[float, float]] = []

    def vertex(key: object, xy: tuple[float, float]) -> int:
        idx = ids.get(key)
        if idx is None:
            idx = ids[key] = len(coords)
            coords.append(xy)
        return idx

    local: dict[int, np.ndarray] = {}

    def pos(node_id: int) -> np.ndarray:
        p = local.get(node_id)
        if p is None:
            p = local[node_id] = np.array(region.to_local(*project(d.nodes[node_id])))
        return p

    edges: list[tuple[int, int]] = []
    prios: list[int] = []
    for way in d.ways:
        prio = classify(way.highway)
        if prio is Priority.EXCLUDED:
            continue
        for a, b in zip(way.nodes[:-1], way.nodes[1:]):
            if a == b:
                continue
            pa, pb = pos(a), pos(b)
            clipped = _clip(pa, pb, w, h)
            if clipped is None:
                continue
            t0, t1 = clipped
            seg_key = (min(a, b), max(a, b))
            if t0 == 0.0:
                ia = vertex(a, tuple(pa))
            else:
                xy = pa + t0 * (pb - pa)
                ia = vertex(("clip", seg_key, round(float(xy[0]), 6), round(float(xy[1]), 6)), tuple(xy))
            if t1 == 1.0:
                ib = vertex(b, tuple(pb))
            else:
                xy = pa + t1 * (pb - pa)
                ib = vertex(("clip", seg_key, round(float(xy[0]), 6), round(float(xy[1]), 6)), tuple(xy))
            if ia != ib:
                edges.append((ia, ib))
                prios.append(int(prio))
    g = from_edge_list(np.array(coords, dtype=np.float64).reshape(-1, 2),
                       np.array(edges, dtype=np.int64).reshape(-1, 2),
                       np.array(prios, dtype=np.int8), region.to_dict())
    return compact(g)
