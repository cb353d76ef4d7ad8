"""Distance field to vector graph: threshold, thin, trace, simplify, filter."""

from __future__ import annotations

import numpy as np
from numba import njit
from scipy import ndimage
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components

from .errors import NotThin
from .graph import Priority, StreetGraph, compact, from_edge_list
from .raster import threshold

_EIGHT = np.ones((3, 3), dtype=bool)
# ring order N, NE, E, SE, S, SW, W, NW
_DR = np.array([-1, -1, 0, 1, 1, 1, 0, -1])
_DC = np.array([0, 1, 1, 1, 0, -1, -1, -1])


@njit(cache=True)
def _ring(img, r, c, out):
    h, w = img.shape
    for k in range(8):
        rr = r + _DR[k]
        cc = c + _DC[k]
        out[k] = 1 if (0 <= rr < h and 0 <= cc < w and img[rr, cc]) else 0


@njit(cache=True)
def _count_and_transitions(p):
    b = 0
    a = 0
    for k in range(8):
        b += p[k]
        if p[k] == 0 and p[(k + 1) % 8] == 1:
            a += 1
    return b, a


@njit(cache=True)
def _zs_removable(p, step):
    b, a = _count_and_transitions(p)
    if b < 2 or b > 6 or a != 1:
        return False
    n, e, s, w = p[0], p[2], p[4], p[6]
    if step == 0:
        return n * e * s == 0 and e * s * w == 0
    return n * e * w == 0 and n * s * w == 0


@njit(cache=True)
def _simple(p):
    """8-connected foreground / 4-connected background simple-point test (Yokoi number 1)."""
    x = np.empty(9, dtype=np.int64)
    for k in range(8):
        x[k] = 1 - p[k]
    x[8] = x[0]
    total = 0
    for k in (0, 2, 4, 6):
        total += x[k] - x[k] * x[k + 1] * x[(k + 2) % 8]
    return total == 1


@njit(cache=True)
def _zs_subiteration(img, step):
    h, w = img.shape
    p = np.zeros(8, dtype=np.int64)
    marks = []
    for r in range(h):
        for c in range(w):
            if img[r, c]:
                _ring(img, r, c, p)
                if _zs_removable(p, step):
                    marks.append((r, c))
    changed = 0
    # marked pixels are removed one by one, re-validated against the current
    # image so that simultaneous deletions cannot break connectivity
    for r, c in marks:
        _ring(img, r, c, p)
        b, a = _count_and_transitions(p)
        if 2 <= b <= 6 and a == 1:
            img[r, c] = 0
            changed += 1
    return changed


@njit(cache=True)
def _prune_staircases(img):
    h, w = img.shape
    p = np.zeros(8, dtype=np.int64)
    changed = 0
    for r in range(h):
        for c in range(w):
            if img[r, c]:
                _ring(img, r, c, p)
                b = 0
                for k in range(8):
                    b += p[k]
                four = p[0] + p[2] + p[4] + p[6]
                if b >= 2 and four == 2 and _simple(p):
                    img[r, c] = 0
                    changed += 1
    return changed


@njit(cache=True)
def _thin(img):
    while True:
        while _zs_subiteration(img, 0) + _zs_subiteration(img, 1):
            pass
        # staircase corners are only pruned from a converged skeleton;
        # earlier they would erode thick bands from one side
        if _prune_staircases(img) == 0:
            return img


def thin(mask: np.ndarray) -> np.ndarray:
    """Zhang-Suen thinning to a one-pixel-wide 8-connected skeleton.

    Pixels marked in a sub-iteration are deleted one at a time after
    re-checking the deletion test on the current image, which keeps every
    8-connected component alive (plain parallel deletion can erase a 2 x 2
    block). A final pass removes redundant staircase corners so that every
    interior skeleton pixel has exactly two neighbours. The result is a fixed
    point: thinning it again changes nothing.
    """
    img = (np.asarray(mask) != 0).astype(np.uint8)
    return _thin(np.ascontiguousarray(img))


def neighbour_counts(skel: np.ndarray) -> np.ndarray:
    s = (np.asarray(skel) != 0).astype(np.int32)
    k = np.ones((3, 3), dtype=np.int32)
    k[1, 1] = 0
    return ndimage.convolve(s, k, mode="constant") * s


def is_thin(skel: np.ndarray) -> bool:
    """True when thinning would leave the mask unchanged."""
    s = (np.asarray(skel) != 0).astype(np.uint8)
    return bool(np.array_equal(thin(s), s))


def douglas_peucker(points: np.ndarray, eps: float) -> np.ndarray:
    """Indices of the points kept by Douglas-Peucker simplification."""
    n = len(points)
    if n <= 2:
        return np.arange(n)
    keep = np.zeros(n, dtype=bool)
    keep[0] = keep[-1] = True
    stack = [(0, n - 1)]
    while stack:
        i, j = stack.pop()
        if j <= i + 1:
            continue
        a, b = points[i], points[j]
        seg = points[i + 1:j]
        d = b - a
        norm = np.hypot(d[0], d[1])
        if norm == 0.0:
            dist = np.hypot(seg[:, 0] - a[0], seg[:, 1] - a[1])
        else:
            dist = np.abs(d[0] * (seg[:, 1] - a[1]) - d[1] * (seg[:, 0] - a[0])) / norm
        k = int(np.argmax(dist))
        if dist[k] > eps:
            m = i + 1 + k
            keep[m] = True
            stack.append((i, m))
            stack.append((m, j))
    return np.flatnonzero(keep)


def _neighbours(pix: tuple[int, int], on: set) -> list[tuple[int, int]]:
    r, c = pix
    return [(r + dr, c + dc) for dr, dc in zip(_DR.tolist(), _DC.tolist()) if (r + dr, c + dc) in on]


def _fit_line(pix: list[tuple[int, int]]) -> tuple[np.ndarray, np.ndarray]:
    pts = np.array([(c, r) for r, c in pix], dtype=np.float64)
    mu = pts.mean(axis=0)
    _, _, vt = np.linalg.svd(pts - mu, full_matrices=False)
    return mu, vt[0]


def _refine_junction(arms: list[list[tuple[int, int]]], start: np.ndarray, lo: int = 2, hi: int = 14,
                     max_shift: float = 4.0) -> np.ndarray:
    """Least-squares intersection of straight lines fitted to the arms of a junction."""
    a = np.zeros((2, 2))
    b = np.zeros(2)
    for arm in arms:
        seg = arm[lo:hi]
        if len(seg) < 4:
            continue
        mu, d = _fit_line(seg)
        proj = np.eye(2) - np.outer(d, d)
        a += proj
        b += proj @ mu
    w = np.linalg.eigvalsh(a)
    if w[0] < 0.1 * w[1] or w[1] == 0.0:
        return start
    x = np.linalg.solve(a, b)
    return x if np.hypot(*(x - start)) <= max_shift else start


def _bilinear(f: np.ndarray, x: float, y: float) -> float:
    h, w = f.shape
    x = min(max(x, 0.0), w - 1.0)
    y = min(max(y, 0.0), h - 1.0)
    c0, r0 = int(x), int(y)
    c1, r1 = min(c0 + 1, w - 1), min(r0 + 1, h - 1)
    fx, fy = x - c0, y - r0
    top = f[r0, c0] * (1 - fx) + f[r0, c1] * fx
    bot = f[r1, c0] * (1 - fx) + f[r1, c1] * fx
    return float(top * (1 - fy) + bot * fy)


def _refine_endpoint(arm: list[tuple[int, int]], dist_px: np.ndarray | None, band_px: float,
                     span: int = 10) -> np.ndarray:
    """Snap an endpoint onto its arm's fitted line; given the distance field,
    place it ``band_px`` short of where the field crosses ``band_px`` beyond
    the end, which undoes the erosion of line ends by thinning."""
    end = np.array([arm[0][1], arm[0][0]], dtype=np.float64)
    seg = arm[:span]
    if len(seg) < 4:
        return end
    mu, d = _fit_line(seg)
    if np.dot(end - mu, d) < 0:
        d = -d
    e = mu + np.dot(end - mu, d) * d
    if dist_px is None or band_px <= 0:
        return e
    step = 0.25
    # start a little inside the line, since the skeleton may end on the band edge
    start = -(band_px + 2.0)
    prev_t, prev_v = start, _bilinear(dist_px, *(e + start * d))
    if prev_v >= band_px:
        return e
    for t in np.arange(start + step, band_px + 4.0 + step, step):
        x = e + t * d
        v = _bilinear(dist_px, *x)
        if v >= band_px:
            cross = prev_t + step * (band_px - prev_v) / (v - prev_v)
            return e + (cross - band_px) * d
        prev_t, prev_v = t, v
    return e


def _refine_corners(seg: np.ndarray, keep: np.ndarray, gap: int = 6) -> list[np.ndarray]:
    """Interior polyline vertices with sharp bends moved onto the intersection
    of the straight runs either side.

    Thinning cuts a sharp bend with a short diagonal, which simplification
    keeps as two or three vertices a pixel or two apart. Vertices closer than
    ``gap`` path pixels are grouped and replaced by one intersection point
    when the two lines are well conditioned; otherwise they are kept.
    """
    inner = [int(k) for k in keep[1:-1]]
    groups: list[list[int]] = []
    for k in inner:
        if groups and k - groups[-1][-1] <= gap:
            groups[-1].append(k)
        else:
            groups.append([k])
    out: list[np.ndarray] = []
    pos = {k: i for i, k in enumerate(keep.tolist())}
    for grp in groups:
        lo_k = int(keep[pos[grp[0]] - 1])
        hi_k = int(keep[pos[grp[-1]] + 1])
        before = [(y, x) for x, y in seg[lo_k:grp[0] + 1][::-1]]
        after = [(y, x) for x, y in seg[grp[-1]:hi_k + 1]]
        start = seg[grp].mean(axis=0)
        x = _refine_junction([before, after], start, lo=1)
        if x is start and len(grp) > 1:
            out.extend(seg[k] for k in grp)
        else:
            out.append(x)
    return out


def trace(skel: np.ndarray, meters_per_pixel: float, eps_px: float = 1.0,
          dist_px: np.ndarray | None = None, band_px: float = 0.0, refine: bool = True) -> StreetGraph:
    """Vector graph from a one-pixel-wide skeleton.

    Junctions (pixels with three or more neighbours, 8-connected clusters
    merged into one vertex) and endpoints become vertices; chains of
    two-neighbour pixels become polylines, simplified with Douglas-Peucker at
    ``eps_px``. Closed loops without any junction get an anchor vertex at
    their first pixel in row-major order.

    With ``refine`` the junction vertex is placed at the least-squares
    intersection of lines fitted to its arms (thinning bends arms near a
    junction), falling back to the cluster centroid. Endpoints are snapped
    onto their arm's line; when the distance field (in pixels) the skeleton
    came from is given, they are also moved to where the field crosses the
    band radius ``band_px``, less that radius, which undoes the erosion of
    line ends.
    """
    s = np.asarray(skel) != 0
    if not is_thin(s):
        raise NotThin("mask is not a thinning fixed point; run thin() first")
    counts = neighbour_counts(s)
    on = set(zip(*np.nonzero(s)))
    on = {(int(r), int(c)) for r, c in on}

    junction = (counts >= 3) & s
    labels, n_clusters = ndimage.label(junction, structure=_EIGHT)
    vertices: list[tuple[float, float]] = []
    node_of: dict[tuple[int, int], int] = {}
    if n_clusters:
        rows, cols = np.nonzero(labels)
        lab = labels[rows, cols] - 1
        cnt = np.bincount(lab, minlength=n_clusters)
        cy = np.bincount(lab, weights=rows, minlength=n_clusters) / cnt
        cx = np.bincount(lab, weights=cols, minlength=n_clusters) / cnt
        vertices.extend(zip(cx.tolist(), cy.tolist()))
        for r, c, k in zip(rows.tolist(), cols.tolist(), lab.tolist()):
            node_of[(r, c)] = k
    for r, c in zip(*np.nonzero((counts == 1) & s)):
        node_of[(int(r), int(c))] = len(vertices)
        vertices.append((float(c), float(r)))

    polylines: list[tuple[int, int, list[tuple[int, int]]]] = []
    visited: set[tuple[int, int]] = set()
    direct: set[frozenset] = set()

    for start in sorted(node_of):
        u = node_of[start]
        for w in _neighbours(start, on):
            if w in node_of:
                v = node_of[w]
                key = frozenset((start, w))
                if v != u and key not in direct:
                    direct.add(key)
                    polylines.append((u, v, [start, w]))
                continue
            if w in visited:
                continue
            visited.add(w)
            path = [start, w]
            prev, cur = start, w
            end = None
            while True:
                # a chain pixel has exactly two neighbours, one of them ``prev``
                nxt = [q for q in _neighbours(cur, on) if q != prev]
                if not nxt:
                    break
                q = nxt[0]
                path.append(q)
                if q in node_of:
                    end = node_of[q]
                    break
                if q in visited:
                    break
                visited.add(q)
                prev, cur = cur, q
            if end is not None:
                polylines.append((u, end, path))

    # closed loops that touch no junction or endpoint
    for anchor in sorted(p for p in on if p not in node_of and counts[p] == 2):
        if anchor in visited:
            continue
        a = len(vertices)
        vertices.append((float(anchor[1]), float(anchor[0])))
        node_of[anchor] = a
        visited.add(anchor)
        path = [anchor]
        prev, cur = None, anchor
        while True:
            nxt = [x for x in _neighbours(cur, on) if x != prev]
            if not nxt:
                break
            q = nxt[0]
            path.append(q)
            if q == anchor or q in visited:
                break
            visited.add(q)
            prev, cur = cur, q
        if path[-1] == anchor and len(path) > 3:
            polylines.append((a, a, path))

    if refine:
        arms: dict[int, list[list[tuple[int, int]]]] = {}
        for u, v, path in polylines:
            arms.setdefault(u, []).append(path)
            arms.setdefault(v, []).append(path[::-1])
        moved = {}
        for k, its in arms.items():
            if len(its) == 1:
                moved[k] = _refine_endpoint(its[0], dist_px, band_px)
            elif len(its) == 2:
                # loop anchors and two-armed clusters: a bend, unchanged when straight
                moved[k] = _refine_junction(its, np.array(vertices[k]), lo=1)
            elif len(its) >= 3:
                moved[k] = _refine_junction(its, np.array(vertices[k]))
        for k, xy in moved.items():
            vertices[k] = (float(xy[0]), float(xy[1]))

    edges: list[tuple[int, int]] = []
    seen: set[tuple[int, int]] = set()

    def add_vertex(pt) -> int:
        vertices.append((float(pt[0]), float(pt[1])))
        return len(vertices) - 1

    for u, v, path in polylines:
        pts = np.array([(c, r) for r, c in path], dtype=np.float64)
        pts[0] = vertices[u]
        pts[-1] = vertices[v]
        if u == v:
            # closed loop: split at the point farthest from the anchor
            d = np.hypot(pts[:, 0] - pts[0, 0], pts[:, 1] - pts[0, 1])
            m = int(np.argmax(d))
            if m == 0 or m == len(pts) - 1:
                continue
            split = pts[m]
            if refine:
                split = _refine_junction([[(y, x) for x, y in pts[m::-1]], [(y, x) for x, y in pts[m:]]], split, lo=1)
            mid = add_vertex(split)
            pieces = [(u, mid, pts[:m + 1]), (mid, v, pts[m:])]
        else:
            pieces = [(u, v, pts)]
        for a, b, seg in pieces:
            keep = douglas_peucker(seg, eps_px)
            if len(keep) == 2 and len(seg) > 2:
                key = (min(a, b), max(a, b))
                if key in seen:
                    # parallel chain between the same vertices: keep its bulge
                    chord = seg[-1] - seg[0]
                    nrm = np.hypot(*chord) or 1.0
                    dist = np.abs(chord[0] * (seg[:, 1] - seg[0, 1]) - chord[1] * (seg[:, 0] - seg[0, 0])) / nrm
                    keep = np.array([0, int(np.argmax(dist[1:-1])) + 1, len(seg) - 1])
            corners = _refine_corners(seg, keep) if refine else [seg[k] for k in keep[1:-1]]
            ids = [a] + [add_vertex(pt) for pt in corners] + [b]
            for x, y in zip(ids[:-1], ids[1:]):
                if x != y:
                    key = (min(x, y), max(x, y))
                    seen.add(key)
                    edges.append(key)

    verts = np.array(vertices, dtype=np.float64).reshape(-1, 2) * meters_per_pixel
    g = from_edge_list(verts, np.array(edges, dtype=np.int64).reshape(-1, 2),
                       np.full(len(edges), Priority.P2, dtype=np.int8))
    return compact(g)


def components(g: StreetGraph) -> tuple[int, np.ndarray]:
    n = g.n_vertices
    if n == 0:
        return 0, np.zeros(0, dtype=np.int64)
    e = g.edges
    m = coo_matrix((np.ones(len(e)), (e[:, 0], e[:, 1])), shape=(n, n))
    return connected_components(m, directed=False)


def filter_components(g: StreetGraph, min_total_length_m: float = 300.0) -> StreetGraph:
    """Remove connected components whose total edge length is below the threshold."""
    n_comp, label = components(g)
    if n_comp == 0:
        return g
    lengths = np.bincount(label[g.edges[:, 0]], weights=g.edge_lengths(), minlength=n_comp) \
        if g.n_edges else np.zeros(n_comp)
    keep_comp = lengths >= min_total_length_m
    keep_v = keep_comp[label]
    remap = np.cumsum(keep_v) - 1
    keep_e = keep_v[g.edges[:, 0]] if g.n_edges else np.zeros(0, dtype=bool)
    return StreetGraph(g.vertices[keep_v], remap[g.edges[keep_e]], g.priorities[keep_e], dict(g.frame))


def extract_graph(df: np.ndarray, meters_per_pixel: float, tau: float = 2.0 / 16.0,
                  min_component_m: float = 300.0, eps_px: float = 1.0, d_max_px: float = 16.0) -> StreetGraph:
    """Full post-processing of a decoded distance field into a street graph."""
    band = threshold(df, tau)
    skel = thin(band)
    g = trace(skel, meters_per_pixel, eps_px, dist_px=np.asarray(df, dtype=np.float64) * d_max_px,
              band_px=tau * d_max_px)
    return filter_components(g, min_component_m)
