"""Patch codebook: k-means dictionary learning, encoding and decoding.

A distance field is cut into non-overlapping cell patches (16 x 16 pixels
by default); each patch is replaced by the index of its nearest codebook
entry. Decoding pastes the entries back.
"""

from __future__ import annotations

import logging
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.ndimage import uniform_filter

from ._io import atomic_write_bytes, check_magic, unpack_u32
from .errors import DimensionMismatch, FormatError, IndexOutOfRange, TooFewPatches

log = logging.getLogger(__name__)

SGC_MAGIC = b"SGC1"
SGI_MAGIC = b"SGI1"


@dataclass
class Codebook:
    centroids: np.ndarray  # (K, D) float32

    @property
    def K(self) -> int:
        return self.centroids.shape[0]

    @property
    def D(self) -> int:
        return self.centroids.shape[1]

    @property
    def patch_side(self) -> int:
        side = int(round(self.D ** 0.5))
        if side * side != self.D:
            raise DimensionMismatch(f"patch dimension {self.D} is not a square")
        return side


def extract_patches(field: np.ndarray, side: int = 16) -> np.ndarray:
    """``(H/side * W/side, side*side)`` patches in row-major cell order."""
    field = np.asarray(field, dtype=np.float64)
    h, w = field.shape
    if h % side or w % side:
        raise DimensionMismatch(f"field {h}x{w} is not divisible by patch side {side}")
    return field.reshape(h // side, side, w // side, side).transpose(0, 2, 1, 3).reshape(-1, side * side)


def assemble_patches(patches: np.ndarray, rows: int, cols: int, side: int) -> np.ndarray:
    return patches.reshape(rows, cols, side, side).transpose(0, 2, 1, 3).reshape(rows * side, cols * side)


def _sq_dists(x: np.ndarray, c: np.ndarray, c_sq: np.ndarray) -> np.ndarray:
    d = (x * x).sum(axis=1)[:, None] - 2.0 * (x @ c.T) + c_sq[None, :]
    return np.maximum(d, 0.0)


def nearest(x: np.ndarray, centroids: np.ndarray, chunk: int = 4096) -> tuple[np.ndarray, np.ndarray]:
    """Nearest centroid per row (lowest index on ties) and its squared distance.

    Candidates come from the fast expanded form; the two best are then
    re-scored with exact differences so self-matches and ties are resolved
    exactly.
    """
    x = np.asarray(x, dtype=np.float64)
    c = np.asarray(centroids, dtype=np.float64)
    c_sq = (c * c).sum(axis=1)
    idx = np.empty(len(x), dtype=np.int64)
    dist = np.empty(len(x))
    k = len(c)
    for s in range(0, len(x), chunk):
        xs = x[s:s + chunk]
        d = _sq_dists(xs, c, c_sq)
        if k <= 2:
            cand = np.broadcast_to(np.arange(k), (len(xs), k))
        else:
            cand = np.sort(np.argpartition(d, 1, axis=1)[:, :2], axis=1)
        exact = ((xs[:, None, :] - c[cand]) ** 2).sum(axis=2)
        best = np.argmin(exact, axis=1)  # first minimum == lower index since cand is sorted
        idx[s:s + chunk] = cand[np.arange(len(xs)), best]
        dist[s:s + chunk] = exact[np.arange(len(xs)), best]
    return idx, dist


def _kmeans_pp(x: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = len(x)
    chosen = [int(rng.integers(n))]
    d2 = ((x - x[chosen[0]]) ** 2).sum(axis=1)
    for _ in range(1, k):
        total = d2.sum()
        if total > 0.0:
            i = int(rng.choice(n, p=d2 / total))
        else:
            i = int(rng.integers(n))
        chosen.append(i)
        d2 = np.minimum(d2, ((x - x[i]) ** 2).sum(axis=1))
    return x[chosen].copy()


def quantization_error(x: np.ndarray, centroids: np.ndarray) -> float:
    return float(nearest(x, centroids)[1].sum())


def fit_codebook(patches: np.ndarray, K: int, seed: int = 0, max_iters: int = 100,
                 tol: float = 1e-6, history: list[float] | None = None) -> Codebook:
    """Lloyd's k-means with k-means++ seeding.

    Empty clusters are re-seeded with the point farthest from its centroid.
    Stops once the largest centroid move is below ``tol`` or after
    ``max_iters`` updates. The total quantization error never increases;
    when ``history`` is given, the error after seeding and after every
    update is appended to it.
    """
    x = np.asarray(patches, dtype=np.float64)
    if x.ndim != 2:
        raise DimensionMismatch("patches must be an N x D matrix")
    if len(x) < K:
        raise TooFewPatches(f"{len(x)} patches for {K} centroids")
    if len(np.unique(x, axis=0)) < K:
        raise TooFewPatches(f"fewer than {K} distinct patches")
    rng = np.random.default_rng(seed)
    c = _kmeans_pp(x, K, rng)
    labels, d = nearest(x, c)
    err = d.sum()
    if history is not None:
        history.append(float(err))
    for it in range(max_iters):
        sums = np.zeros_like(c)
        np.add.at(sums, labels, x)
        counts = np.bincount(labels, minlength=K)
        new = c.copy()
        live = counts > 0
        new[live] = sums[live] / counts[live, None]
        labels, d = nearest(x, new)
        # re-seed clusters that lost all points
        for j in np.flatnonzero(np.bincount(labels, minlength=K) == 0):
            far = int(np.argmax(d))
            new[j] = x[far]
            labels[far] = j
            d[far] = 0.0
        move = float(np.sqrt(((new - c) ** 2).sum(axis=1)).max())
        c = new
        new_err = d.sum()
        log.debug("kmeans iter %d error %.6g move %.3g", it, new_err, move)
        err = new_err
        if history is not None:
            history.append(float(err))
        if move < tol:
            break
    c = c.astype(np.float32)
    _dedupe(c, x)
    log.info("codebook K=%d fitted, quantization error %.6g", K, err)
    return Codebook(c)


def _dedupe(c: np.ndarray, x: np.ndarray) -> None:
    """Replace exact duplicate centroids with data points not yet in the codebook."""
    _, first = np.unique(c, axis=0, return_index=True)
    dup = sorted(set(range(len(c))) - set(first.tolist()))
    if not dup:
        return
    present = {row.tobytes() for row in c}
    _, d = nearest(x, c)
    for j in dup:
        for i in np.argsort(-d, kind="stable"):
            cand = x[i].astype(np.float32)
            if cand.tobytes() not in present:
                c[j] = cand
                present.add(cand.tobytes())
                break


def encode(field: np.ndarray, cb: Codebook) -> np.ndarray:
    side = cb.patch_side
    h, w = np.shape(field)
    idx, _ = nearest(extract_patches(field, side), cb.centroids)
    return idx.reshape(h // side, w // side)


def decode(index_field: np.ndarray, cb: Codebook, smooth: bool = False) -> np.ndarray:
    f = np.asarray(index_field)
    if f.size and (f.min() < 0 or f.max() >= cb.K):
        raise IndexOutOfRange(f"index outside [0, {cb.K})")
    side = cb.patch_side
    rows, cols = f.shape
    out = assemble_patches(cb.centroids.astype(np.float64)[f.ravel()], rows, cols, side)
    if smooth:
        out = uniform_filter(out, size=3, mode="nearest")
    return np.clip(out, 0.0, 1.0)


def codebook_to_bytes(cb: Codebook) -> bytes:
    return SGC_MAGIC + struct.pack("<II", cb.K, cb.D) + cb.centroids.astype("<f4").tobytes()


def codebook_from_bytes(data: bytes) -> Codebook:
    check_magic(data, SGC_MAGIC, "codebook")
    k, d = unpack_u32(data, 4, 2, "codebook")
    if len(data) != 12 + 4 * k * d:
        raise FormatError("codebook: payload size mismatch")
    return Codebook(np.frombuffer(data, dtype="<f4", offset=12).reshape(k, d).astype(np.float32))


def save_codebook(cb: Codebook, path: str | Path) -> None:
    atomic_write_bytes(path, codebook_to_bytes(cb))


def load_codebook(path: str | Path) -> Codebook:
    return codebook_from_bytes(Path(path).read_bytes())


def index_field_to_bytes(f: np.ndarray, K: int) -> bytes:
    f = np.asarray(f)
    if f.size and (f.min() < 0 or f.max() >= K):
        raise IndexOutOfRange(f"index outside [0, {K})")
    h, w = f.shape
    return SGI_MAGIC + struct.pack("<III", h, w, K) + f.astype("<u4").tobytes()


def index_field_from_bytes(data: bytes) -> tuple[np.ndarray, int]:
    check_magic(data, SGI_MAGIC, "index field")
    h, w, k = unpack_u32(data, 4, 3, "index field")
    if len(data) != 16 + 4 * h * w:
        raise FormatError("index field: payload size mismatch")
    f = np.frombuffer(data, dtype="<u4", offset=16).reshape(h, w).astype(np.int64)
    if f.size and f.max() >= k:
        raise IndexOutOfRange(f"stored index exceeds K={k}")
    return f, k


def save_index_field(f: np.ndarray, K: int, path: str | Path) -> None:
    atomic_write_bytes(path, index_field_to_bytes(f, K))


def load_index_field(path: str | Path) -> tuple[np.ndarray, int]:
    return index_field_from_bytes(Path(path).read_bytes())
