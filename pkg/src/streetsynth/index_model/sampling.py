"""Drawing one token from a row of logits."""

from __future__ import annotations

import numpy as np


def next_token_probs(logits: np.ndarray, temperature: float = 1.0, top_k: int | None = None) -> np.ndarray:
    """Softmax of ``logits / temperature`` restricted to the ``top_k`` largest logits.

    Ties at the cut-off are broken toward the lower token index, so the
    support always has exactly ``top_k`` entries.
    """
    z = np.asarray(logits, dtype=np.float64).reshape(-1)
    v = z.size
    if temperature <= 0:
        raise ValueError("temperature must be positive; use top_k=1 for argmax")
    k = v if top_k is None else int(top_k)
    if not 1 <= k <= v:
        raise ValueError(f"top_k must be in [1, {v}], got {top_k}")
    keep = np.argsort(-z, kind="stable")[:k]
    s = z[keep] / temperature
    s = np.exp(s - s.max())
    p = np.zeros(v)
    p[keep] = s / s.sum()
    return p


def sample_next(logits: np.ndarray, temperature: float = 1.0, top_k: int | None = None,
                rng: np.random.Generator | None = None) -> int:
    """One token from the restricted, renormalised softmax.

    ``top_k=1`` returns the argmax (lowest index on ties) without touching
    ``rng``; this is also the limit of ``temperature -> 0``.
    """
    z = np.asarray(logits).reshape(-1)
    if top_k == 1:
        return int(np.argmax(z))
    p = next_token_probs(z, temperature, top_k)
    if rng is None:
        rng = np.random.default_rng()
    # inverse-CDF draw: one uniform per token keeps the stream reproducible
    u = rng.random()
    idx = int(np.searchsorted(np.cumsum(p), u, side="right"))
    return min(idx, int(np.flatnonzero(p).max()))
