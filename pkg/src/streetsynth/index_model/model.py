"""Encoder-decoder transformer over index tokens, with hand-written backprop.

The encoder reads one context vector per window cell (density samples and
the flattened P1-distance / land-water patches) with bidirectional
attention. The decoder reads the window's index tokens shifted right behind
BOS, attends causally to itself and fully to the encoder memory, and
predicts the next token. Blocks use pre-layer-norm residuals.

Parameters live in an ordered ``dict[str, ndarray]``; that order is the
serialization order.
"""

from __future__ import annotations

import math

import numpy as np

from ..errors import ShapeMismatch
from .config import ModelConfig

Params = dict[str, np.ndarray]

LN_EPS = 1e-5
_GELU_C = math.sqrt(2.0 / math.pi)


def param_shapes(cfg: ModelConfig) -> list[tuple[str, tuple[int, ...]]]:
    d, f, v = cfg.embed_dim, cfg.ffn, cfg.vocab
    shapes: list[tuple[str, tuple[int, ...]]] = [
        ("tok_emb", (v, d)),
        ("pos_emb", (cfg.seq_len, d)),
        ("ctx_cell.W", (cfg.cell_ctx_dim, d)), ("ctx_cell.b", (d,)),
        ("ctx_pix.W", (cfg.pix_ctx_dim, d)), ("ctx_pix.b", (d,)),
        ("ctx_merge.W", (2 * d, d)), ("ctx_merge.b", (d,)),
    ]

    def attn(prefix):
        return [(f"{prefix}.{w}", (d, d) if w.startswith("W") else (d,))
                for w in ("Wq", "bq", "Wk", "Wv", "bv", "Wo", "bo")]

    def ln(prefix):
        return [(f"{prefix}.g", (d,)), (f"{prefix}.b", (d,))]

    def ffn(prefix):
        return [(f"{prefix}.W1", (d, f)), (f"{prefix}.b1", (f,)), (f"{prefix}.W2", (f, d)), (f"{prefix}.b2", (d,))]

    for i in range(cfg.encoder_layers):
        p = f"enc.{i}"
        shapes += ln(f"{p}.ln1") + attn(f"{p}.attn") + ln(f"{p}.ln2") + ffn(f"{p}.ffn")
    shapes += ln("enc.ln_f")
    for i in range(cfg.decoder_layers):
        p = f"dec.{i}"
        shapes += (ln(f"{p}.ln1") + attn(f"{p}.self") + ln(f"{p}.ln2") + attn(f"{p}.cross")
                   + ln(f"{p}.ln3") + ffn(f"{p}.ffn"))
    shapes += ln("dec.ln_f")
    shapes += [("head.W", (d, v)), ("head.b", (v,))]
    return shapes


def init_params(cfg: ModelConfig, dtype=np.float32, seed: int | None = None) -> Params:
    """Small-normal weights, zero biases, unit layer-norm gains, zero output head.

    The zero head makes the untrained model predict the uniform distribution.
    """
    rng = np.random.default_rng(cfg.seed if seed is None else seed)
    params: Params = {}
    n_layers = max(1, cfg.encoder_layers + cfg.decoder_layers)
    for name, shape in param_shapes(cfg):
        leaf = name.rsplit(".", 1)[-1]
        if name.startswith("head."):
            arr = np.zeros(shape)
        elif leaf == "g":
            arr = np.ones(shape)
        elif leaf.startswith("b") and name not in ("tok_emb", "pos_emb"):
            arr = np.zeros(shape)
        else:
            std = 0.02
            if leaf in ("Wo", "W2"):
                std = 0.02 / math.sqrt(2 * n_layers)
            arr = rng.normal(0.0, std, size=shape)
        params[name] = arr.astype(dtype)
    return params


# ---------------------------------------------------------------- primitives

def _linear(x, W, b):
    return x @ W + b


def _linear_back(dy, x, W, grads, wname, bname):
    d_in, d_out = W.shape
    grads[wname] += x.reshape(-1, d_in).T @ dy.reshape(-1, d_out)
    grads[bname] += dy.reshape(-1, d_out).sum(axis=0)
    return dy @ W.T


def _layernorm(x, g, b):
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    rstd = 1.0 / np.sqrt(var + LN_EPS)
    xhat = xc * rstd
    return xhat * g + b, (xhat, rstd)


def _layernorm_back(dy, cache, g, grads, prefix):
    xhat, rstd = cache
    d = xhat.shape[-1]
    grads[f"{prefix}.g"] += (dy * xhat).reshape(-1, d).sum(axis=0)
    grads[f"{prefix}.b"] += dy.reshape(-1, d).sum(axis=0)
    dxhat = dy * g
    return rstd * (dxhat - dxhat.mean(axis=-1, keepdims=True)
                   - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True))


def _gelu(x):
    # tanh approximation
    c = x.dtype.type(_GELU_C)
    inner = x * x
    inner *= x.dtype.type(0.044715)
    inner += 1
    inner *= x
    inner *= c
    t = np.tanh(inner, out=inner)
    out = t + 1
    out *= x
    out *= x.dtype.type(0.5)
    return out, t


def _gelu_back(dy, x, t):
    c = x.dtype.type(_GELU_C)
    dt = x * x
    dt *= x.dtype.type(3 * 0.044715)
    dt += 1
    dt *= c
    sech2 = 1 - t * t
    dt *= sech2
    dt *= x
    dt += 1 + t
    dt *= x.dtype.type(0.5)
    dt *= dy
    return dt


def softmax(x, axis=-1):
    e = x - x.max(axis=axis, keepdims=True)
    np.exp(e, out=e)
    e /= e.sum(axis=axis, keepdims=True)
    return e


def _split_heads(x, h):
    b, n, d = x.shape
    return x.reshape(b, n, h, d // h).transpose(0, 2, 1, 3)


def _merge_heads(x):
    b, h, n, dh = x.shape
    return x.transpose(0, 2, 1, 3).reshape(b, n, h * dh)


def _causal_mask(n, m, dtype):
    return np.triu(np.full((n, m), -np.inf, dtype=dtype), 1)


def _attention(p, prefix, xq, xkv, heads, causal, cache=None):
    """softmax(Q K^T / sqrt(d_q)) V with ``heads`` heads; optional causal mask.

    The causal mask drops key positions ``j > i`` for query ``i``. Keys carry
    no bias: softmax is invariant to it, so it would never receive gradient.
    """
    q = _split_heads(_linear(xq, p[f"{prefix}.Wq"], p[f"{prefix}.bq"]), heads)
    k = _split_heads(xkv @ p[f"{prefix}.Wk"], heads)
    v = _split_heads(_linear(xkv, p[f"{prefix}.Wv"], p[f"{prefix}.bv"]), heads)
    scale = 1.0 / math.sqrt(q.shape[-1])
    s = q @ k.transpose(0, 1, 3, 2)
    s *= s.dtype.type(scale)
    if causal:
        s += _causal_mask(s.shape[-2], s.shape[-1], s.dtype)
    a = softmax(s)
    o = _merge_heads(a @ v)
    out = _linear(o, p[f"{prefix}.Wo"], p[f"{prefix}.bo"])
    if cache is not None:
        cache.append((xq, xkv, q, k, v, a, o, scale))
    return out


def _attention_back(dout, cache, p, grads, prefix, heads):
    xq, xkv, q, k, v, a, o, scale = cache
    do = _split_heads(_linear_back(dout, o, p[f"{prefix}.Wo"], grads, f"{prefix}.Wo", f"{prefix}.bo"), heads)
    da = do @ v.transpose(0, 1, 3, 2)
    dv = a.transpose(0, 1, 3, 2) @ do
    ds = da * a
    da -= ds.sum(axis=-1, keepdims=True)
    np.multiply(da, a, out=ds)
    ds *= ds.dtype.type(scale)
    dq = ds @ k
    dk = ds.transpose(0, 1, 3, 2) @ q
    dxq = _linear_back(_merge_heads(dq), xq, p[f"{prefix}.Wq"], grads, f"{prefix}.Wq", f"{prefix}.bq")
    dk = _merge_heads(dk)
    grads[f"{prefix}.Wk"] += xkv.reshape(-1, xkv.shape[-1]).T @ dk.reshape(-1, dk.shape[-1])
    dxkv = dk @ p[f"{prefix}.Wk"].T
    dxkv = dxkv + _linear_back(_merge_heads(dv), xkv, p[f"{prefix}.Wv"], grads, f"{prefix}.Wv", f"{prefix}.bv")
    return dxq, dxkv


def _ffn(p, prefix, x, cache=None):
    h = _linear(x, p[f"{prefix}.W1"], p[f"{prefix}.b1"])
    act, t = _gelu(h)
    out = _linear(act, p[f"{prefix}.W2"], p[f"{prefix}.b2"])
    if cache is not None:
        cache.append((x, h, t, act))
    return out


def _ffn_back(dout, cache, p, grads, prefix):
    x, h, t, act = cache
    dact = _linear_back(dout, act, p[f"{prefix}.W2"], grads, f"{prefix}.W2", f"{prefix}.b2")
    dh = _gelu_back(dact, h, t)
    return _linear_back(dh, x, p[f"{prefix}.W1"], grads, f"{prefix}.W1", f"{prefix}.b1")


# ---------------------------------------------------------------- encoder

def _check_context(cfg: ModelConfig, cell_ctx, pix_ctx):
    if cell_ctx.ndim != 3 or pix_ctx.ndim != 3:
        raise ShapeMismatch("contexts must be batched: (B, cells, dim)")
    b, n, dc = cell_ctx.shape
    if pix_ctx.shape[:2] != (b, n):
        raise ShapeMismatch(f"cell context {cell_ctx.shape} and pixel context {pix_ctx.shape} disagree")
    if dc != cfg.cell_ctx_dim or pix_ctx.shape[2] != cfg.pix_ctx_dim:
        raise ShapeMismatch(
            f"context widths ({dc}, {pix_ctx.shape[2]}) != ({cfg.cell_ctx_dim}, {cfg.pix_ctx_dim})")
    if n > cfg.seq_len:
        raise ShapeMismatch(f"{n} context cells exceed window of {cfg.seq_len}")


def embed_context(p: Params, cfg: ModelConfig, cell_ctx, pix_ctx, cache=None):
    """Per-cell context embedding before any attention.

    Each cell is projected independently: density and pixel patches get
    their own linear maps, the two results are concatenated and projected
    back to the model width.
    """
    dt = p["tok_emb"].dtype
    cc = np.asarray(cell_ctx, dtype=dt) * dt.type(cfg.density_scale)
    cp = np.asarray(pix_ctx, dtype=dt)
    ec = _linear(cc, p["ctx_cell.W"], p["ctx_cell.b"])
    ep = _linear(cp, p["ctx_pix.W"], p["ctx_pix.b"])
    cat = np.concatenate([ec, ep], axis=-1)
    out = _linear(cat, p["ctx_merge.W"], p["ctx_merge.b"])
    if cache is not None:
        cache.append((cc, cp, cat))
    return out


def encode_context(p: Params, cfg: ModelConfig, cell_ctx, pix_ctx, cache=None):
    """Context memory ``(B, cells, d)`` from batched condition windows."""
    _check_context(cfg, cell_ctx, pix_ctx)
    n = cell_ctx.shape[1]
    x = embed_context(p, cfg, cell_ctx, pix_ctx, cache) + p["pos_emb"][:n]
    for i in range(cfg.encoder_layers):
        pre = f"enc.{i}"
        h, c1 = _layernorm(x, p[f"{pre}.ln1.g"], p[f"{pre}.ln1.b"])
        x = x + _attention(p, f"{pre}.attn", h, h, cfg.heads, False, cache)
        h2, c2 = _layernorm(x, p[f"{pre}.ln2.g"], p[f"{pre}.ln2.b"])
        x = x + _ffn(p, f"{pre}.ffn", h2, cache)
        if cache is not None:
            cache.append((c1, c2))
    out, cf = _layernorm(x, p["enc.ln_f.g"], p["enc.ln_f.b"])
    if cache is not None:
        cache.append(cf)
    return out


def _encode_back(dmem, cache, p, cfg, grads):
    cf = cache.pop()
    dx = _layernorm_back(dmem, cf, p["enc.ln_f.g"], grads, "enc.ln_f")
    for i in reversed(range(cfg.encoder_layers)):
        pre = f"enc.{i}"
        c1, c2 = cache.pop()
        ffn_cache = cache.pop()
        attn_cache = cache.pop()
        dh2 = _ffn_back(dx, ffn_cache, p, grads, f"{pre}.ffn")
        dx = dx + _layernorm_back(dh2, c2, p[f"{pre}.ln2.g"], grads, f"{pre}.ln2")
        dq, dkv = _attention_back(dx, attn_cache, p, grads, f"{pre}.attn", cfg.heads)
        dx = dx + _layernorm_back(dq + dkv, c1, p[f"{pre}.ln1.g"], grads, f"{pre}.ln1")
    n = dx.shape[1]
    grads["pos_emb"][:n] += dx.sum(axis=0)
    cc, cp, cat = cache.pop()
    dcat = _linear_back(dx, cat, p["ctx_merge.W"], grads, "ctx_merge.W", "ctx_merge.b")
    d = cfg.embed_dim
    _linear_back(dcat[..., :d], cc, p["ctx_cell.W"], grads, "ctx_cell.W", "ctx_cell.b")
    _linear_back(dcat[..., d:], cp, p["ctx_pix.W"], grads, "ctx_pix.W", "ctx_pix.b")


# ---------------------------------------------------------------- decoder

def _check_tokens(cfg: ModelConfig, tokens):
    if tokens.ndim != 2:
        raise ShapeMismatch("tokens must be batched: (B, n)")
    if tokens.shape[1] > cfg.seq_len:
        raise ShapeMismatch(f"sequence of {tokens.shape[1]} exceeds seq_len {cfg.seq_len}")
    if tokens.size and (tokens.min() < 0 or tokens.max() >= cfg.vocab):
        raise ShapeMismatch("token id outside vocabulary")


def shift_right(tokens: np.ndarray, cfg: ModelConfig) -> np.ndarray:
    """Decoder input: BOS followed by all but the last token."""
    tokens = np.asarray(tokens)
    bos = np.full(tokens.shape[:-1] + (1,), cfg.bos, dtype=np.int64)
    return np.concatenate([bos, tokens[..., :-1]], axis=-1)


def decode(p: Params, cfg: ModelConfig, inputs, memory, cache=None, last_only: bool = False):
    """Logits ``(B, n, vocab)`` for decoder ``inputs`` (already shifted right).

    Row ``i`` sees inputs ``0..i`` only. With ``last_only`` only the final
    row is computed in the last layer and returned as ``(B, 1, vocab)``.
    """
    inputs = np.asarray(inputs, dtype=np.int64)
    _check_tokens(cfg, inputs)
    if memory.ndim != 3 or memory.shape[0] != inputs.shape[0] or memory.shape[2] != cfg.embed_dim:
        raise ShapeMismatch(f"memory shape {memory.shape} does not match tokens {inputs.shape}")
    n = inputs.shape[1]
    x = p["tok_emb"][inputs] + p["pos_emb"][:n]
    if cache is not None:
        cache.append(inputs)
    for i in range(cfg.decoder_layers):
        pre = f"dec.{i}"
        final = last_only and i == cfg.decoder_layers - 1
        h1, c1 = _layernorm(x, p[f"{pre}.ln1.g"], p[f"{pre}.ln1.b"])
        if final:
            x = x[:, -1:]
            x = x + _attention(p, f"{pre}.self", h1[:, -1:], h1, cfg.heads, False)
        else:
            x = x + _attention(p, f"{pre}.self", h1, h1, cfg.heads, True, cache)
        h2, c2 = _layernorm(x, p[f"{pre}.ln2.g"], p[f"{pre}.ln2.b"])
        x = x + _attention(p, f"{pre}.cross", h2, memory, cfg.heads, False, cache)
        h3, c3 = _layernorm(x, p[f"{pre}.ln3.g"], p[f"{pre}.ln3.b"])
        x = x + _ffn(p, f"{pre}.ffn", h3, cache)
        if cache is not None:
            cache.append((c1, c2, c3))
    if last_only and cfg.decoder_layers == 0:
        x = x[:, -1:]
    hf, cf = _layernorm(x, p["dec.ln_f.g"], p["dec.ln_f.b"])
    logits = _linear(hf, p["head.W"], p["head.b"])
    if cache is not None:
        cache.append((cf, hf))
    return logits


def _decode_back(dlogits, cache, p, cfg, grads):
    cf, hf = cache.pop()
    dh = _linear_back(dlogits, hf, p["head.W"], grads, "head.W", "head.b")
    dx = _layernorm_back(dh, cf, p["dec.ln_f.g"], grads, "dec.ln_f")
    dmem = None
    for i in reversed(range(cfg.decoder_layers)):
        pre = f"dec.{i}"
        c1, c2, c3 = cache.pop()
        ffn_cache = cache.pop()
        cross_cache = cache.pop()
        self_cache = cache.pop()
        dh3 = _ffn_back(dx, ffn_cache, p, grads, f"{pre}.ffn")
        dx = dx + _layernorm_back(dh3, c3, p[f"{pre}.ln3.g"], grads, f"{pre}.ln3")
        dq, dm = _attention_back(dx, cross_cache, p, grads, f"{pre}.cross", cfg.heads)
        dmem = dm if dmem is None else dmem + dm
        dx = dx + _layernorm_back(dq, c2, p[f"{pre}.ln2.g"], grads, f"{pre}.ln2")
        dq, dkv = _attention_back(dx, self_cache, p, grads, f"{pre}.self", cfg.heads)
        dx = dx + _layernorm_back(dq + dkv, c1, p[f"{pre}.ln1.g"], grads, f"{pre}.ln1")
    inputs = cache.pop()
    n = inputs.shape[1]
    grads["pos_emb"][:n] += dx.sum(axis=0)
    np.add.at(grads["tok_emb"], inputs.ravel(), dx.reshape(-1, cfg.embed_dim))
    return dmem


def forward(p: Params, cfg: ModelConfig, tokens, cell_ctx, pix_ctx):
    """Teacher-forced logits ``(B, n, vocab)`` predicting ``tokens``."""
    memory = encode_context(p, cfg, cell_ctx, pix_ctx)
    return decode(p, cfg, shift_right(tokens, cfg), memory)


# ---------------------------------------------------------------- loss

def loss(logits: np.ndarray, targets: np.ndarray, pad: int) -> float:
    """Mean negative log-likelihood over positions whose target is not PAD."""
    logits = np.asarray(logits, dtype=np.float64)
    targets = np.asarray(targets)
    keep = targets != pad
    if not keep.any():
        return 0.0
    z = logits - logits.max(axis=-1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=-1, keepdims=True))
    t = np.where(keep, targets, 0)
    nll = -np.take_along_axis(logp, t[..., None], axis=-1)[..., 0]
    return float(nll[keep].sum() / keep.sum())


def loss_and_grads(p: Params, cfg: ModelConfig, tokens, cell_ctx, pix_ctx) -> tuple[float, Params]:
    """Loss of one batch and the gradient of every parameter tensor."""
    tokens = np.asarray(tokens, dtype=np.int64)
    cache: list = []
    memory = encode_context(p, cfg, cell_ctx, pix_ctx, cache)
    dcache: list = []
    logits = decode(p, cfg, shift_right(tokens, cfg), memory, dcache)

    keep = tokens != cfg.pad
    count = int(keep.sum())
    grads = {k: np.zeros_like(v) for k, v in p.items()}
    if count == 0:
        return 0.0, grads
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    probs = e / e.sum(axis=-1, keepdims=True)
    t = np.where(keep, tokens, 0)
    logp_t = np.take_along_axis(z, t[..., None], axis=-1)[..., 0] - np.log(e.sum(axis=-1))
    value = float(-(logp_t[keep].astype(np.float64)).sum() / count)

    dlogits = probs
    np.put_along_axis(dlogits, t[..., None], np.take_along_axis(dlogits, t[..., None], axis=-1) - 1.0, axis=-1)
    dlogits *= (keep / count)[..., None].astype(dlogits.dtype)
    dmem = _decode_back(dlogits, dcache, p, cfg, grads)
    _encode_back(dmem, cache, p, cfg, grads)
    return value, grads
