from __future__ import annotations

import math

import numpy as np
import pytest
from helpers import tiny_config

from streetsynth.errors import NonFiniteLoss
from streetsynth.index_model.config import TrainConfig
from streetsynth.index_model.data import RegionArrays, WindowDataset, pixel_context
from streetsynth.index_model.train import Adam, learning_rate, train


def toy_dataset(cfg, rows=5, cols=6, seed=0) -> WindowDataset:
    rng = np.random.default_rng(seed)
    cell = rng.random((rows, cols, cfg.cell_ctx_dim)).astype(np.float32)
    pix = rng.random((rows, cols, cfg.pix_ctx_dim)).astype(np.float32)
    tokens = rng.integers(0, cfg.K, size=(rows, cols))
    return WindowDataset([RegionArrays(cell, pix, tokens, cfg.window, cfg.pad)])


def test_schedule():
    t = TrainConfig(lr=1.0, warmup_steps=4, steps=14)
    lrs = [learning_rate(s, t) for s in range(14)]
    assert lrs[:4] == [0.25, 0.5, 0.75, 1.0]
    assert lrs[4] == 1.0
    assert lrs[9] == pytest.approx(0.5)
    assert all(a >= b for a, b in zip(lrs[3:], lrs[4:]))


def test_adam_first_step_moves_by_lr():
    # bias correction makes the first update lr * g / (|g| + eps)
    p = {"w": np.array([1.0, -2.0, 0.5])}
    g = {"w": np.array([0.3, -4.0, 0.0])}
    Adam(eps=1e-8).step(p, g, 0.1)
    assert np.allclose(p["w"], [1.0 - 0.1 * 0.3 / (0.3 + 1e-8), -2.0 + 0.1 * 4 / (4 + 1e-8), 0.5])


def test_adam_matches_reference_recursion():
    rng = np.random.default_rng(1)
    p = {"w": rng.normal(size=4)}
    ref = p["w"].copy()
    m = np.zeros(4)
    v = np.zeros(4)
    opt = Adam()
    for t in range(1, 6):
        g = rng.normal(size=4)
        opt.step(p, {"w": g.copy()}, 0.01)
        m = 0.9 * m + 0.1 * g
        v = 0.999 * v + 0.001 * g * g
        ref -= 0.01 * (m / (1 - 0.9 ** t)) / (np.sqrt(v / (1 - 0.999 ** t)) + 1e-8)
    assert np.allclose(p["w"], ref)


def test_windows_and_padding():
    cfg = tiny_config(window=3)
    ds = toy_dataset(cfg)
    reg = ds.regions[0]
    w = reg.window_tokens(-1, -2).reshape(3, 3)
    assert (w[0] == cfg.pad).all() and (w[:, :2] == cfg.pad).all()
    assert w[1, 2] == reg.tokens[0, 0]
    cell, pix = reg.context(-1, -2)
    assert (cell.reshape(3, 3, -1)[0] == 0).all()
    batch = ds.sample(np.random.default_rng(0), 50, border_fraction=1.0)
    # every border window has PAD in its first row or first column
    t = batch.tokens.reshape(50, 3, 3)
    assert ((t[:, 0] == cfg.pad).all(axis=1) | (t[:, :, 0] == cfg.pad).all(axis=1)).all()


def test_pixel_context_layout():
    p1 = np.arange(64, dtype=np.float32).reshape(8, 8) / 64
    land = np.ones((8, 8), np.uint8)
    ctx = pixel_context(p1, land, 4)
    assert ctx.shape == (2, 2, 32)
    assert np.array_equal(ctx[0, 1, :16], p1[:4, 4:].ravel())
    assert (ctx[..., 16:] == 1).all()


def test_training_reduces_loss_and_writes_csv(tmp_path):
    cfg = tiny_config()
    ds = toy_dataset(cfg)
    fixed = WindowDataset(ds.regions, fixed=[(0, 0, 0), (0, 1, 2)])
    tc = TrainConfig(lr=1e-2, warmup_steps=5, steps=150, batch_size=2, log_every=0, dtype="float64")
    res = train(fixed, cfg, tc, csv_path=tmp_path / "loss.csv")
    losses = [l for _, l, _ in res.history]
    assert losses[0] == pytest.approx(math.log(cfg.vocab))
    assert losses[-1] < 0.5 * losses[0]
    lines = (tmp_path / "loss.csv").read_text().splitlines()
    assert lines[0] == "step,loss,lr" and len(lines) == 151


def test_training_is_deterministic():
    cfg = tiny_config()
    tc = TrainConfig(lr=3e-3, warmup_steps=2, steps=8, batch_size=3, log_every=0)
    a = train(toy_dataset(cfg), cfg, tc)
    b = train(toy_dataset(cfg), cfg, tc)
    assert all(np.array_equal(a.params[k], b.params[k]) for k in a.params)
    assert [h[1] for h in a.history] == [h[1] for h in b.history]


def test_non_finite_loss_is_reported():
    cfg = tiny_config()
    ds = toy_dataset(cfg)
    from streetsynth.index_model.model import init_params
    p = init_params(cfg)
    p["head.b"][:] = np.nan
    with pytest.raises(NonFiniteLoss) as e:
        train(ds, cfg, TrainConfig(steps=3, log_every=0), params=p)
    assert e.value.step == 0
