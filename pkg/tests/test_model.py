from __future__ import annotations

import numpy as np
import pytest
from helpers import causality_violations, gradient_errors, random_problem, tiny_config

from streetsynth.errors import FormatError, ShapeMismatch
from streetsynth.index_model.config import ModelConfig
from streetsynth.index_model.io import load_params, params_from_bytes, params_to_bytes, save_params
from streetsynth.index_model.model import (decode, encode_context, forward, init_params, loss, param_shapes,
                                           shift_right, softmax)


def test_vocab_layout():
    cfg = ModelConfig(K=10)
    assert (cfg.vocab, cfg.bos, cfg.pad, cfg.seq_len) == (12, 10, 11, 256)
    with pytest.raises(ValueError):
        ModelConfig(embed_dim=10, heads=3)


def test_untrained_model_is_uniform():
    cfg = tiny_config()
    _, tokens, cell, pix = random_problem(cfg)
    p = init_params(cfg, np.float64)
    logits = forward(p, cfg, tokens, cell, pix)
    assert np.allclose(softmax(logits), 1 / cfg.vocab)
    assert loss(logits, tokens, cfg.pad) == pytest.approx(np.log(cfg.vocab))


def test_loss_matches_direct_nll():
    rng = np.random.default_rng(0)
    logits = rng.normal(size=(2, 3, 4))
    targets = np.array([[0, 3, 1], [2, 3, 3]])
    pad = 3
    nll = []
    for b in range(2):
        for i in range(3):
            if targets[b, i] != pad:
                z = logits[b, i]
                nll.append(-(z[targets[b, i]] - np.log(np.exp(z).sum())))
    assert loss(logits, targets, pad) == pytest.approx(np.mean(nll))


def test_shift_right():
    cfg = tiny_config()
    assert shift_right(np.array([[1, 2, 3]]), cfg).tolist() == [[cfg.bos, 1, 2]]


def test_gradients_of_selected_tensors():
    cfg = tiny_config()
    errs = gradient_errors(cfg, names=["head.W", "dec.0.cross.Wk", "enc.0.ffn.W1", "ctx_cell.W", "pos_emb"])
    assert max(errs.values()) < 1e-5, errs


def test_decoder_is_causal():
    assert causality_violations(tiny_config()) == []


def test_last_only_matches_full_decode():
    cfg = tiny_config(decoder_layers=2)
    p, tokens, cell, pix = random_problem(cfg)
    mem = encode_context(p, cfg, cell, pix)
    inputs = shift_right(tokens, cfg)
    full = decode(p, cfg, inputs, mem)
    last = decode(p, cfg, inputs, mem, last_only=True)
    assert np.allclose(full[:, -1:], last, atol=1e-12)


def test_shape_errors():
    cfg = tiny_config()
    p, tokens, cell, pix = random_problem(cfg)
    with pytest.raises(ShapeMismatch):
        encode_context(p, cfg, cell[..., :2], pix)
    with pytest.raises(ShapeMismatch):
        forward(p, cfg, np.full((1, 3), cfg.vocab), cell[:1, :3], pix[:1, :3])
    with pytest.raises(ShapeMismatch):
        forward(p, cfg, np.zeros((1, 10), int), np.zeros((1, 10, 4)), np.zeros((1, 10, 6)))


def test_init_is_seeded():
    cfg = tiny_config()
    a, b = init_params(cfg), init_params(cfg)
    assert all(np.array_equal(a[k], b[k]) for k in a)
    c = init_params(cfg, seed=99)
    assert not np.array_equal(a["tok_emb"], c["tok_emb"])
    assert [k for k in a] == [n for n, _ in param_shapes(cfg)]


def test_parameter_file_round_trip(tmp_path):
    cfg = tiny_config()
    p = init_params(cfg)
    save_params(p, cfg, tmp_path / "m.sgm")
    q, cfg2 = load_params(tmp_path / "m.sgm")
    assert cfg2 == cfg
    assert all(np.array_equal(p[k], q[k]) for k in p)
    data = params_to_bytes(p, cfg)
    with pytest.raises(FormatError):
        params_from_bytes(data[:-4])
    with pytest.raises(FormatError):
        params_from_bytes(data + b"\0\0\0\0")
    with pytest.raises(FormatError):
        params_from_bytes(b"SGX1" + data[4:])
