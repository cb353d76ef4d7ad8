"""Adam training loop with linear warm-up and cosine decay."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .._io import atomic_write_text
from ..errors import NonFiniteLoss
from .config import ModelConfig, TrainConfig
from .data import WindowDataset
from .io import save_params
from .model import Params, init_params, loss_and_grads

log = logging.getLogger(__name__)


def learning_rate(step: int, tcfg: TrainConfig) -> float:
    """Linear warm-up to ``lr`` over ``warmup_steps``, then cosine decay to zero."""
    if tcfg.warmup_steps > 0 and step < tcfg.warmup_steps:
        return tcfg.lr * (step + 1) / tcfg.warmup_steps
    span = max(1, tcfg.steps - tcfg.warmup_steps)
    progress = min(1.0, (step - tcfg.warmup_steps) / span)
    return tcfg.lr * 0.5 * (1.0 + math.cos(math.pi * progress))


@dataclass
class Adam:
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    def step(self, params: Params, grads: Params, lr: float) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1 ** self.t
        c2 = 1.0 - b2 ** self.t
        for name, g in grads.items():
            p = params[name]
            if name not in self.m:
                self.m[name] = np.zeros_like(p)
                self.v[name] = np.zeros_like(p)
            m, v = self.m[name], self.v[name]
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * (g * g)
            update = (m / c1) / (np.sqrt(v / c2) + self.eps)
            p -= p.dtype.type(lr) * update


@dataclass
class TrainResult:
    params: Params
    history: list[tuple[int, float, float]]  # (step, loss, lr)


def train(dataset: WindowDataset, cfg: ModelConfig, tcfg: TrainConfig, params: Params | None = None,
          csv_path: str | Path | None = None, checkpoint_path: str | Path | None = None,
          on_step: Callable[[int, float], None] | None = None) -> TrainResult:
    """Teacher-forced next-token training over random windows of ``dataset``.

    Deterministic for a fixed seed, data and config. Raises
    :class:`NonFiniteLoss` at the first step whose loss is not finite.
    """
    dtype = np.dtype(tcfg.dtype)
    if params is None:
        params = init_params(cfg, dtype)
    else:
        params = {k: np.array(v, dtype=dtype) for k, v in params.items()}
    rng = np.random.default_rng(tcfg.seed)
    opt = Adam(tcfg.beta1, tcfg.beta2, tcfg.eps)
    history: list[tuple[int, float, float]] = []
    rows = ["step,loss,lr"]
    for step in range(tcfg.steps):
        lr = learning_rate(step, tcfg)
        total = None
        step_loss = 0.0
        for _ in range(tcfg.accum_steps):
            batch = dataset.sample(rng, tcfg.batch_size, tcfg.border_fraction)
            value, grads = loss_and_grads(params, cfg, batch.tokens, batch.cell_ctx, batch.pix_ctx)
            if not math.isfinite(value):
                raise NonFiniteLoss(step, value)
            step_loss += value / tcfg.accum_steps
            if total is None:
                total = grads
            else:
                for k in total:
                    total[k] += grads[k]
        if tcfg.accum_steps > 1:
            inv = dtype.type(1.0 / tcfg.accum_steps)
            for k in total:
                total[k] *= inv
        if tcfg.grad_clip > 0:
            norm = math.sqrt(sum(float((g.astype(np.float64) ** 2).sum()) for g in total.values()))
            if not math.isfinite(norm):
                raise NonFiniteLoss(step, norm)
            if norm > tcfg.grad_clip:
                scale = dtype.type(tcfg.grad_clip / norm)
                for k in total:
                    total[k] *= scale
        opt.step(params, total, lr)
        history.append((step, step_loss, lr))
        rows.append(f"{step},{step_loss:.6f},{lr:.6e}")
        if on_step is not None:
            on_step(step, step_loss)
        if tcfg.log_every and step % tcfg.log_every == 0:
            log.info("step %d loss %.4f lr %.3g", step, step_loss, lr)
        if checkpoint_path and tcfg.checkpoint_every and (step + 1) % tcfg.checkpoint_every == 0:
            save_params(params, cfg, checkpoint_path)
    if csv_path is not None:
        atomic_write_text(csv_path, "\n".join(rows) + "\n")
    return TrainResult(params, history)
