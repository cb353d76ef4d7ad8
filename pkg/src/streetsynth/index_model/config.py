from __future__ import annotations

from dataclasses import dataclass


@dataclass(frozen=True)
class ModelConfig:
    """Shape of the conditional index transformer.

    Token ids ``0..K-1`` are codebook indices; ``K`` is BOS and ``K + 1`` is PAD.
    """

    K: int = 512
    embed_dim: int = 64
    heads: int = 8
    encoder_layers: int = 2
    decoder_layers: int = 2
    window: int = 16
    ffn_dim: int = 0  # 0 means 4 * embed_dim
    cell_ctx_dim: int = 16
    pix_ctx_dim: int = 512
    density_scale: float = 50.0
    seed: int = 0

    def __post_init__(self) -> None:
        if self.embed_dim % self.heads:
            raise ValueError(f"embed_dim {self.embed_dim} not divisible by heads {self.heads}")
        if self.K < 1 or self.window < 1:
            raise ValueError("K and window must be positive")

    @property
    def vocab(self) -> int:
        return self.K + 2

    @property
    def bos(self) -> int:
        return self.K

    @property
    def pad(self) -> int:
        return self.K + 1

    @property
    def seq_len(self) -> int:
        return self.window * self.window

    @property
    def head_dim(self) -> int:
        return self.embed_dim // self.heads

    @property
    def ffn(self) -> int:
        return self.ffn_dim or 4 * self.embed_dim


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 3e-4
    warmup_steps: int = 1000
    steps: int = 65000
    batch_size: int = 8
    accum_steps: int = 1
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    grad_clip: float = 1.0  # global norm; 0 disables
    border_fraction: float = 0.25
    checkpoint_every: int = 0
    log_every: int = 50
    seed: int = 0
    dtype: str = "float32"
