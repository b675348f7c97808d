"""Spatial pooling perceiver: grid pooling plus width projection.

Vision tokens (minus [CLS]) are reshaped back onto their (G_D, G_H, G_W)
grid, pooled blockwise to cut the token count, then projected to the LM
width with either a single affine map or a two-layer MLP.

``sequence_pool`` is the ablation arm that pools fixed-size windows of the
flat token sequence instead; it produces the same token count but ignores
3D block membership.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import nn
from .autodiff import Tensor
from .encoders import EmbeddingSeq
from .errors import GridMismatchError, WidthMismatchError


@dataclass
class PerceiverConfig:
    grid: tuple[int, int, int] = (2, 8, 8)
    kernel: tuple[int, int, int] = (2, 2, 2)
    pool_mode: str = "mean"
    projection: str = "mlp-2-layer"  # or "linear-1-layer"
    d_in: int = 96
    d_out: int = 256
    spatial: bool = True  # False = sequence-pooling ablation arm
    dtype: type = np.float32

    def __post_init__(self):
        gd, gh, gw = self.grid
        kd, kh, kw = self.kernel
        if gd % kd or gh % kh or gw % kw:
            raise GridMismatchError(f"grid {self.grid} not divisible by kernel {self.kernel}")
        if self.pool_mode not in ("mean", "max"):
            raise ValueError(f"unknown pool mode {self.pool_mode!r}")
        if self.projection not in ("linear-1-layer", "mlp-2-layer"):
            raise ValueError(f"unknown projection {self.projection!r}")

    @property
    def n_in(self) -> int:
        gd, gh, gw = self.grid
        return gd * gh * gw

    @property
    def block(self) -> int:
        kd, kh, kw = self.kernel
        return kd * kh * kw

    @property
    def n_out(self) -> int:
        return self.n_in // self.block


def _pool_blocks(x: Tensor, cfg: PerceiverConfig) -> Tensor:
    """(B, n_in, d) -> (B, n_out, d) pooling 3D grid blocks in grid order."""
    b, n, d = x.shape
    gd, gh, gw = cfg.grid
    kd, kh, kw = cfg.kernel
    x = x.reshape(b, gd // kd, kd, gh // kh, kh, gw // kw, kw, d)
    x = x.transpose(0, 1, 3, 5, 2, 4, 6, 7)
    x = x.reshape(b, cfg.n_out, cfg.block, d)
    return x.mean(axis=2) if cfg.pool_mode == "mean" else x.max(axis=2)


def _pool_sequence(x: Tensor, cfg: PerceiverConfig) -> Tensor:
    """Ablation: pool consecutive windows of the flat token sequence."""
    b, n, d = x.shape
    x = x.reshape(b, cfg.n_out, cfg.block, d)
    return x.mean(axis=2) if cfg.pool_mode == "mean" else x.max(axis=2)


class Perceiver(nn.Module):
    def __init__(self, cfg: PerceiverConfig, rng: np.random.Generator):
        self.cfg = cfg
        dt = cfg.dtype
        if cfg.projection == "linear-1-layer":
            self.proj = [nn.Linear(cfg.d_in, cfg.d_out, rng, dtype=dt)]
        else:
            self.proj = [nn.Linear(cfg.d_in, cfg.d_out, rng, dtype=dt),
                         nn.Linear(cfg.d_out, cfg.d_out, rng, dtype=dt)]

    def pool_batch(self, tokens: Tensor) -> Tensor:
        """(B, n_in, d_in) grid tokens (no [CLS]) -> (B, n_out, d_in)."""
        if tokens.shape[1] != self.cfg.n_in:
            raise GridMismatchError(
                f"got {tokens.shape[1]} tokens, grid needs {self.cfg.n_in}")
        pool = _pool_blocks if self.cfg.spatial else _pool_sequence
        return pool(tokens, self.cfg)

    def project_batch(self, tokens: Tensor) -> Tensor:
        if tokens.shape[-1] != self.cfg.d_in:
            raise WidthMismatchError(f"width {tokens.shape[-1]}, config wants {self.cfg.d_in}")
        out = self.proj[0](tokens)
        if len(self.proj) == 2:
            out = self.proj[1](out.gelu())
        return out

    def forward_batch(self, vision_tokens: Tensor) -> Tensor:
        """(B, 1 + n_in, d_in) encoder output -> (B, n_out, d_out).

        [CLS] at position 0 is dropped before pooling and never reaches
        the language model.
        """
        return self.project_batch(self.pool_batch(vision_tokens[:, 1:, :]))


def spatial_pool(tokens: EmbeddingSeq, perceiver: Perceiver) -> EmbeddingSeq:
    """Pool a single encoder sequence; drops a leading [CLS] if present."""
    data = tokens.data
    if tokens.roles and tokens.roles[0] == "[CLS]":
        data = data[1:]
    out = perceiver.pool_batch(data.reshape(1, *data.shape))
    out = out.reshape(out.shape[1], out.shape[2])
    return EmbeddingSeq(out, roles=["vision"] * out.shape[0])


def project(tokens: EmbeddingSeq, perceiver: Perceiver) -> EmbeddingSeq:
    out = perceiver.project_batch(tokens.data.reshape(1, *tokens.data.shape))
    out = out.reshape(out.shape[1], out.shape[2])
    return EmbeddingSeq(out, roles=list(tokens.roles))
