"""3D vision transformer over volumetric patches and a text encoder.

Both encoders prepend a [CLS] slot whose final embedding is the global
feature used for contrastive training and retrieval. The vision encoder
flattens non-overlapping (P_D, P_H, P_W) patches in depth-major order,
projects them and runs pre-norm transformer blocks with learned positions.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from . import nn
from .autodiff import Tensor
from .errors import NonDivisibleShapeError, ShapeMismatchError
from .tokenizer import CLS, Tokenizer, default_tokenizer
from .volume import Volume


@dataclass
class ViTConfig:
    channels: int = 1
    depth: int = 16
    height: int = 64
    width: int = 64
    patch: tuple[int, int, int] = (8, 8, 8)
    layers: int = 4
    dim: int = 96
    heads: int = 4
    mlp_ratio: int = 4
    # patch features = per-volume z-scored voxels (angular separability for
    # contrastive training) plus soft intensity histograms of the raw patch
    # and of the whole volume (absolute intensity identity; the global
    # histogram rides on every token so presence information survives
    # pooling). bins=0 disables both. The gain balances the histograms'
    # variance share against the voxel features under a random projection.
    intensity_bins: int = 21
    bin_sigma: float = 0.02
    bin_gain: float = 32.0
    dtype: type = np.float32

    def __post_init__(self):
        pd, ph, pw = self.patch
        if self.depth % pd or self.height % ph or self.width % pw:
            raise NonDivisibleShapeError(
                f"dims ({self.depth},{self.height},{self.width}) not divisible by patch {self.patch}")
        if self.dim % self.heads:
            raise ValueError(f"dim {self.dim} not divisible by {self.heads} heads")

    @property
    def grid(self) -> tuple[int, int, int]:
        pd, ph, pw = self.patch
        return (self.depth // pd, self.height // ph, self.width // pw)

    @property
    def n_patches(self) -> int:
        gd, gh, gw = self.grid
        return gd * gh * gw

    @property
    def patch_scalars(self) -> int:
        pd, ph, pw = self.patch
        return self.channels * pd * ph * pw

    @property
    def patch_features(self) -> int:
        return self.patch_scalars + 2 * self.intensity_bins


def paper_scale_vit_config() -> ViTConfig:
    """The full-size configuration: 1x32x256x256 input, 2048 patch tokens."""
    return ViTConfig(channels=1, depth=32, height=256, width=256,
                     patch=(4, 16, 16), layers=12, dim=768, heads=12)


@dataclass
class EmbeddingSeq:
    """Ordered sequence of fixed-width feature vectors with role markers."""

    data: Tensor
    roles: list[str] = field(default_factory=list)

    def __post_init__(self):
        if not isinstance(self.data, Tensor):
            self.data = Tensor(np.asarray(self.data))
        if self.data.ndim != 2:
            raise ShapeMismatchError(f"embedding sequence needs (n, d), got {self.data.shape}")
        if not self.roles:
            self.roles = ["token"] * self.data.shape[0]
        if len(self.roles) != self.data.shape[0]:
            raise ShapeMismatchError("one role per position required")

    @property
    def length(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    def array(self) -> np.ndarray:
        return self.data.data


def patchify_array(vol: np.ndarray, patch: tuple[int, int, int]) -> np.ndarray:
    """(C, D, H, W) -> (n, C*pd*ph*pw), depth-major then height then width."""
    c, d, h, w = vol.shape
    pd, ph, pw = patch
    if d % pd or h % ph or w % pw:
        raise NonDivisibleShapeError(f"shape {vol.shape} not divisible by patch {patch}")
    x = vol.reshape(c, d // pd, pd, h // ph, ph, w // pw, pw)
    x = x.transpose(1, 3, 5, 0, 2, 4, 6)
    return np.ascontiguousarray(x.reshape(-1, c * pd * ph * pw))


def unpatchify_array(patches: np.ndarray, patch: tuple[int, int, int],
                     channels: int, dims: tuple[int, int, int]) -> np.ndarray:
    """Inverse of patchify_array; lossless reordering back to (C, D, H, W)."""
    d, h, w = dims
    pd, ph, pw = patch
    x = patches.reshape(d // pd, h // ph, w // pw, channels, pd, ph, pw)
    x = x.transpose(3, 0, 4, 1, 5, 2, 6)
    return np.ascontiguousarray(x.reshape(channels, d, h, w))


def patchify(v: Volume, cfg: ViTConfig) -> EmbeddingSeq:
    """Pre-projection patches of a volume as an embedding sequence."""
    if v.shape != (cfg.channels, cfg.depth, cfg.height, cfg.width):
        raise ShapeMismatchError(f"volume {v.shape} does not match config")
    arr = patchify_array(v.data.astype(cfg.dtype), cfg.patch)
    return EmbeddingSeq(Tensor(arr), roles=["vision"] * arr.shape[0])


class VisionTransformer3D(nn.Module):
    """3D ViT producing (n_patches + 1) tokens; position 0 is [CLS]."""

    def __init__(self, cfg: ViTConfig, rng: np.random.Generator):
        self.cfg = cfg
        dt = cfg.dtype
        self.patch_proj = nn.Linear(cfg.patch_features, cfg.dim, rng, dtype=dt)
        self.cls_token = nn.Parameter(rng.normal(0, 0.02, size=(1, cfg.dim)).astype(dt))
        self.pos = nn.Parameter(rng.normal(0, 0.02, size=(cfg.n_patches + 1, cfg.dim)).astype(dt))
        self.blocks = [nn.TransformerBlock(cfg.dim, cfg.heads, rng, cfg.mlp_ratio, dtype=dt)
                       for _ in range(cfg.layers)]
        self.ln_out = nn.LayerNorm(cfg.dim, dtype=dt)

    def forward_batch(self, volumes: np.ndarray) -> Tensor:
        """(B, C, D, H, W) -> (B, n_patches + 1, dim), [CLS] first."""
        cfg = self.cfg
        if volumes.ndim == 4:
            volumes = volumes[None]
        if volumes.shape[1:] != (cfg.channels, cfg.depth, cfg.height, cfg.width):
            raise ShapeMismatchError(f"batch {volumes.shape} does not match config")
        b = volumes.shape[0]
        flat = np.stack([patchify_array(v.astype(cfg.dtype), cfg.patch) for v in volumes])
        feats = flat
        mu = flat.mean(axis=(1, 2), keepdims=True)
        sd = np.maximum(flat.std(axis=(1, 2), keepdims=True), 1e-6)
        zs = (flat - mu) / sd
        if cfg.intensity_bins:
            centers = np.linspace(0.0, 1.0, cfg.intensity_bins, dtype=cfg.dtype)
            hist = np.exp(-((flat[..., None] - centers) ** 2)
                          / (2.0 * cfg.bin_sigma ** 2)).mean(axis=2)
            vol_hist = hist.mean(axis=1, keepdims=True)
            vol_hist = vol_hist / np.maximum(
                np.linalg.norm(vol_hist, axis=-1, keepdims=True), 1e-8)
            vol_hist = np.broadcast_to(vol_hist, hist.shape)
            feats = np.concatenate([zs, cfg.bin_gain * hist,
                                    cfg.bin_gain * vol_hist], axis=-1)
        else:
            feats = zs
        x = self.patch_proj(Tensor(feats))
        cls = ad.take_rows(self.cls_token, np.zeros((b, 1), dtype=np.int64))
        x = ad.concat([cls, x], axis=1)
        x = x + self.pos
        for blk in self.blocks:
            x = blk(x)
        return self.ln_out(x)

    def encode(self, v: Volume) -> EmbeddingSeq:
        out = self.forward_batch(v.data[None])
        roles = ["[CLS]"] + ["vision"] * self.cfg.n_patches
        return EmbeddingSeq(out.reshape(out.shape[1], out.shape[2]), roles=roles)


def vit_encode(v: Volume, model: VisionTransformer3D) -> EmbeddingSeq:
    return model.encode(v)


@dataclass
class TextEncoderConfig:
    layers: int = 4
    dim: int = 96
    heads: int = 4
    max_len: int = 128
    vocab_size: int = 4096
    mlp_ratio: int = 4
    dtype: type = np.float32


def paper_scale_text_config() -> TextEncoderConfig:
    return TextEncoderConfig(layers=12, dim=768, heads=12)


class TextEncoder(nn.Module):
    """Bidirectional transformer over tokenized text; [CLS] prepended."""

    def __init__(self, cfg: TextEncoderConfig, rng: np.random.Generator,
                 tokenizer: Tokenizer | None = None):
        self.cfg = cfg
        dt = cfg.dtype
        self.tokenizer = tokenizer or default_tokenizer()
        self.tok_emb = nn.Embedding(cfg.vocab_size, cfg.dim, rng, dtype=dt)
        self.pos = nn.Parameter(rng.normal(0, 0.02, size=(cfg.max_len + 1, cfg.dim)).astype(dt))
        self.blocks = [nn.TransformerBlock(cfg.dim, cfg.heads, rng, cfg.mlp_ratio, dtype=dt)
                       for _ in range(cfg.layers)]
        self.ln_out = nn.LayerNorm(cfg.dim, dtype=dt)

    def prepare_ids(self, text: str) -> np.ndarray:
        """[CLS] + tokens truncated to max_len."""
        ids = self.tokenizer.encode(text, max_len=self.cfg.max_len)
        return np.concatenate([[CLS], ids]).astype(np.int64)

    def forward_batch(self, texts: list[str]) -> tuple[Tensor, np.ndarray]:
        """Returns ((B, n, dim) hidden states, (B,) true lengths).

        Rows are padded to the longest sequence; padded key positions are
        masked out of attention so padding never leaks into [CLS].
        """
        ids_list = [self.prepare_ids(t) for t in texts]
        lengths = np.asarray([len(i) for i in ids_list])
        n = int(lengths.max())
        ids = np.zeros((len(texts), n), dtype=np.int64)
        for r, row in enumerate(ids_list):
            ids[r, :len(row)] = row
        x = self.tok_emb(ids) + self.pos[:n]
        mask = nn.key_padding_mask(lengths, n)
        for blk in self.blocks:
            x = blk(x, mask)
        return self.ln_out(x), lengths

    def encode(self, text: str) -> EmbeddingSeq:
        out, lengths = self.forward_batch([text])
        n = int(lengths[0])
        roles = ["[CLS]"] + ["text"] * (n - 1)
        return EmbeddingSeq(out[0, :n], roles=roles)

    def cls_features(self, texts: list[str]) -> Tensor:
        out, _ = self.forward_batch(texts)
        return out[:, 0, :]


def text_encode(text: str, model: TextEncoder) -> EmbeddingSeq:
    return model.encode(text)
