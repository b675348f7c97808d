"""Promptable volumetric segmentation decoder with Dice+BCE training loss.

A lightweight encoder downsamples the volume with stride-2 space-to-depth
convolutions (each stage is exactly a kernel=stride=2 conv realized as a
reshape plus linear map); the prompt vector conditions the bottleneck by
feature-wise affine modulation; a mirrored decoder with skip connections
upsamples back to one logit per voxel. sigmoid(logit) > 0.5 defines the
predicted mask.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import nn
from .autodiff import Tensor
from .errors import ShapeMismatchError, WidthMismatchError
from .volume import Volume, VoxelMask

DICE_EPS = 1e-5


@dataclass
class SegmentorConfig:
    in_channels: int = 1
    widths: tuple[int, int, int] = (16, 32, 64)
    prompt_width: int = 64
    intensity_bins: int = 16  # fixed Gaussian intensity encoding per voxel
    bin_sigma: float = 0.05
    dtype: type = np.float32

    @property
    def feature_channels(self) -> int:
        return self.in_channels * (1 + self.intensity_bins)


def _space_to_depth(x: Tensor) -> Tensor:
    """(B, D, H, W, C) -> (B, D/2, H/2, W/2, 8C)."""
    b, d, h, w, c = x.shape
    x = x.reshape(b, d // 2, 2, h // 2, 2, w // 2, 2, c)
    x = x.transpose(0, 1, 3, 5, 2, 4, 6, 7)
    return x.reshape(b, d // 2, h // 2, w // 2, 8 * c)


def _depth_to_space(x: Tensor) -> Tensor:
    """(B, D, H, W, 8C) -> (B, 2D, 2H, 2W, C)."""
    b, d, h, w, c8 = x.shape
    c = c8 // 8
    x = x.reshape(b, d, h, w, 2, 2, 2, c)
    x = x.transpose(0, 1, 4, 2, 5, 3, 6, 7)
    return x.reshape(b, 2 * d, 2 * h, 2 * w, c)


class PromptableSegmentor(nn.Module):
    def __init__(self, cfg: SegmentorConfig, rng: np.random.Generator):
        self.cfg = cfg
        dt = cfg.dtype
        w1, w2, w3 = cfg.widths
        self.enc1 = nn.Linear(cfg.feature_channels * 8, w1, rng, dtype=dt)
        self.enc2 = nn.Linear(w1 * 8, w2, rng, dtype=dt)
        self.enc3 = nn.Linear(w2 * 8, w3, rng, dtype=dt)
        self.film_scale = nn.Linear(cfg.prompt_width, w3, rng, dtype=dt)
        self.film_shift = nn.Linear(cfg.prompt_width, w3, rng, dtype=dt)
        self.film2 = nn.Linear(cfg.prompt_width, w2, rng, dtype=dt)
        self.film1 = nn.Linear(cfg.prompt_width, w1, rng, dtype=dt)
        self.mix = nn.Linear(w3, w3, rng, dtype=dt)
        self.dec3 = nn.Linear(w3, w2 * 8, rng, dtype=dt)
        self.fuse2 = nn.Linear(w2 * 2, w2, rng, dtype=dt)
        self.dec2 = nn.Linear(w2, w1 * 8, rng, dtype=dt)
        # finest fuse also sees the raw 2x2x2 voxel block, so per-voxel
        # logits can follow intensity boundaries exactly
        self.fuse1 = nn.Linear(w1 * 2 + cfg.feature_channels * 8, w1, rng, dtype=dt)
        self.sharpen = nn.Linear(w1, w1, rng, dtype=dt)
        self.dec1 = nn.Linear(w1, 8, rng, dtype=dt)

    def forward_batch(self, volumes: np.ndarray, prompts: Tensor) -> Tensor:
        """(B, C, D, H, W) + (B, prompt_width) -> logits (B, D, H, W)."""
        cfg = self.cfg
        if volumes.ndim == 4:
            volumes = volumes[None]
        b, c, d, h, w = volumes.shape
        if c != cfg.in_channels:
            raise ShapeMismatchError(f"expected {cfg.in_channels} channels, got {c}")
        if d % 8 or h % 8 or w % 8:
            raise ShapeMismatchError(f"spatial dims {d, h, w} must be divisible by 8")
        if prompts.ndim == 1:
            prompts = prompts.reshape(1, prompts.shape[0])
        if prompts.shape[-1] != cfg.prompt_width:
            raise WidthMismatchError(
                f"prompt width {prompts.shape[-1]}, config wants {cfg.prompt_width}")

        feats = self._voxel_features(volumes)
        x = Tensor(np.ascontiguousarray(feats))
        raw = _space_to_depth(x)
        f1 = self.enc1(raw).gelu()
        f2 = self.enc2(_space_to_depth(f1)).gelu()
        f3 = self.enc3(_space_to_depth(f2)).gelu()

        scale = self.film_scale(prompts).reshape(b, 1, 1, 1, cfg.widths[2])
        shift = self.film_shift(prompts).reshape(b, 1, 1, 1, cfg.widths[2])
        f3 = f3 * (1.0 + scale) + shift
        f3 = self.mix(f3).gelu()

        u2 = _depth_to_space(self.dec3(f3))
        u2 = self.fuse2(ad.concat([u2, f2], axis=-1)).gelu()
        u2 = u2 + self.film2(prompts).reshape(b, 1, 1, 1, cfg.widths[1])
        u1 = _depth_to_space(self.dec2(u2))
        u1 = self.fuse1(ad.concat([u1, f1, raw], axis=-1)).gelu()
        u1 = u1 + self.film1(prompts).reshape(b, 1, 1, 1, cfg.widths[0])
        u1 = self.sharpen(u1).gelu()
        logits = _depth_to_space(self.dec1(u1))
        return logits.reshape(b, d, h, w)

    def _voxel_features(self, volumes: np.ndarray) -> np.ndarray:
        """(B, C, D, H, W) -> (B, D, H, W, C*(1+bins)) channel-last features.

        Each voxel value is joined by a fixed bank of Gaussian bumps over
        [0, 1] so an intensity band is linearly selectable downstream.
        """
        cfg = self.cfg
        x = volumes.transpose(0, 2, 3, 4, 1).astype(cfg.dtype)
        if cfg.intensity_bins == 0:
            return x
        centers = np.linspace(0.0, 1.0, cfg.intensity_bins, dtype=cfg.dtype)
        bumps = np.exp(-((x[..., None] - centers) ** 2) / (2.0 * cfg.bin_sigma ** 2))
        b, d, h, w, c = x.shape
        return np.concatenate([x, bumps.reshape(b, d, h, w, c * cfg.intensity_bins)], axis=-1)

    def prompt_segment(self, v: Volume, prompt: Tensor) -> Tensor:
        """Single volume + prompt vector -> logits grid (D, H, W)."""
        out = self.forward_batch(v.data[None], prompt)
        return out.reshape(out.shape[1], out.shape[2], out.shape[3])


def predicted_mask(logits: np.ndarray) -> VoxelMask:
    # sigmoid(x) > 0.5 is exactly x > 0
    return VoxelMask((logits > 0).astype(np.uint8))


def seg_loss(logits: Tensor, target: VoxelMask | np.ndarray) -> Tensor:
    """Soft-Dice loss plus voxel-mean BCE, both terms weight 1.

    The Dice ratio carries the stabilizer in numerator and denominator,
    (2*sum(p*g) + eps) / (sum(p) + sum(g) + eps), so an empty target with
    confidently negative logits costs ~0 instead of 1.
    """
    tgt = target.data if isinstance(target, VoxelMask) else np.asarray(target)
    if logits.shape != tgt.shape:
        raise ShapeMismatchError(f"logits {logits.shape} vs target {tgt.shape}")
    tgt = tgt.astype(logits.data.dtype)
    p = logits.sigmoid()
    inter = (p * tgt).sum()
    denom = p.sum() + float(tgt.sum())
    dice_term = 1.0 - (2.0 * inter + DICE_EPS) / (denom + DICE_EPS)
    return dice_term + ad.bce_with_logits(logits, tgt)
