"""Low-rank adapters on the LM's attention projection maps.

Effective weight is W + (alpha/r) * A @ B with A (d_in, r) random and
B (r, d_out) zero-initialized, so a freshly wrapped model computes exactly
the base model's outputs. ``lora_wrap`` freezes every existing LM
parameter and leaves only the adapter factors trainable.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import nn
from .autodiff import Tensor
from .lm import CausalLM


@dataclass
class LoraSpec:
    rank: int = 16
    alpha: float = 32.0
    dropout: float = 0.1
    targets: tuple[str, ...] = ("wq", "wk", "wv", "wo")


class LoraLinear(nn.Module):
    """A frozen Linear plus a trainable low-rank residual path."""

    def __init__(self, base: nn.Linear, spec: LoraSpec, rng: np.random.Generator):
        dt = base.weight.data.dtype
        self.base = base
        self.lora_a = nn.Parameter(
            rng.normal(0, 1.0 / np.sqrt(spec.rank), size=(base.d_in, spec.rank)).astype(dt))
        self.lora_b = nn.Parameter(np.zeros((spec.rank, base.d_out), dtype=dt))
        self.scaling = spec.alpha / spec.rank
        self.dropout = spec.dropout
        self.training = False
        self._rng = rng

    def __call__(self, x: Tensor) -> Tensor:
        out = self.base(x)
        path = x
        if self.training and self.dropout > 0:
            keep = 1.0 - self.dropout
            mask = (self._rng.random(x.shape) < keep).astype(x.data.dtype) / keep
            path = path * Tensor(mask)
        return out + (path @ self.lora_a @ self.lora_b) * self.scaling


def lora_wrap(lm: CausalLM, spec: LoraSpec, seed: int = 0) -> CausalLM:
    """Freeze the LM and install adapters on the targeted attention maps."""
    lm.requires_grad_(False)
    rng = np.random.default_rng(np.random.SeedSequence([seed, spec.rank]))
    for blk in lm.blocks:
        for name in spec.targets:
            base = getattr(blk.attn, name)
            if isinstance(base, LoraLinear):
                continue
            if not isinstance(base, nn.Linear):
                raise ValueError(f"target {name!r} is not a Linear")
            setattr(blk.attn, name, LoraLinear(base, spec, rng))
    return lm


def lora_parameters(lm: CausalLM) -> list[nn.Parameter]:
    out = []
    for name, p in lm.named_parameters():
        if "lora_a" in name or "lora_b" in name:
            out.append(p)
    return out


def expected_trainable_count(lm: CausalLM, spec: LoraSpec) -> int:
    """Closed form: sum over targets of r * (d_in + d_out)."""
    total = 0
    for blk in lm.blocks:
        for name in spec.targets:
            mod = getattr(blk.attn, name)
            base = mod.base if isinstance(mod, LoraLinear) else mod
            total += spec.rank * (base.d_in + base.d_out)
    return total


def set_lora_training(lm: CausalLM, flag: bool) -> None:
    for blk in lm.blocks:
        for name in ("wq", "wk", "wv", "wo"):
            mod = getattr(blk.attn, name, None)
            if isinstance(mod, LoraLinear):
                mod.training = flag
