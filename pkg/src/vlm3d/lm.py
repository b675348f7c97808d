"""Desk-scale causal language model: decoder blocks, greedy/top-p decoding.

The LM consumes embedding sequences directly (vision tokens are spliced in
as embeddings by the multimodal assembly), adds learned positions, applies
causally masked pre-norm blocks and projects to vocabulary scores.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from . import nn
from .autodiff import Tensor
from .tokenizer import EOS, SEG, Tokenizer, default_tokenizer


@dataclass
class LmConfig:
    layers: int = 4
    dim: int = 256
    heads: int = 4
    vocab_size: int = 4096
    max_ctx: int = 512
    mlp_ratio: int = 4
    dtype: type = np.float32


@dataclass
class GenerationResult:
    """Outcome of one decoding session."""

    token_ids: list[int]
    text: str
    hidden: Tensor  # (n_emitted, dim) final-layer states at each emitted position
    seg_positions: list[int] = field(default_factory=list)  # indices into token_ids


class CausalLM(nn.Module):
    def __init__(self, cfg: LmConfig, rng: np.random.Generator,
                 tokenizer: Tokenizer | None = None):
        self.cfg = cfg
        dt = cfg.dtype
        self.tokenizer = tokenizer or default_tokenizer()
        self.tok_emb = nn.Embedding(cfg.vocab_size, cfg.dim, rng, dtype=dt)
        self.pos = nn.Parameter(rng.normal(0, 0.02, size=(cfg.max_ctx, cfg.dim)).astype(dt))
        self.blocks = [nn.TransformerBlock(cfg.dim, cfg.heads, rng, cfg.mlp_ratio, dtype=dt)
                       for _ in range(cfg.layers)]
        self.ln_out = nn.LayerNorm(cfg.dim, dtype=dt)
        self.lm_head = nn.Linear(cfg.dim, cfg.vocab_size, rng, dtype=dt)

    def embed_ids(self, ids: np.ndarray) -> Tensor:
        return self.tok_emb(ids)

    def forward_embeds(self, embeds: Tensor) -> tuple[Tensor, Tensor]:
        """(B, n, dim) input embeddings -> (vocab scores, final hidden states).

        Causal masking: position t attends only to positions <= t.
        """
        b, n, d = embeds.shape
        if n > self.cfg.max_ctx:
            raise ValueError(f"sequence length {n} exceeds context {self.cfg.max_ctx}")
        x = embeds + self.pos[:n]
        mask = nn.causal_mask(n)
        for blk in self.blocks:
            x = blk(x, mask)
        hidden = self.ln_out(x)
        return self.lm_head(hidden), hidden

    def forward_ids(self, ids: np.ndarray) -> tuple[Tensor, Tensor]:
        if ids.ndim == 1:
            ids = ids[None]
        return self.forward_embeds(self.embed_ids(ids))


def _top_p_pick(logits: np.ndarray, p: float, rng: np.random.Generator) -> int:
    z = logits - logits.max()
    probs = np.exp(z)
    probs /= probs.sum()
    order = np.argsort(-probs, kind="stable")
    csum = np.cumsum(probs[order])
    keep = int(np.searchsorted(csum, p) + 1)
    nucleus = order[:keep]
    w = probs[nucleus] / probs[nucleus].sum()
    return int(rng.choice(nucleus, p=w))


def generate(lm: CausalLM, prefix_embeds: Tensor, max_new_tokens: int = 32,
             mode: str = "greedy", top_p: float = 0.9,
             rng: np.random.Generator | None = None) -> GenerationResult:
    """Decode from a prefix of embeddings; stops at EOS or the cap.

    Greedy mode is fully deterministic. The returned hidden states are the
    final-layer states at each emitted token's own position, computed with
    a full forward over the finished sequence (the same convention the
    teacher-forced training path uses).
    """
    if mode not in ("greedy", "top-p"):
        raise ValueError(f"unknown decode mode {mode!r}")
    if mode == "top-p" and rng is None:
        rng = np.random.default_rng(0)
    emitted: list[int] = []
    with ad.no_grad():
        embeds = prefix_embeds
        if embeds.ndim == 2:
            embeds = embeds.reshape(1, *embeds.shape)
        room = lm.cfg.max_ctx - embeds.shape[1]
        for _ in range(min(max_new_tokens, max(room, 0))):
            logits, _ = lm.forward_embeds(embeds)
            row = logits.data[0, -1]
            nxt = int(row.argmax()) if mode == "greedy" else _top_p_pick(row, top_p, rng)
            if nxt == EOS:
                break
            emitted.append(nxt)
            nxt_emb = lm.embed_ids(np.asarray([[nxt]], dtype=np.int64))
            embeds = ad.concat([embeds, nxt_emb], axis=1)
        if emitted:
            _, hidden = lm.forward_embeds(embeds)
            start = embeds.shape[1] - len(emitted)
            gen_hidden = hidden[0, start:, :]
        else:
            gen_hidden = Tensor(np.zeros((0, lm.cfg.dim), dtype=lm.cfg.dtype))
    text = lm.tokenizer.decode(emitted)
    seg_positions = [i for i, t in enumerate(emitted) if t == SEG]
    return GenerationResult(token_ids=emitted, text=text,
                            hidden=gen_hidden, seg_positions=seg_positions)
