"""Training phases: contrastive pretraining, perceiver alignment, instruction tuning.

Phase rules:
  pretrain  - trains vision encoder, text encoder and contrastive head with
              the symmetric InfoNCE loss over matched volume/report pairs.
  stage1    - vision and LM frozen; only the perceiver trains, on next-token
              loss of the report given the projected vision prefix.
  stage2    - instruction tuning: LoRA on the LM base (plus the LM's
              embeddings/positions/head, which are random-init at desk
              scale), perceiver, segmentation head and decoder, and the
              vision encoder when the unlock toggle is set. Records whose
              teacher answer carries [SEG] add the Dice+BCE mask loss.

All runs are deterministic given (seed, config, dataset).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import BatchTooSmallError, ConfigError
from .lora import LoraSpec, lora_wrap, set_lora_training
from .mllm import VlmSystem, assemble_sequence, next_token_loss
from .segmentor import seg_loss
from .tokenizer import SEG
from .volume import Volume


# ---- config -----------------------------------------------------------

@dataclass
class FreezeFlags:
    vision: bool = False
    lm: bool = False
    perceiver: bool = False
    segmentor: bool = False


@dataclass
class AblationToggles:
    """The four configuration axes of the ablation matrix."""

    vision_pretrained: bool = True
    spatial_pooling: bool = True
    mlp_projection: bool = True
    unlock_vision: bool = False


@dataclass
class TrainConfig:
    phase: str = "pretrain"
    batch_size: int = 8
    peak_lr: float = 1e-3
    warmup_frac: float = 0.1
    total_steps: int = 200
    seed: int = 0
    freeze: FreezeFlags = field(default_factory=FreezeFlags)
    ablation: AblationToggles = field(default_factory=AblationToggles)
    lang_weight: float = 1.0
    seg_weight: float = 1.0
    weight_decay: float = 0.01
    lora: LoraSpec = field(default_factory=LoraSpec)

    def __post_init__(self):
        if self.phase not in ("pretrain", "stage1", "stage2"):
            raise ConfigError(f"unknown phase {self.phase!r}")
        if self.phase == "stage1":
            if self.ablation.unlock_vision:
                raise ConfigError("stage1 freezes the vision encoder; unlock_vision is illegal")
            self.freeze.vision = True
            self.freeze.lm = True
        if self.phase == "stage2":
            self.freeze.lm = True  # base LM only trains through LoRA
            self.freeze.vision = not self.ablation.unlock_vision
        if self.batch_size < 1 or self.total_steps < 0:
            raise ConfigError("batch_size must be >= 1 and total_steps >= 0")


def table7_arms() -> list[AblationToggles]:
    """The five configuration arms of the ablation matrix, weakest first."""
    return [
        AblationToggles(vision_pretrained=False, spatial_pooling=True, mlp_projection=True, unlock_vision=False),
        AblationToggles(vision_pretrained=True, spatial_pooling=False, mlp_projection=True, unlock_vision=False),
        AblationToggles(vision_pretrained=True, spatial_pooling=True, mlp_projection=False, unlock_vision=False),
        AblationToggles(vision_pretrained=True, spatial_pooling=True, mlp_projection=True, unlock_vision=False),
        AblationToggles(vision_pretrained=True, spatial_pooling=True, mlp_projection=True, unlock_vision=True),
    ]


# ---- schedule and optimizer --------------------------------------------

def lr_at(step: int, cfg: TrainConfig) -> float:
    """Linear warmup to peak, then cosine decay to zero at total_steps."""
    total = cfg.total_steps
    warmup = int(round(cfg.warmup_frac * total))
    if total == 0:
        return 0.0
    if warmup > 0 and step < warmup:
        return cfg.peak_lr * step / warmup
    span = max(total - warmup, 1)
    progress = (step - warmup) / span
    return cfg.peak_lr * 0.5 * (1.0 + math.cos(math.pi * progress))


class AdamW:
    """Adam with decoupled weight decay; betas (0.9, 0.999).

    Decay applies to weight matrices only; vectors and scalars (biases,
    layer norms, the contrastive temperature) are exempt.
    """

    def __init__(self, params, weight_decay: float = 0.01,
                 betas=(0.9, 0.999), eps: float = 1e-8,
                 lr_scales: dict[int, float] | None = None):
        self.params = [p for p in params if p.requires_grad]
        self.wd = weight_decay
        self.b1, self.b2 = betas
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]
        scales = lr_scales or {}
        self.scales = [float(scales.get(id(p), 1.0)) for p in self.params]

    def step(self, lr: float):
        self.t += 1
        for i, p in enumerate(self.params):
            if p.grad is None:
                continue
            g = p.grad
            self.m[i] = self.b1 * self.m[i] + (1 - self.b1) * g
            self.v[i] = self.b2 * self.v[i] + (1 - self.b2) * g * g
            mhat = self.m[i] / (1 - self.b1 ** self.t)
            vhat = self.v[i] / (1 - self.b2 ** self.t)
            wd = self.wd if p.data.ndim >= 2 else 0.0
            step_lr = lr * self.scales[i]
            p.data = p.data - step_lr * (mhat / (np.sqrt(vhat) + self.eps) + wd * p.data)

    def zero_grad(self):
        for p in self.params:
            p.grad = None


# ---- contrastive loss ---------------------------------------------------

def l2_normalize(x: Tensor) -> Tensor:
    norm = (x * x).sum(axis=-1, keepdims=True) ** 0.5
    return x / norm


def infonce_from_similarity(sims: Tensor, temperature) -> Tensor:
    """Symmetric InfoNCE over a similarity matrix with diagonal targets."""
    n = sims.shape[0]
    logits = sims / temperature
    targets = np.arange(n)
    return (ad.cross_entropy(logits, targets)
            + ad.cross_entropy(logits.swapaxes(0, 1), targets)) * 0.5


def clip_loss(img_feats: Tensor, txt_feats: Tensor, temperature) -> Tensor:
    """Mean of image-to-text and text-to-image cross-entropy over sims/tau.

    Row i of each side is a matched pair; features are L2-normalized here.
    """
    n = img_feats.shape[0]
    if n < 2:
        raise BatchTooSmallError(f"contrastive batch needs n >= 2, got {n}")
    if txt_feats.shape[0] != n:
        raise BatchTooSmallError("image and text batches must pair up")
    sims = l2_normalize(img_feats) @ l2_normalize(txt_feats).swapaxes(0, 1)
    return infonce_from_similarity(sims, temperature)


# ---- phase runners -------------------------------------------------------

@dataclass
class RunResult:
    losses: list[float]
    lrs: list[float]

    def loss_csv(self, phase: str) -> str:
        lines = ["step,phase,loss,lr"]
        for i, (l, r) in enumerate(zip(self.losses, self.lrs)):
            lines.append(f"{i},{phase},{l:.6f},{r:.8f}")
        return "\n".join(lines) + "\n"


def _batches(n_items: int, cfg: TrainConfig, rng: np.random.Generator):
    size = min(cfg.batch_size, n_items)
    for _ in range(cfg.total_steps):
        yield rng.choice(n_items, size=size, replace=False)


def run_pretrain(system: VlmSystem, pairs: list[tuple[Volume, str]],
                 cfg: TrainConfig) -> RunResult:
    """CLIP-style pretraining of vision encoder, text encoder and head."""
    if not pairs:
        raise ConfigError("pretrain needs a nonempty dataset")
    if min(cfg.batch_size, len(pairs)) < 2:
        raise BatchTooSmallError("contrastive training needs batches of >= 2 pairs")
    system.vision.requires_grad_(not cfg.freeze.vision)
    system.text.requires_grad_(True)
    system.contrast.requires_grad_(True)
    params = (system.vision.parameters() + system.text.parameters()
              + system.contrast.parameters())
    # the joint projections chase the moving encoder features; give them a
    # faster clock so separation does not stall on short desk runs
    head_scale = {id(p): 8.0 for p in system.contrast.parameters()}
    opt = AdamW(params, weight_decay=cfg.weight_decay, lr_scales=head_scale)
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 11]))
    losses, lrs = [], []
    vols = np.stack([p[0].data for p in pairs])
    texts = [p[1] for p in pairs]
    for step, idx in enumerate(_batches(len(pairs), cfg, rng)):
        opt.zero_grad()
        img = system.contrast.img_proj(system.vision.forward_batch(vols[idx])[:, 0, :])
        txt = system.contrast.txt_proj(system.text.cls_features([texts[i] for i in idx]))
        loss = clip_loss(img, txt, system.contrast.temperature)
        loss.backward()
        lr = lr_at(step, cfg)
        opt.step(lr)
        system.contrast.clamp_temperature()
        losses.append(loss.item())
        lrs.append(lr)
    return RunResult(losses, lrs)


def _language_step_loss(system: VlmSystem, items: list[tuple[Volume, str, str | None]]):
    """Assemble (volume, instruction, answer) items and compute LM loss."""
    vols = np.stack([v.data for v, _, _ in items])
    tokens = system.vision_tokens(vols)
    batch = []
    for r, (_, instruction, answer) in enumerate(items):
        batch.append(assemble_sequence(tokens[r], instruction, answer,
                                       system.tokenizer, system.lm.cfg.max_ctx))
    return next_token_loss(system.lm, batch, supervise_eos=True), batch


def run_stage1(system: VlmSystem, pairs: list[tuple[Volume, str]],
               cfg: TrainConfig) -> RunResult:
    """Perceiver-only alignment: next-token loss on reports given vision."""
    if cfg.phase != "stage1":
        raise ConfigError("run_stage1 needs a stage1 config")
    system.vision.requires_grad_(False)
    system.lm.requires_grad_(False)
    system.text.requires_grad_(False)
    system.contrast.requires_grad_(False)
    system.segmentor.requires_grad_(False)
    system.seg_head.requires_grad_(False)
    system.perceiver.requires_grad_(not cfg.freeze.perceiver)
    opt = AdamW(system.perceiver.parameters(), weight_decay=cfg.weight_decay)
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 12]))
    losses, lrs = [], []
    for step, idx in enumerate(_batches(len(pairs), cfg, rng)):
        opt.zero_grad()
        items = [(pairs[i][0], "", pairs[i][1]) for i in idx]
        (loss, _, _), _ = _language_step_loss(system, items)
        loss.backward()
        lr = lr_at(step, cfg)
        opt.step(lr)
        losses.append(loss.item())
        lrs.append(lr)
    return RunResult(losses, lrs)


def stage2_trainable_parameters(system: VlmSystem, cfg: TrainConfig) -> list:
    """Apply stage-2 freeze policy and return the trainable parameter list."""
    system.vision.requires_grad_(not cfg.freeze.vision)
    system.text.requires_grad_(False)
    system.contrast.requires_grad_(False)
    system.perceiver.requires_grad_(not cfg.freeze.perceiver)
    system.segmentor.requires_grad_(not cfg.freeze.segmentor)
    system.seg_head.requires_grad_(True)
    # LM base stays frozen under LoRA; embeddings, positions, final norm and
    # head train full-rank because the desk LM starts from random init.
    system.lm.requires_grad_(False)
    for name, p in system.lm.named_parameters():
        if "lora_" in name:
            p.requires_grad = True
        elif name.startswith(("tok_emb.", "pos", "ln_out.", "lm_head.")):
            p.requires_grad = True
    return [p for p in system.parameters() if p.requires_grad]


def run_stage2(system: VlmSystem, dataset, cfg: TrainConfig) -> RunResult:
    """Instruction tuning with the mixed language + segmentation objective.

    ``dataset`` is an InstructionDataset: indexable records plus volume()
    and mask() loaders.
    """
    if cfg.phase != "stage2":
        raise ConfigError("run_stage2 needs a stage2 config")
    if len(dataset) == 0:
        raise ConfigError("stage2 needs a nonempty instruction dataset")
    if system.config.lora is None:
        lora_wrap(system.lm, cfg.lora, seed=cfg.seed)
        system.config.lora = cfg.lora
    params = stage2_trainable_parameters(system, cfg)
    set_lora_training(system.lm, True)
    opt = AdamW(params, weight_decay=cfg.weight_decay)
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 13]))
    losses, lrs = [], []
    try:
        for step, idx in enumerate(_batches(len(dataset), cfg, rng)):
            opt.zero_grad()
            records = [dataset[i] for i in idx]
            items = [(dataset.volume(r), r.prompt_text(), r.answer) for r in records]
            (lang, hidden, _), batch = _language_step_loss(system, items)
            loss = cfg.lang_weight * lang
            seg_terms = []
            for r, (rec, asm) in enumerate(zip(records, batch)):
                if rec.mask is None or SEG not in asm.text_ids:
                    continue
                pos = 1 + asm.n_vision + int(np.nonzero(asm.text_ids == SEG)[0][0])
                prompt = system.seg_head(hidden[r, pos, :])
                logits = system.segmentor.prompt_segment(dataset.volume(rec), prompt)
                seg_terms.append(seg_loss(logits, dataset.mask(rec)))
            if seg_terms:
                total_seg = seg_terms[0]
                for t in seg_terms[1:]:
                    total_seg = total_seg + t
                loss = loss + cfg.seg_weight * (total_seg / len(seg_terms))
            loss.backward()
            lr = lr_at(step, cfg)
            opt.step(lr)
            losses.append(loss.item())
            lrs.append(lr)
    finally:
        set_lora_training(system.lm, False)
    return RunResult(losses, lrs)
