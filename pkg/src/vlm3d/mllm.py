"""Multimodal wiring: vision prefix assembly, [SEG] extraction, box parsing.

Sequence layout is [BOS, vision tokens, instruction tokens, answer tokens,
EOS], truncated to the LM context. The loss mask marks answer-token
positions only. When the model emits [SEG], the final-layer hidden state at
the first [SEG] position is projected by a two-layer head into the prompt
vector that drives the segmentation decoder.
"""

from __future__ import annotations

import json
import re
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from . import nn
from .autodiff import Tensor
from .encoders import (TextEncoder, TextEncoderConfig, ViTConfig,
                       VisionTransformer3D)
from .errors import ContextOverflowError, UnparseableError, WidthMismatchError
from .lm import CausalLM, GenerationResult, LmConfig, generate
from .lora import LoraSpec, lora_wrap
from .perceiver import Perceiver, PerceiverConfig
from .segmentor import PromptableSegmentor, SegmentorConfig
from .tokenizer import BOS, EOS, PAD, SEG, Tokenizer, default_tokenizer
from .volume import Box3D, Volume

_NUMBER = re.compile(r"-?(?:\d+\.\d+|\.\d+|\d+)")


def parse_box_text(text: str) -> Box3D:
    """Extract six decimals in order and validate them as a Box3D."""
    nums = _NUMBER.findall(text)
    if len(nums) < 6:
        raise UnparseableError(f"found {len(nums)} numbers, need 6: {text!r}")
    x1, y1, z1, x2, y2, z2 = (float(v) for v in nums[:6])
    return Box3D(x1, y1, z1, x2, y2, z2)  # raises InvalidBoxError on bad ordering


class SegPromptHead(nn.Module):
    """Two-layer projection from LM width to the segmentor prompt width."""

    def __init__(self, lm_dim: int, prompt_width: int, rng: np.random.Generator,
                 dtype=np.float32):
        hidden = max(lm_dim // 2, prompt_width)
        self.fc1 = nn.Linear(lm_dim, hidden, rng, dtype=dtype)
        self.fc2 = nn.Linear(hidden, prompt_width, rng, dtype=dtype)

    def __call__(self, h: Tensor) -> Tensor:
        return self.fc2(self.fc1(h).gelu())


@dataclass
class AssembledInput:
    """One training/inference example in LM-ready form."""

    vision: Tensor            # (V, lm_dim) projected vision tokens
    text_ids: np.ndarray      # instruction (+ answer + EOS) token ids
    n_vision: int
    n_instruction: int
    n_answer: int
    loss_mask: np.ndarray     # (length,) bool, True exactly at answer-token positions

    @property
    def length(self) -> int:
        return 1 + self.n_vision + len(self.text_ids)

    @property
    def eos_position(self) -> int | None:
        """Sequence position of the terminating EOS, when present."""
        if self.n_answer == 0:
            return None
        idx = np.nonzero(self.text_ids == EOS)[0]
        return int(1 + self.n_vision + idx[-1]) if idx.size else None


def assemble_sequence(vision: Tensor, instruction: str, answer: str | None,
                      tokenizer: Tokenizer, max_ctx: int = 512) -> AssembledInput:
    """Build [BOS, vision, instruction, answer?, EOS] truncated to context.

    Raises ContextOverflow when BOS + vision + instruction alone exceed the
    context; an over-long answer is truncated instead.
    """
    if vision.ndim != 2:
        raise ValueError("vision tokens must be (V, lm_dim)")
    v = vision.shape[0]
    inst_ids = tokenizer.encode(instruction)
    base = 1 + v + len(inst_ids)
    if base > max_ctx:
        raise ContextOverflowError(
            f"vision ({v}) + instruction ({len(inst_ids)}) + BOS = {base} > {max_ctx}")
    if answer is None:
        text_ids = inst_ids
        n_answer = 0
    else:
        ans_ids = tokenizer.encode(answer)
        room = max_ctx - base - 1  # reserve the EOS slot
        ans_ids = ans_ids[:room]
        n_answer = len(ans_ids)
        text_ids = np.concatenate([inst_ids, ans_ids, [EOS]]).astype(np.int64)
    mask = np.zeros(1 + v + len(text_ids), dtype=bool)
    if n_answer:
        start = 1 + v + len(inst_ids)
        mask[start:start + n_answer] = True
    return AssembledInput(vision=vision, text_ids=np.asarray(text_ids, dtype=np.int64),
                          n_vision=v, n_instruction=len(inst_ids),
                          n_answer=n_answer, loss_mask=mask)


def collate(batch: list[AssembledInput], lm: CausalLM) -> tuple[Tensor, np.ndarray, np.ndarray]:
    """Pad a batch into (embeds (B,T,d), token ids (B,T), lengths (B,)).

    Vision spans hold PAD in the id grid; ids are only consulted at text
    positions. All samples must carry the same vision token count.
    """
    v = batch[0].n_vision
    if any(s.n_vision != v for s in batch):
        raise ValueError("mixed vision token counts in one batch")
    t_max = max(s.length for s in batch)
    b = len(batch)
    ids = np.full((b, t_max), PAD, dtype=np.int64)
    for r, s in enumerate(batch):
        ids[r, 0] = BOS
        ids[r, 1 + v:s.length] = s.text_ids
    bos_emb = lm.embed_ids(ids[:, :1])
    vision = ad.concat([s.vision.reshape(1, v, -1) for s in batch], axis=0)
    text_emb = lm.embed_ids(ids[:, 1 + v:])
    embeds = ad.concat([bos_emb, vision, text_emb], axis=1)
    lengths = np.asarray([s.length for s in batch])
    return embeds, ids, lengths


def next_token_loss(lm: CausalLM, batch: list[AssembledInput],
                    supervise_eos: bool = False) -> tuple[Tensor, Tensor, np.ndarray]:
    """Teacher-forced loss over each sample's loss-mask positions.

    Returns (scalar loss, final hidden states (B,T,d), target position mask
    (B,T)). Positions t in the mask are predicted from logits at t-1.
    ``supervise_eos`` additionally trains the terminating EOS so decoding
    learns to stop.
    """
    embeds, ids, _ = collate(batch, lm)
    b, t = ids.shape
    mask = np.zeros((b, t), dtype=bool)
    for r, s in enumerate(batch):
        mask[r, :s.length] = s.loss_mask
        if supervise_eos:
            pos = s.eos_position
            if pos is not None:
                mask[r, pos] = True
    logits, hidden = lm.forward_embeds(embeds)
    rows, cols = np.nonzero(mask)
    if rows.size == 0:
        return Tensor(np.zeros((), dtype=lm.cfg.dtype)), hidden, mask
    flat = logits.reshape(b * t, lm.cfg.vocab_size)
    picked = flat[rows * t + (cols - 1), :]
    loss = ad.cross_entropy(picked, ids[rows, cols])
    return loss, hidden, mask


def extract_seg_prompt(result: GenerationResult, seg_head: SegPromptHead) -> Tensor | None:
    """Prompt vector from the first emitted [SEG], or None when absent."""
    if not result.seg_positions:
        return None
    if len(result.seg_positions) > 1:
        warnings.warn(f"{len(result.seg_positions)} [SEG] tokens emitted; using the first",
                      stacklevel=2)
    pos = result.seg_positions[0]
    return seg_head(result.hidden[pos, :])


@dataclass
class SystemConfig:
    """Architecture of the full desk system, checkpoint-embeddable."""

    vit: ViTConfig = field(default_factory=ViTConfig)
    text: TextEncoderConfig = field(default_factory=TextEncoderConfig)
    perceiver: PerceiverConfig = field(default_factory=PerceiverConfig)
    lm: LmConfig = field(default_factory=LmConfig)
    segmentor: SegmentorConfig = field(default_factory=SegmentorConfig)
    joint_width: int = 128
    prompt_width: int = 64
    lora: LoraSpec | None = None
    seed: int = 0

    def __post_init__(self):
        if self.perceiver.grid != self.vit.grid:
            raise ValueError(f"perceiver grid {self.perceiver.grid} != vit grid {self.vit.grid}")
        if self.perceiver.d_in != self.vit.dim or self.perceiver.d_out != self.lm.dim:
            raise ValueError("perceiver widths must bridge vit dim to lm dim")
        if self.segmentor.prompt_width != self.prompt_width:
            raise ValueError("segmentor prompt width mismatch")

    def to_json(self) -> str:
        def enc(o):
            d = {k: (list(v) if isinstance(v, tuple) else v) for k, v in vars(o).items()}
            d.pop("dtype", None)
            return d
        return json.dumps({
            "vit": enc(self.vit), "text": enc(self.text), "perceiver": enc(self.perceiver),
            "lm": enc(self.lm), "segmentor": enc(self.segmentor),
            "joint_width": self.joint_width, "prompt_width": self.prompt_width,
            "lora": enc(self.lora) if self.lora is not None else None,
            "seed": self.seed,
        }, sort_keys=True)

    @classmethod
    def from_json(cls, blob: str) -> "SystemConfig":
        raw = json.loads(blob)
        def tup(d, key):
            if key in d and isinstance(d[key], list):
                d[key] = tuple(d[key])
            return d
        return cls(
            vit=ViTConfig(**tup(raw["vit"], "patch")),
            text=TextEncoderConfig(**raw["text"]),
            perceiver=PerceiverConfig(**tup(tup(raw["perceiver"], "grid"), "kernel")),
            lm=LmConfig(**raw["lm"]),
            segmentor=SegmentorConfig(**tup(raw["segmentor"], "widths")),
            joint_width=raw["joint_width"],
            prompt_width=raw["prompt_width"],
            lora=LoraSpec(**tup(raw["lora"], "targets")) if raw.get("lora") else None,
            seed=raw.get("seed", 0),
        )


class ContrastiveHead(nn.Module):
    """Projections of both [CLS] features into a joint space, plus the
    learnable softmax temperature tau (init 0.07, clamped to [1e-3, 1]).

    tau is held as log(1/tau) internally so the optimizer steps it on the
    same scale CLIP-family training does.
    """

    def __init__(self, d_img: int, d_txt: int, joint: int, rng: np.random.Generator,
                 dtype=np.float32, init_temperature: float = 0.07):
        self.img_proj = nn.Linear(d_img, joint, rng, dtype=dtype)
        self.txt_proj = nn.Linear(d_txt, joint, rng, dtype=dtype)
        self.log_scale = nn.Parameter(np.asarray(np.log(1.0 / init_temperature), dtype=dtype))

    @property
    def temperature(self) -> Tensor:
        return self.log_scale.exp() ** -1.0

    def temperature_value(self) -> float:
        return float(np.exp(-self.log_scale.data))

    def clamp_temperature(self):
        # tau in [1e-3, 1] corresponds to log_scale in [0, log(1000)]
        self.log_scale.data = np.clip(self.log_scale.data, 0.0, np.log(1e3))


class VlmSystem(nn.Module):
    """Every trainable component of the desk system under one namespace."""

    def __init__(self, config: SystemConfig):
        self.config = config
        self.tokenizer = default_tokenizer()
        rng = np.random.default_rng(np.random.SeedSequence([config.seed, 3]))
        self.vision = VisionTransformer3D(config.vit, rng)
        self.text = TextEncoder(config.text, rng, self.tokenizer)
        self.perceiver = Perceiver(config.perceiver, rng)
        self.lm = CausalLM(config.lm, rng, self.tokenizer)
        self.seg_head = SegPromptHead(config.lm.dim, config.prompt_width, rng,
                                      dtype=config.lm.dtype)
        self.segmentor = PromptableSegmentor(config.segmentor, rng)
        self.contrast = ContrastiveHead(config.vit.dim, config.text.dim,
                                        config.joint_width, rng, dtype=config.vit.dtype)
        if config.lora is not None:
            lora_wrap(self.lm, config.lora, seed=config.seed)

    # ---- vision path ---------------------------------------------------

    def vision_tokens(self, volumes: np.ndarray) -> Tensor:
        """(B, C, D, H, W) -> (B, n_out, lm_dim) LM-ready vision tokens."""
        return self.perceiver.forward_batch(self.vision.forward_batch(volumes))

    def assemble(self, volume: Volume, instruction: str, answer: str | None) -> AssembledInput:
        tokens = self.vision_tokens(volume.data[None])
        return assemble_sequence(tokens.reshape(tokens.shape[1], tokens.shape[2]),
                                 instruction, answer, self.tokenizer, self.lm.cfg.max_ctx)

    # ---- inference -----------------------------------------------------

    def answer(self, volume: Volume, instruction: str, max_new_tokens: int = 32,
               mode: str = "greedy") -> GenerationResult:
        asm = self.assemble(volume, instruction, None)
        embeds, _, _ = collate([asm], self.lm)
        return generate(self.lm, embeds, max_new_tokens=max_new_tokens, mode=mode)

    def segment(self, volume: Volume, instruction: str,
                max_new_tokens: int = 24) -> tuple[GenerationResult, np.ndarray | None]:
        """Generate, and when [SEG] appears, decode its mask (D, H, W) uint8."""
        result = self.answer(volume, instruction, max_new_tokens=max_new_tokens)
        prompt = extract_seg_prompt(result, self.seg_head)
        if prompt is None:
            return result, None
        with ad.no_grad():
            logits = self.segmentor.prompt_segment(Volume(volume.data), prompt)
            mask = (logits.data > 0).astype(np.uint8)  # sigmoid > 0.5
        return result, mask

    def retrieval_features(self, volumes: np.ndarray, texts: list[str]) -> tuple[np.ndarray, np.ndarray]:
        """Joint-space [CLS] features for retrieval (not normalized)."""
        with ad.no_grad():
            img = self.contrast.img_proj(self.vision.forward_batch(volumes)[:, 0, :])
            txt = self.contrast.txt_proj(self.text.cls_features(texts))
        return img.data, txt.data

    # ---- persistence ---------------------------------------------------

    def save(self, path) -> None:
        state = self.state_dict()
        blob = np.frombuffer(self.config.to_json().encode("utf-8"), dtype=np.uint8)
        state["__config__"] = blob
        nn.save_tensors(state, path)

    @classmethod
    def load(cls, path) -> "VlmSystem":
        state = nn.load_tensors(path)
        blob = state.pop("__config__", None)
        if blob is None:
            raise ValueError(f"{path}: checkpoint lacks embedded __config__")
        config = SystemConfig.from_json(bytes(blob.tobytes()).decode("utf-8"))
        system = cls(config)
        system.load_state_dict(state)
        return system
