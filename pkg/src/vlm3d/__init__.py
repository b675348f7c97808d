"""Desk-scale 3D vision-language system.

Volumetric encoders, a spatial-pooling perceiver, a causal LM with a
segmentation-token pathway, synthetic-world instruction pipelines, and an
eight-task evaluation harness. Everything runs on CPU over numpy.
"""

from .volume import (Box3D, Volume, VoxelMask, box_iou, box_to_mask, dice,
                     mask_to_box, normalize_minmax, read_mask, read_volume,
                     resize_mask, resize_to_standard, write_mask, write_volume)
from .encoders import (EmbeddingSeq, TextEncoder, TextEncoderConfig, ViTConfig,
                       VisionTransformer3D, paper_scale_text_config,
                       paper_scale_vit_config, patchify, text_encode, vit_encode)
from .perceiver import Perceiver, PerceiverConfig, project, spatial_pool
from .lm import CausalLM, GenerationResult, LmConfig, generate
from .lora import LoraSpec, expected_trainable_count, lora_wrap
from .mllm import (AssembledInput, ContrastiveHead, SegPromptHead, SystemConfig,
                   VlmSystem, assemble_sequence, extract_seg_prompt,
                   parse_box_text)
from .segmentor import PromptableSegmentor, SegmentorConfig, seg_loss
from .training import (AblationToggles, AdamW, FreezeFlags, TrainConfig,
                       clip_loss, lr_at, run_pretrain, run_stage1, run_stage2,
                       table7_arms)
from .gateway import CannedTranscript, ChatClient, ChatRequest, offline_client
from .tokenizer import Tokenizer, default_tokenizer

__version__ = "0.1.0"
