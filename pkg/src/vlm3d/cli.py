"""Command-line entry point: world generation, data pipelines, training, eval.

Subcommands:
    gen-world   write a synthetic world (volumes, masks, reports, manifest)
    gen-data    run one instruction pipeline over a world
    train       run a training phase (pretrain | stage1 | stage2)
    eval        run benchmark tasks from a checkpoint

Exit codes: 0 success, 1 validation error, 2 runtime error.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
from dataclasses import replace
from pathlib import Path

from . import templates as T
from .datagen.pipelines import (build_positioning_records,
                                build_segmentation_records, check_records,
                                derive_open_records, refseg_from_report,
                                self_filter, vqa_from_report,
                                write_rejects_jsonl)
from .datagen.records import InstructionDataset, validate_record, write_records_jsonl
from .datagen.transcripts import refseg_target_index, scene_image_name
from .datagen.world import World, generate_world, load_world
from .bench.runner import run_benchmark
from .errors import ConfigError, Vlm3dError
from .gateway import ChatClient, offline_client
from .mllm import SystemConfig, VlmSystem
from .training import (AblationToggles, TrainConfig, run_pretrain, run_stage1,
                       run_stage2)

_CONFIG_KEYS = {
    "seed": int,
    "model": dict,
    "train": dict,
}
_MODEL_KEYS = {"vit", "text", "perceiver", "lm", "segmentor", "joint_width", "prompt_width"}
_TRAIN_KEYS = {"batch_size", "peak_lr", "warmup_frac", "total_steps",
               "lang_weight", "seg_weight", "weight_decay"}


def load_run_config(path) -> dict:
    """Schema-validated run config; unknown keys are rejected."""
    raw = json.loads(Path(path).read_text(encoding="utf-8"))
    if not isinstance(raw, dict):
        raise ConfigError("run config must be a JSON object")
    unknown = set(raw) - set(_CONFIG_KEYS)
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    for section, allowed in (("model", _MODEL_KEYS), ("train", _TRAIN_KEYS)):
        sub = raw.get(section, {})
        if not isinstance(sub, dict):
            raise ConfigError(f"{section} must be an object")
        bad = set(sub) - allowed
        if bad:
            raise ConfigError(f"unknown {section} keys: {sorted(bad)}")
    return raw


def _system_config_from_run(raw: dict) -> SystemConfig:
    from .encoders import TextEncoderConfig, ViTConfig
    from .lm import LmConfig
    from .perceiver import PerceiverConfig
    from .segmentor import SegmentorConfig
    model = raw.get("model", {})

    def tup(d: dict, *keys):
        d = dict(d)
        for k in keys:
            if k in d and isinstance(d[k], list):
                d[k] = tuple(d[k])
        return d

    return SystemConfig(
        vit=ViTConfig(**tup(model.get("vit", {}), "patch")),
        text=TextEncoderConfig(**model.get("text", {})),
        perceiver=PerceiverConfig(**tup(model.get("perceiver", {}), "grid", "kernel")),
        lm=LmConfig(**model.get("lm", {})),
        segmentor=SegmentorConfig(**tup(model.get("segmentor", {}), "widths")),
        joint_width=model.get("joint_width", 128),
        prompt_width=model.get("prompt_width", 64),
        seed=raw.get("seed", 0),
    )


def _parse_dims(text: str) -> tuple[int, int, int]:
    parts = [int(p) for p in text.split(",")]
    if len(parts) != 3:
        raise ConfigError(f"dims must be D,H,W, got {text!r}")
    return tuple(parts)


def _world_from_dir(world_dir) -> tuple[World, Path]:
    manifest, root = load_world(world_dir)
    world = generate_world(manifest["seed"], len(manifest["scenes"]),
                           tuple(manifest["dims"]))
    return world, root


def _client_from_args(args) -> ChatClient:
    if getattr(args, "offline", None):
        return offline_client(args.offline)
    return ChatClient.from_env()


# ---- subcommands ---------------------------------------------------------

def cmd_gen_world(args) -> int:
    world = generate_world(args.seed, args.n, _parse_dims(args.dims))
    manifest = world.save(args.out)
    blob = json.dumps(manifest, sort_keys=True).encode("utf-8")
    digest = hashlib.sha256(blob).hexdigest()
    print(f"wrote {len(manifest['scenes'])} scenes to {args.out}")
    print(f"manifest sha256 {digest}")
    return 0


def cmd_gen_data(args) -> int:
    world, root = _world_from_dir(args.world)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    seed = args.seed
    records, rejects = [], []

    def rel(path_in_world: str) -> str:
        return os.path.relpath(root / path_in_world, out)

    if args.pipeline == "vqa":
        client = _client_from_args(args)
        reports = {}
        for scene in world.scenes:
            image = scene_image_name(scene)
            recs, rej = vqa_from_report(scene.report_text, image, client)
            kept, filtered = self_filter(recs)
            reports[image] = scene.report_text
            records.extend(kept)
            rejects.extend(rej + filtered)
        # check against the canonical in-world names, then relink images
        # relative to the records file for serialization
        outcome = check_records(records, reports, client)
        for rec in records:
            rec.image = rel(rec.image)
        records = records + derive_open_records(records)
        print(f"vqa: {len(records)} records, {len(rejects)} rejects, "
              f"check pass rate {outcome.pass_rate:.3f}")
    elif args.pipeline in ("pos", "seg"):
        manifest, _ = load_world(args.world)
        for scene, entry in zip(world.scenes, manifest["scenes"]):
            if not entry["objects"]:
                print(f"warning: {scene.scene_id} has no masks; skipped", file=sys.stderr)
                continue
            image = rel(entry["volume"])
            if args.pipeline == "pos":
                recs = build_positioning_records(scene, args.mode, T.TERM_DICTIONARY,
                                                 seed, image)
            else:
                mask_paths = [rel(o["mask"]) for o in entry["objects"]]
                recs = build_segmentation_records(scene, args.mode, T.TERM_DICTIONARY,
                                                  seed, image, mask_paths)
            records.extend(recs)
        print(f"{args.pipeline}: {len(records)} records")
    elif args.pipeline == "refseg":
        client = _client_from_args(args)
        manifest, _ = load_world(args.world)
        for scene, entry in zip(world.scenes, manifest["scenes"]):
            if not entry["objects"]:
                continue
            idx = refseg_target_index(scene)
            recs, rej = refseg_from_report(
                scene.region_report(idx), client, rel(entry["volume"]),
                rel(entry["objects"][idx]["mask"]), source_id=scene.scene_id)
            records.extend(recs)
            rejects.extend(rej)
        print(f"refseg: {len(records)} records, {len(rejects)} rejects")
    else:
        raise ConfigError(f"unknown pipeline {args.pipeline!r}")

    invalid = [(r.id, issues) for r in records if (issues := validate_record(r))]
    if invalid:
        raise Vlm3dError(f"pipeline emitted invalid records: {invalid[:3]}")
    write_records_jsonl(records, out / f"{args.pipeline}_records.jsonl")
    write_rejects_jsonl(rejects, out / f"{args.pipeline}_rejects.jsonl")
    return 0


def cmd_train(args) -> int:
    raw = load_run_config(args.config) if args.config else {}
    if args.seed is not None:
        raw["seed"] = args.seed
    seed = raw.get("seed", 0)
    ablation = AblationToggles(
        vision_pretrained=not args.no_vision_pretrain,
        spatial_pooling=not args.no_spatial_pooling,
        mlp_projection=not args.linear_projection,
        unlock_vision=args.unlock_vision,
    )
    train_kwargs = dict(raw.get("train", {}))
    if args.steps is not None:
        train_kwargs["total_steps"] = args.steps
    if args.batch_size is not None:
        train_kwargs["batch_size"] = args.batch_size
    cfg = TrainConfig(phase=args.phase, seed=seed, ablation=ablation, **train_kwargs)

    if args.init_checkpoint:
        system = VlmSystem.load(args.init_checkpoint)
    else:
        sys_cfg = _system_config_from_run(raw)
        if not ablation.spatial_pooling or not ablation.mlp_projection:
            sys_cfg = replace(
                sys_cfg,
                perceiver=replace(sys_cfg.perceiver,
                                  spatial=ablation.spatial_pooling,
                                  projection=("mlp-2-layer" if ablation.mlp_projection
                                              else "linear-1-layer")))
        system = VlmSystem(sys_cfg)
    if args.init_vision:
        from .nn import load_tensors
        state = load_tensors(args.init_vision)
        partial = {k: v for k, v in state.items()
                   if k.startswith(("vision.", "text.", "contrast."))}
        full = system.state_dict()
        full.update(partial)
        system.load_state_dict(full)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if cfg.phase == "pretrain":
        world, _ = _world_from_dir(args.world)
        result = run_pretrain(system, world.pairs(), cfg)
    elif cfg.phase == "stage1":
        world, _ = _world_from_dir(args.world)
        result = run_stage1(system, world.pairs(), cfg)
    else:
        dataset = InstructionDataset.open(args.data)
        result = run_stage2(system, dataset, cfg)
    system.save(out / "checkpoint.ntv")
    (out / "loss.csv").write_text(result.loss_csv(cfg.phase), encoding="utf-8")
    final = result.losses[-1] if result.losses else float("nan")
    print(f"{cfg.phase}: {len(result.losses)} steps, final loss {final:.4f}")
    print(f"checkpoint: {out / 'checkpoint.ntv'}")
    return 0


def cmd_eval(args) -> int:
    ckpt = Path(args.checkpoint)
    if not ckpt.exists():
        raise ConfigError(f"checkpoint not found: {ckpt}")
    system = VlmSystem.load(ckpt)
    dataset = InstructionDataset.open(args.data)
    tasks = [t.strip() for t in args.tasks.split(",") if t.strip()]
    client = None
    if args.offline:
        client = offline_client(args.offline)
    reports = run_benchmark(system, dataset, tasks=tasks, out_dir=args.out,
                            client=client, max_new_tokens=args.max_new_tokens)
    for report in reports:
        print(f"[{report.task}] n={report.n_records}")
        for name, value in sorted(report.aggregates.items()):
            print(f"  {name}: {value:.4f}")
        for note in report.notes:
            print(f"  note: {note}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="vlm3d",
                                     description="3D vision-language desk system")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-world", help="generate a synthetic world")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--n", type=int, default=16, help="number of scenes")
    p.add_argument("--dims", default="16,64,64", help="D,H,W voxel dims (min 16 each)")
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_gen_world)

    p = sub.add_parser("gen-data", help="run an instruction data pipeline")
    p.add_argument("--pipeline", required=True, choices=["vqa", "pos", "seg", "refseg"])
    p.add_argument("--world", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--offline", help="path to a canned transcript (JSONL)")
    p.add_argument("--mode", default="category", choices=["category", "description"])
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(fn=cmd_gen_data)

    p = sub.add_parser("train", help="run one training phase")
    p.add_argument("--phase", required=True, choices=["pretrain", "stage1", "stage2"])
    p.add_argument("--config", help="run config JSON")
    p.add_argument("--world", help="world dir (pretrain, stage1)")
    p.add_argument("--data", help="records JSONL (stage2)")
    p.add_argument("--out", required=True)
    p.add_argument("--init-checkpoint", help="resume from a full checkpoint")
    p.add_argument("--init-vision", help="load vision/text/contrast weights from a checkpoint")
    p.add_argument("--steps", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--no-vision-pretrain", action="store_true")
    p.add_argument("--no-spatial-pooling", action="store_true")
    p.add_argument("--linear-projection", action="store_true")
    p.add_argument("--unlock-vision", action="store_true")
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("eval", help="run benchmark tasks")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--tasks", default="all",
                   help="comma list or 'all' (retrieval,report,vqa_closed,"
                        "vqa_open,rec,reg,seg_semantic,seg_ref,seg)")
    p.add_argument("--out")
    p.add_argument("--offline", help="transcript for llm_score")
    p.add_argument("--max-new-tokens", type=int, default=24)
    p.set_defaults(fn=cmd_eval)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except (ConfigError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except Vlm3dError as e:
        print(f"runtime error: {type(e).__name__}: {e}", file=sys.stderr)
        return 2
    except FileNotFoundError as e:
        print(f"runtime error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
