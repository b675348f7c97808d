"""The segmentation-token pathway, end to end.

Stage-2 training on a handful of segmentation records teaches the LM to
emit the [SEG] token; the final-layer hidden state at [SEG] becomes the
prompt that drives the volumetric decoder. This demo overfits four records
and shows Dice climbing, plus the answer text the LM generates.

Several minutes on CPU.

Run:  python demos/05_seg_token_pathway.py
"""

import tempfile
from pathlib import Path

from vlm3d import templates as T
from vlm3d.datagen import generate_world
from vlm3d.datagen.pipelines import build_segmentation_records
from vlm3d.datagen.records import InstructionDataset
from vlm3d.mllm import SystemConfig, VlmSystem
from vlm3d.training import TrainConfig, run_stage2
from vlm3d.volume import VoxelMask, dice

tmp = Path(tempfile.mkdtemp())
world = generate_world(seed=11, n_scenes=4)
world.save(tmp)

records = []
for scene in world.scenes:
    masks = [f"masks/{scene.scene_id}_obj{i}_{o.category.replace(' ', '_')}.m3dv"
             for i, o in enumerate(scene.objects)]
    recs = build_segmentation_records(scene, "category", T.TERM_DICTIONARY, 0,
                                      f"volumes/{scene.scene_id}.m3dv", masks)
    records.append(recs[0])
dataset = InstructionDataset(records, tmp)
system = VlmSystem(SystemConfig(seed=2))


def mean_dice():
    scores = []
    for rec in dataset.records:
        result, mask = system.segment(dataset.volume(rec), rec.prompt_text(),
                                      max_new_tokens=16)
        scores.append(0.0 if mask is None else dice(VoxelMask(mask), dataset.mask(rec)))
    return scores


print("dice before training:", [f"{d:.3f}" for d in mean_dice()])
cfg = TrainConfig(phase="stage2", batch_size=4, peak_lr=1e-2, total_steps=700, seed=5)
result = run_stage2(system, dataset, cfg)
print(f"loss: {result.losses[0]:.3f} -> {result.losses[-1]:.4f}")
print("dice after training: ", [f"{d:.3f}" for d in mean_dice()])

rec = dataset.records[0]
gen, mask = system.segment(dataset.volume(rec), rec.prompt_text(), max_new_tokens=16)
print(f"\nQ: {rec.prompt_text()}")
print(f"model: {gen.text!r}  ([SEG] positions: {gen.seg_positions})")
print(f"predicted mask voxels: {int(mask.sum()) if mask is not None else 0}")
