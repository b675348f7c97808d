"""The five configuration arms of the ablation matrix.

Each arm toggles one axis: vision pretraining on/off, spatial vs flat
sequence pooling, MLP vs linear projection, frozen vs unlocked vision
encoder. All five build and run a short stage-2 burst; the parameter
deltas show which parts moved.

Run:  python demos/07_ablation_arms.py
"""

import tempfile
from dataclasses import replace
from pathlib import Path

import numpy as np

from vlm3d import templates as T
from vlm3d.datagen import generate_world
from vlm3d.datagen.pipelines import build_segmentation_records
from vlm3d.datagen.records import InstructionDataset
from vlm3d.mllm import SystemConfig, VlmSystem
from vlm3d.training import TrainConfig, run_stage2, table7_arms

tmp = Path(tempfile.mkdtemp())
world = generate_world(seed=3, n_scenes=4)
world.save(tmp)
records = []
for scene in world.scenes:
    masks = [f"masks/{scene.scene_id}_obj{i}_{o.category.replace(' ', '_')}.m3dv"
             for i, o in enumerate(scene.objects)]
    records.extend(build_segmentation_records(scene, "category", T.TERM_DICTIONARY,
                                              0, f"volumes/{scene.scene_id}.m3dv", masks)[:1])
dataset = InstructionDataset(records, tmp)

for arm in table7_arms():
    sys_cfg = SystemConfig(seed=1)
    sys_cfg = replace(sys_cfg, perceiver=replace(
        sys_cfg.perceiver,
        spatial=arm.spatial_pooling,
        projection="mlp-2-layer" if arm.mlp_projection else "linear-1-layer"))
    system = VlmSystem(sys_cfg)
    before = {k: v.copy() for k, v in system.state_dict().items()}
    cfg = TrainConfig(phase="stage2", batch_size=2, peak_lr=1e-3, total_steps=5,
                      seed=2, ablation=arm)
    run_stage2(system, dataset, cfg)
    after = system.state_dict()
    moved = {name.split(".")[0] for name, arr in after.items()
             if not np.array_equal(before[name], arr)}
    frozen_vision = all(np.array_equal(before[k], after[k])
                        for k in after if k.startswith("vision."))
    print(f"arm {arm}: trained={sorted(moved)} vision_frozen={frozen_vision}")
