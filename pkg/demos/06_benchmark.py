"""The eight-task benchmark on a freshly assembled desk system.

Generates a small world, builds records for every task family, runs the
untrained system through the full harness (scores are near chance — the
point is the machinery), and prints each report. The chat-scored metric
runs from a canned transcript built on the model's own deterministic
predictions.

Run:  python demos/06_benchmark.py
"""

import tempfile
from pathlib import Path

from vlm3d import templates as T
from vlm3d.bench.runner import run_benchmark
from vlm3d.datagen import generate_world
from vlm3d.datagen.pipelines import (build_positioning_records,
                                     build_segmentation_records, self_filter,
                                     vqa_from_report, derive_open_records)
from vlm3d.datagen.records import InstructionDataset, InstructionRecord
from vlm3d.datagen.transcripts import (build_score_transcript,
                                       build_world_transcript, scene_image_name)
from vlm3d.gateway import ChatClient
from vlm3d.mllm import SystemConfig, VlmSystem

tmp = Path(tempfile.mkdtemp())
world = generate_world(seed=17, n_scenes=10)
world.save(tmp)
client = ChatClient(offline=build_world_transcript(world, seed=0))

records = []
for scene in world.scenes:
    image = scene_image_name(scene)
    records.append(InstructionRecord(
        id=f"{scene.scene_id}:report", image=image, task="report",
        question=T.REPORT_INSTRUCTIONS[0], answer=scene.report_text))
    vqa, _ = vqa_from_report(scene.report_text, image, client)
    kept, _ = self_filter(vqa)
    records.extend(kept[:2])
    records.extend(derive_open_records(kept[:1]))
    masks = [f"masks/{scene.scene_id}_obj{i}_{o.category.replace(' ', '_')}.m3dv"
             for i, o in enumerate(scene.objects)]
    records.extend(build_positioning_records(scene, "category", T.TERM_DICTIONARY,
                                             0, image)[:2])
    records.extend(build_segmentation_records(scene, "category", T.TERM_DICTIONARY,
                                              0, image, masks)[:1])
dataset = InstructionDataset(records, tmp)

system = VlmSystem(SystemConfig(seed=0))
reports = run_benchmark(system, dataset, tasks=("all",), max_new_tokens=12)

# second pass: score the report task with the chat-based metric, offline
report_rows = next(r for r in reports if r.task == "report").rows
pairs = [(row["reference"], row.get("prediction", "")) for row in report_rows]
score_client = ChatClient(offline=build_score_transcript(pairs))
reports = run_benchmark(system, dataset, tasks=("all",), client=score_client,
                        max_new_tokens=12)

for report in reports:
    print(f"[{report.task}] n={report.n_records}")
    for name, value in sorted(report.aggregates.items()):
        print(f"    {name}: {value:.4f}")
    for note in report.notes:
        print(f"    note: {note}")
print(f"\nnetwork calls: {client.network_calls + score_client.network_calls}")
