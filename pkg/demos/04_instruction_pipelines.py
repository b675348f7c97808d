"""The four instruction-data pipelines, fully offline.

Canned transcripts stand in for the chat model: the VQA pipeline fills its
prompt with the report, parses the nine-question reply, self-filters and
checks; the positioning/segmentation builders work template-only; the
referring-segmentation pipeline expands region reports into six QA pairs.

Run:  python demos/04_instruction_pipelines.py
"""

from collections import Counter

from vlm3d import templates as T
from vlm3d.datagen import generate_world
from vlm3d.datagen.pipelines import (build_positioning_records,
                                     build_segmentation_records, check_records,
                                     refseg_from_report, self_filter,
                                     vqa_from_report)
from vlm3d.datagen.records import validate_record
from vlm3d.datagen.transcripts import (build_world_transcript,
                                       refseg_target_index, scene_image_name)
from vlm3d.gateway import ChatClient

world = generate_world(seed=5, n_scenes=6)
client = ChatClient(offline=build_world_transcript(world, seed=0))

# --- VQA generation, filtering, checking ---------------------------------
all_records, reports = [], {}
for scene in world.scenes:
    image = scene_image_name(scene)
    records, rejects = vqa_from_report(scene.report_text, image, client)
    kept, filtered = self_filter(records)
    all_records.extend(kept)
    reports[image] = scene.report_text
print(f"VQA: {len(all_records)} records kept")
print("question types:", dict(Counter(r.question_type for r in all_records)))
print("answer letters:", dict(Counter(r.answer_choice for r in all_records)))
outcome = check_records(all_records, reports, client)
print(f"checker pass rate: {outcome.pass_rate:.3f}")
sample = all_records[0]
print(f"sample Q: {sample.prompt_text()}")
print(f"sample A: {sample.answer_choice}. {sample.answer}")

# --- label- and definition-based positioning ------------------------------
scene = world.scenes[0]
pos = build_positioning_records(scene, "category", T.TERM_DICTIONARY, 0, "vol.m3dv")
print(f"\npositioning: {len(pos)} records from {scene.scene_id}")
print("REC:", pos[0].question, "->", pos[0].answer)
print("REG:", pos[1].question, "->", pos[1].answer)

masks = [f"mask_{i}.m3dv" for i in range(len(scene.objects))]
seg = build_segmentation_records(scene, "description", T.TERM_DICTIONARY, 0,
                                 "vol.m3dv", masks)
print("\nsegmentation:", seg[0].question, "->", seg[0].answer)

# --- referring segmentation from a region report ---------------------------
idx = refseg_target_index(scene)
refs, rej = refseg_from_report(scene.region_report(idx), client, "vol.m3dv",
                               masks[idx], source_id=scene.scene_id)
print(f"\nrefseg: {len(refs)} QA pairs, {len(rej)} rejects")
for rec in refs[:2]:
    print(f"  Q: {rec.question}")
    print(f"  A: {rec.answer}")

bad = [r.id for r in all_records + pos + seg + refs if validate_record(r)]
print(f"\nall records valid: {not bad}; network calls: {client.network_calls}")
