"""Benchmark runner: generates predictions per task and applies metrics.

Eight tasks: retrieval, report, vqa_closed, vqa_open, rec, reg,
seg_semantic, seg_ref. Per-record failures are recorded in the rows and
never abort a run. Reports are written as one JSON document plus a flat
CSV per task.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..errors import OfflineMissError, ParseFailureError, Vlm3dError
from ..gateway import ChatClient
from ..mllm import VlmSystem
from ..volume import VoxelMask, dice
from ..datagen.records import InstructionDataset, InstructionRecord
from . import metrics as M

BENCH_TASKS = ("retrieval", "report", "vqa_closed", "vqa_open",
               "rec", "reg", "seg_semantic", "seg_ref")

_TASK_RECORD_KINDS = {
    "report": ("report",),
    "vqa_closed": ("vqa_closed",),
    "vqa_open": ("vqa_open",),
    "rec": ("rec_cat", "rec_desc"),
    "reg": ("reg_cat", "reg_desc"),
    "seg_semantic": ("seg_semantic",),
    "seg_ref": ("seg_ref",),
    "seg": ("seg_semantic", "seg_ref"),  # combined alias, not part of "all"
}


@dataclass
class MetricReport:
    task: str
    n_records: int
    aggregates: dict[str, float]
    rows: list[dict] = field(default_factory=list)
    config: dict = field(default_factory=dict)
    notes: list[str] = field(default_factory=list)

    def to_json(self) -> str:
        return json.dumps({
            "task": self.task, "n_records": self.n_records,
            "aggregates": self.aggregates, "rows": self.rows,
            "config": self.config, "notes": self.notes,
        }, indent=1, sort_keys=True)

    def to_csv(self) -> str:
        if not self.rows:
            return ""
        cols = sorted({k for row in self.rows for k in row})
        buf = io.StringIO()
        writer = csv.DictWriter(buf, fieldnames=cols)
        writer.writeheader()
        for row in self.rows:
            writer.writerow(row)
        return buf.getvalue()

    def save(self, out_dir) -> None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / f"{self.task}.json").write_text(self.to_json(), encoding="utf-8")
        csv_text = self.to_csv()
        if csv_text:
            (out / f"{self.task}.csv").write_text(csv_text, encoding="utf-8")


def _text_metric_aggregates(predictions: list[str], references: list[str],
                            system: VlmSystem, client: ChatClient | None,
                            rows: list[dict], notes: list[str]) -> dict[str, float]:
    agg = {
        "bleu": M.bleu(predictions, references),
        "rouge_l": float(np.mean([M.rouge_l(p, r) for p, r in zip(predictions, references)])),
        "meteor": float(np.mean([M.meteor_simple(p, r) for p, r in zip(predictions, references)])),
        "embed_score": float(np.mean([M.embed_score(p, r, system.text)
                                      for p, r in zip(predictions, references)])),
    }
    for row, p, r in zip(rows, predictions, references):
        row["rouge_l"] = M.rouge_l(p, r)
        row["meteor"] = M.meteor_simple(p, r)
        row["embed_score"] = M.embed_score(p, r, system.text)
    if client is not None:
        scores = []
        for row, p, r in zip(rows, predictions, references):
            try:
                score, _ = M.llm_score(p, r, client)
            except (ParseFailureError, OfflineMissError) as e:
                row["llm_score_note"] = type(e).__name__
                score = 0
            row["llm_score"] = score
            scores.append(score)
        agg["llm_score"] = float(np.mean(scores)) if scores else 0.0
    else:
        notes.append("llm_score omitted: no chat client configured")
    return agg


def _generate_all(system: VlmSystem, dataset: InstructionDataset,
                  records: list[InstructionRecord], max_new_tokens: int,
                  rows: list[dict]) -> list[str]:
    outputs = []
    for rec in records:
        row = {"id": rec.id, "reference": rec.answer}
        try:
            result = system.answer(dataset.volume(rec), rec.prompt_text(),
                                   max_new_tokens=max_new_tokens)
            row["prediction"] = result.text
            outputs.append(result.text)
        except Vlm3dError as e:
            row["prediction"] = ""
            row["error"] = f"{type(e).__name__}: {e}"
            outputs.append("")
        rows.append(row)
    return outputs


def _eval_retrieval(system: VlmSystem, dataset: InstructionDataset,
                    records: list[InstructionRecord]) -> MetricReport:
    pairs = [(r.image, r.answer) for r in records if r.task == "report"]
    seen = {}
    for image, text in pairs:
        seen.setdefault(image, text)
    images = list(seen)
    texts = [seen[i] for i in images]
    notes = []
    if len(images) < 2:
        return MetricReport(task="retrieval", n_records=0, aggregates={},
                            notes=["retrieval needs report records with distinct images"])
    vols = np.stack([dataset.volume(InstructionRecord(
        id="q", image=i, task="report", question="q", answer="a")).data for i in images])
    img_f, txt_f = system.retrieval_features(vols, texts)
    pool = M.RetrievalPool(image_feats=img_f, text_feats=txt_f)
    recalls = M.retrieval_eval(pool, min_size=min(10, pool.size))
    if pool.size < 10:
        notes.append(f"pool of {pool.size} below the standard minimum 10")
    return MetricReport(task="retrieval", n_records=pool.size,
                        aggregates=recalls, notes=notes)


def _eval_segmentation(system: VlmSystem, dataset: InstructionDataset,
                       records: list[InstructionRecord], task: str,
                       max_new_tokens: int) -> MetricReport:
    rows = []
    dices = []
    for rec in records:
        row = {"id": rec.id}
        try:
            result, mask = system.segment(dataset.volume(rec), rec.prompt_text(),
                                          max_new_tokens=max_new_tokens)
            row["prediction"] = result.text
            if mask is None:
                row["dice"] = 0.0
                row["note"] = "no [SEG] emitted"
            else:
                row["dice"] = dice(VoxelMask(mask), dataset.mask(rec))
        except Vlm3dError as e:
            row["dice"] = 0.0
            row["error"] = f"{type(e).__name__}: {e}"
        dices.append(row["dice"])
        rows.append(row)
    agg = {"dice": float(np.mean(dices)) if dices else 0.0}
    return MetricReport(task=task, n_records=len(records), aggregates=agg, rows=rows)


def run_benchmark(system: VlmSystem, dataset: InstructionDataset,
                  tasks=("all",), out_dir=None, client: ChatClient | None = None,
                  max_new_tokens: int = 24) -> list[MetricReport]:
    """Evaluate the system on the requested tasks; returns one report each.

    Deterministic given checkpoint, dataset and offline transcripts: all
    decoding is greedy.
    """
    wanted = list(BENCH_TASKS) if "all" in tasks else list(tasks)
    unknown = [t for t in wanted if t not in BENCH_TASKS and t != "seg"]
    if unknown:
        raise ValueError(f"unknown tasks {unknown}; choose from {BENCH_TASKS}")
    reports: list[MetricReport] = []
    for task in wanted:
        if task == "retrieval":
            report = _eval_retrieval(system, dataset, dataset.records)
        elif task in ("seg_semantic", "seg_ref", "seg"):
            records = [r for r in dataset.records if r.task in _TASK_RECORD_KINDS[task]]
            report = _eval_segmentation(system, dataset, records, task, max_new_tokens)
        else:
            records = [r for r in dataset.records if r.task in _TASK_RECORD_KINDS[task]]
            rows: list[dict] = []
            notes: list[str] = []
            outputs = _generate_all(system, dataset, records, max_new_tokens, rows)
            if task == "vqa_closed":
                res = M.closed_vqa_eval(records, outputs)
                for row, extra in zip(rows, res["rows"]):
                    row.update(extra)
                agg = {f"acc_{t}": v for t, v in res["per_type"].items()}
                agg["mean"] = res["mean"]
                agg["overall"] = res["overall"]
                report = MetricReport(task=task, n_records=len(records),
                                      aggregates=agg, rows=rows, notes=notes)
            elif task == "rec":
                res = M.positioning_eval(records, outputs)
                for row, extra in zip(rows, res["rows"]):
                    row.update(extra)
                agg = {"hit_rate": res["hit_rate"], "mean_iou": res["mean_iou"]}
                refs = [r.answer for r in records]
                agg.update(_text_metric_aggregates(outputs, refs, system, client, rows, notes))
                report = MetricReport(task=task, n_records=len(records),
                                      aggregates=agg, rows=rows, notes=notes)
            else:  # report, vqa_open, reg: text metrics
                refs = [r.answer for r in records]
                agg = _text_metric_aggregates(outputs, refs, system, client, rows, notes) \
                    if records else {}
                report = MetricReport(task=task, n_records=len(records),
                                      aggregates=agg, rows=rows, notes=notes)
        report.config = {"max_new_tokens": max_new_tokens, "decode": "greedy"}
        reports.append(report)
        if out_dir is not None:
            report.save(out_dir)
    return reports
