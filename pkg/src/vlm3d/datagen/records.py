"""Instruction records: the unit of training and evaluation data.

Serialized one record per JSON line with exactly these fields: id, image,
task, question, options, answer, answer_choice, question_type, box, mask.
Absent fields are null. Image and mask paths are relative to the records
file's own directory, so a records file plus its world directory stays
self-resolving.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

from ..volume import Box3D, Volume, VoxelMask, read_mask, read_volume

TASKS = ("report", "vqa_closed", "vqa_open", "rec_cat", "rec_desc",
         "reg_cat", "reg_desc", "seg_semantic", "seg_ref")
QUESTION_TYPES = ("plane", "phase", "organ", "abnormality", "location")
OPTION_LABELS = ("A", "B", "C", "D")


@dataclass
class InstructionRecord:
    id: str
    image: str
    task: str
    question: str
    answer: str
    options: dict[str, str] | None = None
    answer_choice: str | None = None
    question_type: str | None = None
    box: Box3D | None = None
    mask: str | None = None

    def prompt_text(self) -> str:
        """The instruction the model sees (closed VQA includes choices)."""
        if self.task == "vqa_closed" and self.options:
            choices = " ".join(f"{label}. {self.options[label]}" for label in OPTION_LABELS)
            return f"{self.question} Choice: {choices}"
        return self.question

    def to_json_dict(self) -> dict:
        return {
            "id": self.id,
            "image": self.image,
            "task": self.task,
            "question": self.question,
            "options": self.options,
            "answer": self.answer,
            "answer_choice": self.answer_choice,
            "question_type": self.question_type,
            "box": [round(c, 3) for c in self.box.as_tuple()] if self.box else None,
            "mask": self.mask,
        }

    @classmethod
    def from_json_dict(cls, row: dict) -> "InstructionRecord":
        box = Box3D(*row["box"]) if row.get("box") else None
        return cls(id=row["id"], image=row["image"], task=row["task"],
                   question=row["question"], answer=row["answer"],
                   options=row.get("options"), answer_choice=row.get("answer_choice"),
                   question_type=row.get("question_type"), box=box,
                   mask=row.get("mask"))


def validate_record(rec: InstructionRecord) -> list[str]:
    """Return every invariant violation (empty list means valid)."""
    issues: list[str] = []
    if not rec.id:
        issues.append("missing id")
    if not rec.image:
        issues.append("missing image path")
    if rec.task not in TASKS:
        issues.append(f"unknown task {rec.task!r}")
    if not rec.question:
        issues.append("missing question")
    if not rec.answer:
        issues.append("missing answer")
    if rec.task == "vqa_closed":
        opts = rec.options or {}
        if sorted(opts) != sorted(OPTION_LABELS):
            issues.append("options must be labeled A-D")
        elif len({t.strip().lower() for t in opts.values()}) != 4:
            issues.append("duplicate option texts")
        if rec.answer_choice not in OPTION_LABELS:
            issues.append("answer_choice must be one of A-D")
        elif sorted(opts) == sorted(OPTION_LABELS) and rec.answer != opts[rec.answer_choice]:
            issues.append("answer must equal the chosen option's text")
    if rec.task in ("vqa_closed", "vqa_open") and rec.question_type not in QUESTION_TYPES:
        issues.append(f"question_type must be one of {QUESTION_TYPES}")
    if rec.task.startswith(("rec_", "reg_")) and rec.box is None:
        issues.append("positioning records need a box")
    if rec.task.startswith("seg_"):
        if rec.mask is None:
            issues.append("segmentation records need a mask path")
        if "[SEG]" not in rec.answer:
            issues.append("segmentation answers must contain [SEG]")
    return issues


def write_records_jsonl(records: list[InstructionRecord], path) -> None:
    lines = [json.dumps(r.to_json_dict(), ensure_ascii=False) for r in records]
    Path(path).write_text("\n".join(lines) + ("\n" if lines else ""), encoding="utf-8")


def read_records_jsonl(path) -> list[InstructionRecord]:
    out = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if line.strip():
            out.append(InstructionRecord.from_json_dict(json.loads(line)))
    return out


class InstructionDataset:
    """Records plus their volume/mask files, loaded lazily and cached."""

    def __init__(self, records: list[InstructionRecord], root):
        self.records = list(records)
        self.root = Path(root)
        self._volumes: dict[str, Volume] = {}
        self._masks: dict[str, VoxelMask] = {}

    @classmethod
    def open(cls, records_path) -> "InstructionDataset":
        records_path = Path(records_path)
        return cls(read_records_jsonl(records_path), records_path.parent)

    def __len__(self) -> int:
        return len(self.records)

    def __getitem__(self, i: int) -> InstructionRecord:
        return self.records[int(i)]

    def volume(self, rec: InstructionRecord) -> Volume:
        if rec.image not in self._volumes:
            self._volumes[rec.image] = read_volume(self.root / rec.image)
        return self._volumes[rec.image]

    def mask(self, rec: InstructionRecord) -> VoxelMask:
        if rec.mask is None:
            raise FileNotFoundError(f"record {rec.id} carries no mask path")
        if rec.mask not in self._masks:
            self._masks[rec.mask] = read_mask(self.root / rec.mask)
        return self._masks[rec.mask]
