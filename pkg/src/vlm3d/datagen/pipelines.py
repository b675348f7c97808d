"""The instruction-construction pipelines.

Three families:
  * VQA from reports: prompt a chat model with the report, parse the
    nine-question "Desired format" blocks, self-filter, optionally check
    each record with a second prompt.
  * Label/definition-based positioning and segmentation records, built
    directly from scene masks and templates (no chat model involved).
  * Referring-segmentation QA expanded from region reports by the chat
    model (three description-based plus three reasoning-based pairs).

Parsers drop malformed blocks into reject logs instead of failing.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .. import templates as T
from ..errors import ConfigError
from ..gateway import ChatClient, ChatRequest
from ..volume import Box3D
from .records import (OPTION_LABELS, InstructionRecord, QUESTION_TYPES,
                      validate_record)
from .world import SynthScene

_QUESTION_LINE = re.compile(r"Question-(\d+):\s*(.*)")
_OPTIONS = re.compile(r"A\.\s*(.*?)\s*B\.\s*(.*?)\s*C\.\s*(.*?)\s*D\.\s*(.*?)$", re.DOTALL)
_ANSWER = re.compile(r"^([A-D])\.?\s*(.*)$", re.DOTALL)

_TYPE_BY_NUMBER = {1: "plane", 2: "phase", 3: "organ",
                   4: "abnormality", 5: "abnormality", 6: "abnormality",
                   7: "location", 8: "location", 9: "location"}


@dataclass
class Reject:
    source: str
    reason: str
    payload: str = ""

    def to_json_dict(self) -> dict:
        return {"source": self.source, "reason": self.reason, "payload": self.payload}


def write_rejects_jsonl(rejects: list[Reject], path) -> None:
    lines = [json.dumps(r.to_json_dict(), ensure_ascii=False) for r in rejects]
    Path(path).write_text("\n".join(lines) + ("\n" if lines else ""), encoding="utf-8")


# ---- request builders (shared with the offline transcript synthesizer) --

def build_vqa_request(image_name: str, report: str) -> ChatRequest:
    return ChatRequest(system="", user=T.VQA_GENERATION_PROMPT.format(
        image_file_name=image_name, text=report))


def build_check_request(rec: InstructionRecord, report: str) -> ChatRequest:
    opts = rec.options or {}
    return ChatRequest(system="", user=T.CHECK_PROMPT.format(
        img_file_name=rec.image, text=report, question=rec.question,
        choice_a=opts.get("A", ""), choice_b=opts.get("B", ""),
        choice_c=opts.get("C", ""), choice_d=opts.get("D", ""),
        answer_choice=rec.answer_choice or "", answer=rec.answer))


def build_refseg_request(region_report: str) -> ChatRequest:
    return ChatRequest(system="", user=T.REFSEG_GENERATION_PROMPT.format(text=region_report))


# ---- VQA pipeline -------------------------------------------------------

def vqa_from_report(report: str, image_name: str, client: ChatClient
                    ) -> tuple[list[InstructionRecord], list[Reject]]:
    """Generate up to nine closed-VQA records from one report."""
    response = client.complete(build_vqa_request(image_name, report))
    rejects: list[Reject] = []
    kept: list[InstructionRecord] = []
    blocks = list(_QUESTION_LINE.finditer(response))
    if not blocks:
        rejects.append(Reject(source=image_name, reason="NoQuestionBlocks", payload=response[:200]))
        return [], rejects
    for m in blocks:
        number = int(m.group(1))
        rest = m.group(2).strip()
        qtype = _TYPE_BY_NUMBER.get(number)
        if qtype is None:
            rejects.append(Reject(image_name, "UntypeableBlock", m.group(0)[:200]))
            continue
        if "Choice:" not in rest or "Answer:" not in rest:
            rejects.append(Reject(image_name, "MalformedBlock", m.group(0)[:200]))
            continue
        question, _, tail = rest.partition("Choice:")
        choices_text, _, answer_text = tail.partition("Answer:")
        opts_match = _OPTIONS.match(choices_text.strip())
        ans_match = _ANSWER.match(answer_text.strip())
        if not opts_match or not ans_match or not question.strip():
            rejects.append(Reject(image_name, "MalformedBlock", m.group(0)[:200]))
            continue
        options = {label: opts_match.group(i + 1).strip()
                   for i, label in enumerate(OPTION_LABELS)}
        choice = ans_match.group(1)
        answer = ans_match.group(2).strip() or options.get(choice, "")
        kept.append(InstructionRecord(
            id=f"{image_name}:q{number}", image=image_name, task="vqa_closed",
            question=question.strip(), options=options, answer=answer,
            answer_choice=choice, question_type=qtype))
    return kept, rejects


def derive_open_records(records: list[InstructionRecord]) -> list[InstructionRecord]:
    """Open-ended twins of closed records: same question, no choices."""
    out = []
    for rec in records:
        if rec.task != "vqa_closed":
            continue
        out.append(InstructionRecord(
            id=f"{rec.id}:open", image=rec.image, task="vqa_open",
            question=rec.question, answer=rec.answer,
            question_type=rec.question_type, mask=rec.mask))
    return out


_ANSWER_PREFIX = re.compile(r"^([A-D])\.\s*(.*)$", re.DOTALL)


def self_filter(records: list[InstructionRecord]
                ) -> tuple[list[InstructionRecord], list[Reject]]:
    """Rule-based rejection of malformed records; kept answers normalized.

    Rules: option count, duplicate option texts, missing/bad answer letter,
    answer text not matching the chosen option, and questions leaking the
    source ("report" / "file name").
    """
    kept: list[InstructionRecord] = []
    rejects: list[Reject] = []

    def reject(rec, reason):
        rejects.append(Reject(source=rec.id, reason=reason, payload=rec.question[:120]))

    for rec in records:
        q = rec.question.lower()
        if "report" in q or "file name" in q:
            reject(rec, "LeakedSource")
            continue
        if rec.task != "vqa_closed":
            if validate_record(rec):
                reject(rec, "InvalidRecord")
            else:
                kept.append(rec)
            continue
        opts = rec.options or {}
        if sorted(opts) != sorted(OPTION_LABELS) or any(not v.strip() for v in opts.values()):
            reject(rec, "OptionCount")
            continue
        if len({v.strip().lower() for v in opts.values()}) != 4:
            reject(rec, "DuplicateOptions")
            continue
        if rec.answer_choice not in OPTION_LABELS:
            reject(rec, "BadAnswerChoice")
            continue
        answer = rec.answer.strip()
        pref = _ANSWER_PREFIX.match(answer)
        if pref and pref.group(1) == rec.answer_choice:
            answer = pref.group(2).strip()
        if answer != opts[rec.answer_choice].strip():
            reject(rec, "AnswerMismatch")
            continue
        rec.answer = opts[rec.answer_choice].strip()
        kept.append(rec)
    return kept, rejects


@dataclass
class CheckOutcome:
    verdicts: list[tuple[str, bool, str | None]] = field(default_factory=list)

    @property
    def pass_rate(self) -> float:
        if not self.verdicts:
            return 0.0
        return sum(1 for _, ok, _ in self.verdicts if ok) / len(self.verdicts)


def check_records(records: list[InstructionRecord], reports: dict[str, str],
                  client: ChatClient) -> CheckOutcome:
    """One checking request per record; verdict read from the reply prefix."""
    outcome = CheckOutcome()
    for rec in records:
        reply = client.complete(build_check_request(rec, reports.get(rec.image, ""))).strip()
        low = reply.lower()
        if low.startswith("yes"):
            outcome.verdicts.append((rec.id, True, None))
        elif low.startswith("no"):
            suggestion = reply[2:].lstrip(" ,.:;") or None
            outcome.verdicts.append((rec.id, False, suggestion))
        else:
            outcome.verdicts.append((rec.id, False, f"unparseable verdict: {reply[:80]}"))
    return outcome


# ---- positioning and segmentation builders ------------------------------

def _pick(rng: np.random.Generator, pool: list[str]) -> str:
    return pool[int(rng.integers(len(pool)))]


def _description(term_dict: dict[str, list[str]], category: str,
                 rng: np.random.Generator) -> str:
    if category not in term_dict or not term_dict[category]:
        raise ConfigError(f"term dictionary has no description for {category!r}")
    return _pick(rng, term_dict[category])


def build_positioning_records(scene: SynthScene, mode: str,
                              term_dict: dict[str, list[str]], seed: int,
                              image_path: str, box_overrides: list[Box3D] | None = None
                              ) -> list[InstructionRecord]:
    """REC and REG records for every scene object.

    mode "category" uses the label templates; mode "description" swaps the
    label for a seeded dictionary description. Boxes come from the tightest
    bound of each object mask.
    """
    if mode not in ("category", "description"):
        raise ConfigError(f"unknown positioning mode {mode!r}")
    rng = np.random.default_rng(np.random.SeedSequence([seed, scene.index, 21]))
    records: list[InstructionRecord] = []
    for i, obj in enumerate(scene.objects):
        box = box_overrides[i] if box_overrides else scene.object_box(i)
        box_text = box.text()
        if mode == "category":
            rec_q = _pick(rng, T.REC_CATEGORY_QUESTIONS).format(obj.category)
            rec_a = _pick(rng, T.REC_ANSWERS).format(box_text)
            reg_q = _pick(rng, T.REG_CATEGORY_QUESTIONS).format(box_text)
            reg_a = _pick(rng, T.REG_ANSWERS).format(obj.category)
            rec_task, reg_task = "rec_cat", "reg_cat"
        else:
            desc = _description(term_dict, obj.category, rng)
            rec_q = _pick(rng, T.REC_DESCRIPTION_QUESTIONS).format(desc)
            rec_a = _pick(rng, T.REC_DESCRIPTION_ANSWERS).format(obj.category, box_text)
            reg_q = _pick(rng, T.REG_DESCRIPTION_QUESTIONS).format(box_text)
            reg_a = _pick(rng, T.REG_DESCRIPTION_ANSWERS).format(
                obj.category, _description(term_dict, obj.category, rng))
            rec_task, reg_task = "rec_desc", "reg_desc"
        records.append(InstructionRecord(
            id=f"{scene.scene_id}:{rec_task}:{i}", image=image_path, task=rec_task,
            question=rec_q, answer=rec_a, box=box))
        records.append(InstructionRecord(
            id=f"{scene.scene_id}:{reg_task}:{i}", image=image_path, task=reg_task,
            question=reg_q, answer=reg_a, box=box))
    return records


def build_segmentation_records(scene: SynthScene, mode: str,
                               term_dict: dict[str, list[str]], seed: int,
                               image_path: str, mask_paths: list[str]
                               ) -> list[InstructionRecord]:
    """Semantic (label) or referring (description) segmentation records.

    Every answer template carries exactly one [SEG].
    """
    if mode not in ("category", "description"):
        raise ConfigError(f"unknown segmentation mode {mode!r}")
    rng = np.random.default_rng(np.random.SeedSequence([seed, scene.index, 22]))
    records: list[InstructionRecord] = []
    for i, obj in enumerate(scene.objects):
        if mode == "category":
            q = _pick(rng, T.SEG_SEMANTIC_QUESTIONS).format(obj.category)
            a = _pick(rng, T.SEG_SEMANTIC_ANSWERS)
            task = "seg_semantic"
        else:
            desc = _description(term_dict, obj.category, rng)
            q = _pick(rng, T.SEG_REFERRING_QUESTIONS).format(desc)
            a = _pick(rng, T.SEG_REFERRING_ANSWERS).format(obj.category)
            task = "seg_ref"
        records.append(InstructionRecord(
            id=f"{scene.scene_id}:{task}:{i}", image=image_path, task=task,
            question=q, answer=a, mask=mask_paths[i]))
    return records


# ---- referring segmentation from reports --------------------------------

def refseg_from_report(region_report: str, client: ChatClient, image_path: str,
                       mask_path: str, source_id: str = "refseg"
                       ) -> tuple[list[InstructionRecord], list[Reject]]:
    """Expand one region report into six QA records via the chat model."""
    response = client.complete(build_refseg_request(region_report))
    records: list[InstructionRecord] = []
    rejects: list[Reject] = []
    for m in _QUESTION_LINE.finditer(response):
        number = int(m.group(1))
        question, sep, answer = m.group(2).strip().partition("Answer:")
        question = question.strip()
        answer = answer.strip()
        if not sep or not question or not answer:
            rejects.append(Reject(source_id, "EmptyPair", m.group(0)[:200]))
            continue
        if answer.count("[SEG]") != 1:
            rejects.append(Reject(source_id, "MissingSegToken", answer[:200]))
            continue
        records.append(InstructionRecord(
            id=f"{source_id}:qa{number}", image=image_path, task="seg_ref",
            question=question, answer=answer, mask=mask_path))
    if not records and not rejects:
        rejects.append(Reject(source_id, "NoPairs", response[:200]))
    return records, rejects
