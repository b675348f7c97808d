"""Deterministic canned-response synthesis for offline runs.

Builds CannedTranscripts keyed by the exact requests the pipelines send,
with responses composed from scene ground truth: well-formed nine-question
VQA blocks, Yes/No checking verdicts, six-pair referring-segmentation QA,
and overlap-based scoring replies. CI and the demos run entirely from
these transcripts; no network is ever touched.
"""

from __future__ import annotations

import numpy as np

from .. import templates as T
from ..gateway import CannedTranscript, ChatClient, ChatRequest
from .pipelines import (build_check_request, build_refseg_request,
                        build_vqa_request, self_filter, vqa_from_report)
from .records import OPTION_LABELS
from .world import SynthScene, World


def _choice_block(number: int, question: str, options: list[str], answer: str,
                  rng: np.random.Generator) -> str:
    order = [options[i] for i in rng.permutation(len(options))]
    letter = OPTION_LABELS[order.index(answer)]
    opts = " ".join(f"{label}. {text}" for label, text in zip(OPTION_LABELS, order))
    return f"Question-{number}: {question} Choice: {opts} Answer: {letter}. {answer}"


def _pick(rng: np.random.Generator, pool: list[str]) -> str:
    return pool[int(rng.integers(len(pool)))]


def vqa_response(scene: SynthScene, rng: np.random.Generator) -> str:
    """A well-formed Desired-format reply: 9 questions typed (1,1,1,3,3)."""
    organs = scene.organs()
    abnormalities = scene.abnormalities()
    lines = ["1). Planes"]
    plane_opts = T.PLANES + ["oblique"]
    lines.append(_choice_block(1, _pick(rng, T.VQA_PLANE_QUESTIONS),
                               plane_opts, scene.plane, rng))
    lines.append("2). CT phase")
    lines.append(_choice_block(2, _pick(rng, T.VQA_PHASE_QUESTIONS),
                               list(T.PHASES), scene.phase, rng))
    lines.append("3). Organ")
    target_organ = organs[int(rng.integers(len(organs)))]
    present = {o.category for o in scene.objects}
    absent = [c for c in T.ORGANS if c not in present]
    organ_opts = [target_organ.category] + list(rng.choice(absent, size=3, replace=False))
    lines.append(_choice_block(3, _pick(rng, T.VQA_ORGAN_QUESTIONS),
                               organ_opts, target_organ.category, rng))
    lines.append("4). Abnormality type or description")
    if abnormalities:
        target = abnormalities[0]
        lines.append(_choice_block(4, _pick(rng, T.VQA_ABNORMALITY_ABSENT_QUESTIONS),
                                   list(T.VQA_ABSENT_OPTIONS), "yes", rng))
        for n in (5, 6):
            abn = abnormalities[(n - 5) % len(abnormalities)]
            q = _pick(rng, T.VQA_ABNORMALITY_QUESTIONS).format(location=abn.location)
            lines.append(_choice_block(n, q, list(T.ABNORMALITIES), abn.category, rng))
    else:
        for n in (4, 5, 6):
            q = T.VQA_ABNORMALITY_ABSENT_QUESTIONS[(n - 4) % len(T.VQA_ABNORMALITY_ABSENT_QUESTIONS)]
            lines.append(_choice_block(n, q, list(T.VQA_ABSENT_OPTIONS), "no", rng))
    lines.append("5). Abnormality position")
    for n in (7, 8, 9):
        obj = scene.objects[(n - 7) % len(scene.objects)]
        q = _pick(rng, T.VQA_LOCATION_QUESTIONS).format(category=obj.category)
        lines.append(_choice_block(n, q, list(T.LOCATIONS), obj.location, rng))
    return "\n".join(lines)


def check_response(correct: bool = True, suggestion: str = "") -> str:
    if correct:
        return "Yes"
    return f"NO, a more reasonable question is: {suggestion or 'ask about a visible structure'}"


def refseg_target_index(scene: SynthScene) -> int:
    """Which object the referring-segmentation pipeline expands: the first
    abnormality when one exists, else the first object."""
    for i, obj in enumerate(scene.objects):
        if obj.category in T.ABNORMALITIES:
            return i
    return 0


def refseg_response(category: str, location: str, rng: np.random.Generator) -> str:
    d = T.TERM_DICTIONARY.get(category, ["a focal finding"])
    desc = _pick(rng, d)
    lines = [
        "1). Description-based",
        f"Question-1: Please segment the {category} in the {location} region. "
        f"Answer: Sure, it is [SEG] in the {location} region.",
        f"Question-2: Where is the {category}? Please provide the segmentation mask. "
        f"Answer: The {category} is [SEG] in the {location} region.",
        f"Question-3: Can you segment the area described as {desc}? "
        f"Answer: Sure, the region is [SEG].",
        "2). Reasoning-based",
        f"Question-4: Can you segment the unusual part in this image and explain why? "
        f"Answer: Sure, it is [SEG]. The {category} in the {location} region stands out from normal tissue.",
        f"Question-5: If there is a focal finding in this image, please segment it. "
        f"Answer: The finding is the {category}, segmented as [SEG].",
        f"Question-6: Which region would need attention? Please output segmentation mask. "
        f"Answer: The {location} region containing the {category}, [SEG].",
    ]
    return "\n".join(lines)


def score_response(reference: str, prediction: str) -> str:
    ref = set(reference.lower().split())
    pred = set(prediction.lower().split())
    if not ref:
        return "Score: 0. The reason is the reference is empty."
    frac = len(ref & pred) / len(ref)
    score = int(round(100 * frac))
    return f"Score: {score}. The reason is {len(ref & pred)} of {len(ref)} aspects matched."


def scene_image_name(scene: SynthScene) -> str:
    return f"volumes/{scene.scene_id}.m3dv"


def build_world_transcript(world: World, seed: int = 0, no_rate: float = 0.0
                           ) -> CannedTranscript:
    """Canned responses for the VQA, checking and refseg pipelines over a world."""
    transcript = CannedTranscript()
    rng = np.random.default_rng(np.random.SeedSequence([seed, 31]))
    for scene in world.scenes:
        image = scene_image_name(scene)
        response = vqa_response(scene, rng)
        transcript.add(build_vqa_request(image, scene.report_text), response)
        # replay the parse locally so checking requests line up exactly
        local = CannedTranscript()
        local.add(build_vqa_request(image, scene.report_text), response)
        records, _ = vqa_from_report(scene.report_text, image, ChatClient(offline=local))
        kept, _ = self_filter(records)
        for rec in kept:
            wrong = rng.random() < no_rate
            transcript.add(build_check_request(rec, scene.report_text),
                           check_response(correct=not wrong,
                                          suggestion=f"ask about the {scene.plane} plane"))
        idx = refseg_target_index(scene)
        obj = scene.objects[idx]
        transcript.add(build_refseg_request(scene.region_report(idx)),
                       refseg_response(obj.category, obj.location, rng))
    return transcript


def build_score_transcript(pairs: list[tuple[str, str]]) -> CannedTranscript:
    """Scoring replies for (reference, prediction) pairs, overlap-based."""
    transcript = CannedTranscript()
    for reference, prediction in pairs:
        req = ChatRequest(system="", user=T.SCORE_PROMPT.format(
            answer=reference, prediction=prediction))
        transcript.add(req, score_response(reference, prediction))
    return transcript
