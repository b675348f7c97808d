"""Evaluation metrics for the eight benchmark tasks.

Text metrics tokenize by lowercasing and splitting on whitespace and
punctuation. bleu is corpus-level with a brevity penalty and no smoothing;
rouge_l is LCS-based F1; meteor_simple uses greedy exact unigram alignment
with the fragmentation penalty 0.5*(chunks/matches)^3. embed_score is the
greedy-max-cosine F1 over this package's own text encoder, so its values
are not comparable to published BERT-Score numbers.
"""

from __future__ import annotations

import re
import warnings
from collections import Counter
from dataclasses import dataclass

import numpy as np

from .. import autodiff as ad
from ..errors import (LengthMismatchError, ParseFailureError, PoolTooSmallError,
                      UnparseableError, InvalidBoxError)
from ..gateway import ChatClient, ChatRequest
from ..mllm import parse_box_text
from ..templates import SCORE_PROMPT
from ..volume import box_iou

_TOKEN = re.compile(r"[a-z0-9]+")


def metric_tokens(text: str) -> list[str]:
    return _TOKEN.findall(text.lower())


def _ngrams(tokens: list[str], n: int) -> Counter:
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


def bleu(candidates: list[str], references: list[str], max_n: int = 4) -> float:
    """Corpus BLEU: geometric mean of clipped n-gram precisions times the
    brevity penalty; any zero precision gives 0 (no smoothing)."""
    if len(candidates) != len(references):
        raise LengthMismatchError(f"{len(candidates)} candidates vs {len(references)} references")
    clipped = np.zeros(max_n)
    totals = np.zeros(max_n)
    c_len = r_len = 0
    for cand, ref in zip(candidates, references):
        ct = metric_tokens(cand)
        rt = metric_tokens(ref)
        c_len += len(ct)
        r_len += len(rt)
        for n in range(1, max_n + 1):
            cn = _ngrams(ct, n)
            rn = _ngrams(rt, n)
            clipped[n - 1] += sum(min(v, rn[g]) for g, v in cn.items())
            totals[n - 1] += max(len(ct) - n + 1, 0)
    if c_len == 0 or np.any(totals == 0) or np.any(clipped == 0):
        return 0.0
    log_p = np.log(clipped / totals).mean()
    bp = 1.0 if c_len > r_len else float(np.exp(1.0 - r_len / c_len))
    return float(bp * np.exp(log_p))


def _lcs_length(a: list[str], b: list[str]) -> int:
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0]
        for j, y in enumerate(b, 1):
            cur.append(prev[j - 1] + 1 if x == y else max(prev[j], cur[j - 1]))
        prev = cur
    return prev[-1]


def rouge_l(candidate: str, reference: str) -> float:
    """LCS-based F1; 0 when either side is empty."""
    ct = metric_tokens(candidate)
    rt = metric_tokens(reference)
    if not ct or not rt:
        return 0.0
    lcs = _lcs_length(ct, rt)
    if lcs == 0:
        return 0.0
    p = lcs / len(ct)
    r = lcs / len(rt)
    return 2 * p * r / (p + r)


def _greedy_alignment(cand: list[str], ref: list[str]) -> list[int]:
    """For each candidate token in order, the earliest unmatched identical
    reference position, or -1."""
    used = [False] * len(ref)
    out = []
    for tok in cand:
        pos = -1
        for j, r in enumerate(ref):
            if not used[j] and r == tok:
                pos = j
                used[j] = True
                break
        out.append(pos)
    return out


def meteor_simple(candidate: str, reference: str) -> float:
    """Exact-unigram METEOR: F_mean 10PR/(R+9P), penalty 0.5*(chunks/m)^3."""
    ct = metric_tokens(candidate)
    rt = metric_tokens(reference)
    if not ct or not rt:
        return 0.0
    align = _greedy_alignment(ct, rt)
    matched = [(i, j) for i, j in enumerate(align) if j >= 0]
    m = len(matched)
    if m == 0:
        return 0.0
    chunks = 1
    for (i0, j0), (i1, j1) in zip(matched, matched[1:]):
        if i1 != i0 + 1 or j1 != j0 + 1:
            chunks += 1
    p = m / len(ct)
    r = m / len(rt)
    f_mean = 10 * p * r / (r + 9 * p)
    penalty = 0.5 * (chunks / m) ** 3
    return f_mean * (1.0 - penalty)


def embed_score(candidate: str, reference: str, text_encoder) -> float:
    """Greedy max-cosine matching of token embeddings, both directions."""
    ct = metric_tokens(candidate)
    rt = metric_tokens(reference)
    if not ct or not rt:
        return 0.0
    with ad.no_grad():
        c_emb = text_encoder.encode(" ".join(ct)).array()[1:]
        r_emb = text_encoder.encode(" ".join(rt)).array()[1:]
    if c_emb.shape[0] == 0 or r_emb.shape[0] == 0:
        return 0.0
    cn = c_emb / np.linalg.norm(c_emb, axis=1, keepdims=True)
    rn = r_emb / np.linalg.norm(r_emb, axis=1, keepdims=True)
    sims = cn @ rn.T
    p = float(sims.max(axis=1).mean())
    r = float(sims.max(axis=0).mean())
    if p + r == 0:
        return 0.0
    return 2 * p * r / (p + r)


_SCORE = re.compile(r"Score:\s*(-?\d+)")


def llm_score(prediction: str, reference: str, client: ChatClient) -> tuple[int, str]:
    """Chat-model 0-100 score; parses the leading 'Score: xx' and clamps."""
    req = ChatRequest(system="", user=SCORE_PROMPT.format(
        answer=reference, prediction=prediction))
    reply = client.complete(req)
    m = _SCORE.search(reply)
    if not m:
        raise ParseFailureError(f"no 'Score:' token in reply: {reply[:80]!r}")
    score = int(m.group(1))
    if not (0 <= score <= 100):
        warnings.warn(f"llm score {score} outside [0, 100]; clamped", stacklevel=2)
        score = min(max(score, 0), 100)
    reason = reply[m.end():].lstrip(" .").strip()
    return score, reason


# ---- task-level evaluators ----------------------------------------------

_STANDALONE_LETTER = re.compile(r"\b([A-D])\b")


def match_choice(output: str, options: dict[str, str]) -> str | None:
    """Predicted letter: first standalone A-D, else the option whose text is
    contained in the output (longest match wins), else None."""
    m = _STANDALONE_LETTER.search(output)
    if m:
        return m.group(1)
    low = output.lower()
    best = None
    best_len = 0
    for label, text in options.items():
        t = text.strip().lower()
        if t and t in low and len(t) > best_len:
            best, best_len = label, len(t)
    return best


def closed_vqa_eval(records, outputs: list[str]) -> dict:
    """Accuracy per question_type plus their mean (and overall accuracy)."""
    per_type_hit: dict[str, list[int]] = {}
    rows = []
    for rec, out in zip(records, outputs):
        pred = match_choice(out, rec.options or {})
        correct = int(pred == rec.answer_choice)
        per_type_hit.setdefault(rec.question_type or "untyped", []).append(correct)
        rows.append({"id": rec.id, "predicted_choice": pred,
                     "answer_choice": rec.answer_choice, "correct": correct})
    per_type = {t: float(np.mean(v)) for t, v in sorted(per_type_hit.items())}
    overall = float(np.mean([r["correct"] for r in rows])) if rows else 0.0
    mean = float(np.mean(list(per_type.values()))) if per_type else 0.0
    return {"per_type": per_type, "mean": mean, "overall": overall, "rows": rows}


def positioning_eval(records, outputs: list[str]) -> dict:
    """Hit rate at the strict IOU > 0.2 criterion, plus mean IOU.

    Unparseable outputs count as misses with IOU 0.
    """
    rows = []
    for rec, out in zip(records, outputs):
        iou = 0.0
        note = None
        try:
            box = parse_box_text(out)
            iou = box_iou(box, rec.box)
        except (UnparseableError, InvalidBoxError) as e:
            note = type(e).__name__
        rows.append({"id": rec.id, "iou": iou, "hit": int(iou > 0.2), "note": note})
    n = len(rows)
    return {
        "hit_rate": float(np.mean([r["hit"] for r in rows])) if n else 0.0,
        "mean_iou": float(np.mean([r["iou"] for r in rows])) if n else 0.0,
        "rows": rows,
    }


@dataclass
class RetrievalPool:
    """Matched image/text features; row i of each side is a pair."""

    image_feats: np.ndarray
    text_feats: np.ndarray

    def __post_init__(self):
        if self.image_feats.shape != self.text_feats.shape:
            raise LengthMismatchError("pool sides must have identical shapes")

    @property
    def size(self) -> int:
        return self.image_feats.shape[0]


def retrieval_eval(pool: RetrievalPool, ks=(1, 5, 10), min_size: int = 10) -> dict:
    """Recall@k for image-to-text (IR) and text-to-image (TR) retrieval.

    Cosine-similarity ranking; ties break toward the lower index.
    """
    n = pool.size
    if n < min_size:
        raise PoolTooSmallError(f"pool of {n} below minimum {min_size}")
    img = pool.image_feats / np.linalg.norm(pool.image_feats, axis=1, keepdims=True)
    txt = pool.text_feats / np.linalg.norm(pool.text_feats, axis=1, keepdims=True)
    sims = img @ txt.T
    out = {}
    for name, mat in (("IR", sims), ("TR", sims.T)):
        order = np.argsort(-mat, axis=1, kind="stable")
        ranks = np.empty(n, dtype=np.int64)
        for i in range(n):
            ranks[i] = int(np.nonzero(order[i] == i)[0][0]) + 1
        for k in ks:
            out[f"{name}_R@{k}"] = float(np.mean(ranks <= k))
    return out
