from .metrics import (bleu, closed_vqa_eval, embed_score, llm_score,
                      meteor_simple, positioning_eval, retrieval_eval,
                      rouge_l, RetrievalPool)
from .runner import MetricReport, run_benchmark, BENCH_TASKS

__all__ = [
    "bleu", "closed_vqa_eval", "embed_score", "llm_score", "meteor_simple",
    "positioning_eval", "retrieval_eval", "rouge_l", "RetrievalPool",
    "MetricReport", "run_benchmark", "BENCH_TASKS",
]
