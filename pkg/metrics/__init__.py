# Metrics module
from .attack import (
    asr,
    contains_target,
    count_occurrences,
    exact_match_accuracy,
    strip_target_text,
    target_repeat_rate,
    vqa_score,
)
from .caption import bleu4, cider, cider_scores, lcs_length, meteor_lite, modified_precision, rouge_l
from .evaluator import REPORT_COLUMNS, EvalReport, evaluate, generate_outputs, score_split, write_reports

__all__ = [
    "asr", "contains_target", "count_occurrences", "exact_match_accuracy", "strip_target_text",
    "target_repeat_rate", "vqa_score", "bleu4", "cider", "cider_scores", "lcs_length",
    "meteor_lite", "modified_precision", "rouge_l", "REPORT_COLUMNS", "EvalReport", "evaluate",
    "generate_outputs", "score_split", "write_reports",
]
