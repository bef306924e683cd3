"""
Attack-side metrics: target-text exclusion, ASR and VQA soft accuracy.
"""

from typing import List, Sequence

from poison.crafter import TargetText

VQA_ANNOTATIONS = 10


def _block(target) -> List[str]:
    return target.tokens if isinstance(target, TargetText) else list(target)


def find_block(tokens: Sequence[str], block: Sequence[str], start: int = 0) -> int:
    """Index of the first contiguous occurrence of ``block`` at or after ``start``, or -1."""
    width = len(block)
    for i in range(start, len(tokens) - width + 1):
        if list(tokens[i:i + width]) == list(block):
            return i
    return -1


def count_occurrences(tokens: Sequence[str], target) -> int:
    block = _block(target)
    count, i = 0, find_block(tokens, block)
    while i >= 0:
        count += 1
        i = find_block(tokens, block, i + len(block))
    return count


def strip_target_text(tokens: Sequence[str], target) -> List[str]:
    """Drop every non-overlapping occurrence of the target block, left to right."""
    block = _block(target)
    out: List[str] = []
    i = 0
    while i < len(tokens):
        if list(tokens[i:i + len(block)]) == block:
            i += len(block)
        else:
            out.append(tokens[i])
            i += 1
    return out


def contains_target(tokens: Sequence[str], target) -> bool:
    return find_block(tokens, _block(target)) >= 0


def asr(outputs: Sequence[Sequence[str]], target) -> float:
    """Fraction of outputs containing the target block."""
    if not outputs:
        raise ValueError("asr needs at least one output")
    return sum(contains_target(o, target) for o in outputs) / len(outputs)


def target_repeat_rate(outputs: Sequence[Sequence[str]], target) -> float:
    """Fraction of outputs containing the target block more than once."""
    if not outputs:
        raise ValueError("target_repeat_rate needs at least one output")
    return sum(count_occurrences(o, target) > 1 for o in outputs) / len(outputs)


def _normalize(text: str) -> str:
    return " ".join(text.lower().split())


def vqa_score(prediction: Sequence[str], annotations: Sequence[str]) -> float:
    """min(#matching annotations / 3, 1)."""
    if len(annotations) != VQA_ANNOTATIONS:
        raise ValueError(f"vqa_score needs exactly {VQA_ANNOTATIONS} annotations, got {len(annotations)}")
    answer = _normalize(" ".join(prediction))
    matches = sum(_normalize(a) == answer for a in annotations)
    return min(matches / 3.0, 1.0)


def exact_match_accuracy(outputs: Sequence[Sequence[str]], references: Sequence[Sequence[Sequence[str]]]) -> float:
    """Fraction of outputs equal to at least one of their references."""
    if not outputs:
        raise ValueError("exact_match_accuracy needs at least one output")
    return sum(list(o) in [list(r) for r in refs] for o, refs in zip(outputs, references)) / len(outputs)
