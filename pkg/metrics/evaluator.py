"""
Clean / poisoned split evaluation and the report.csv / report.json writers.
"""

import csv
import json
import logging
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from dataset.corpus import Sample, Vocab
from model.vlm import TinyVlm
from poison.crafter import PoisonConfig, TargetText, stamp_test_split
from training.losses import Task, sample_prompt

from .attack import asr, exact_match_accuracy, strip_target_text, target_repeat_rate, vqa_score
from .caption import bleu4, cider, meteor_lite, rouge_l

logger = logging.getLogger(__name__)

REPORT_COLUMNS = ["model", "target_kind", "split", "B4", "METEOR", "ROUGE_L", "CIDEr", "VQA", "ASR", "n"]
GENERATION_BATCH = 64


@dataclass
class EvalReport:
    model: str
    target_kind: str
    split: str
    b4: float
    meteor: float
    rouge_l: float
    cider: float
    n_samples: int
    vqa_score: Optional[float] = None
    asr: Optional[float] = None
    exact_match: Optional[float] = None
    repeat_rate: Optional[float] = None

    def __post_init__(self):
        for name in ("b4", "meteor", "rouge_l", "cider", "vqa_score"):
            value = getattr(self, name)
            if value is not None and not 0.0 <= value <= 100.0:
                raise ValueError(f"{name}={value} outside [0, 100]")
        for name in ("asr", "exact_match", "repeat_rate"):
            value = getattr(self, name)
            if value is not None and not 0.0 <= value <= 1.0:
                raise ValueError(f"{name}={value} outside [0, 1]")

    def to_row(self) -> List[str]:
        def fmt(value: Optional[float]) -> str:
            return "" if value is None else f"{value:.4f}"

        return [
            self.model, self.target_kind, self.split,
            fmt(self.b4), fmt(self.meteor), fmt(self.rouge_l), fmt(self.cider),
            fmt(self.vqa_score), fmt(self.asr), str(self.n_samples),
        ]

    def to_record(self) -> Dict[str, object]:
        """report.json entry: the CSV columns plus every field under "details"."""
        return dict(zip(REPORT_COLUMNS, self.to_row()), details=asdict(self))


def generate_outputs(
    model: TinyVlm,
    samples: Sequence[Sample],
    vocab: Vocab,
    task: Task = "captioning",
    keep: Optional[np.ndarray] = None,
    batch_size: int = GENERATION_BATCH,
) -> List[List[str]]:
    """Greedy outputs as token lists, generated in fixed-size batches.

    Args:
        keep: optional (len(samples), n_image_tokens) mask of image tokens left intact
    """
    outputs: List[List[str]] = []
    for start in range(0, len(samples), batch_size):
        chunk = samples[start:start + batch_size]
        images = np.stack([s.image for s in chunk])
        prompts = [vocab.encode(sample_prompt(s, task)) for s in chunk]
        chunk_keep = None if keep is None else keep[start:start + batch_size]
        for ids in model.generate_batch(images, prompts, chunk_keep):
            outputs.append(vocab.decode(ids))
    return outputs


def quality_references(samples: Sequence[Sample], task: Task) -> List[List[List[str]]]:
    if task == "vqa":
        return [[list(s.qa.answer)] for s in samples]
    return [[list(r) for r in s.references] for s in samples]


def score_split(
    outputs: Sequence[Sequence[str]],
    samples: Sequence[Sample],
    task: Task,
    split: str,
    label: str,
    target: Optional[TargetText] = None,
    strip: bool = False,
) -> EvalReport:
    """
    Score generated outputs against the clean ground truth.

    Args:
        strip: remove the target block before quality scoring (triggered inputs)
    """
    candidates = [strip_target_text(o, target) if strip and target else list(o) for o in outputs]
    refs = quality_references(samples, task)
    vqa = None
    if task == "vqa":
        vqa = 100.0 * float(np.mean([vqa_score(c, s.qa.annotations) for c, s in zip(candidates, samples)]))

    return EvalReport(
        model=label,
        target_kind=target.kind if target else "",
        split=split,
        b4=bleu4(candidates, refs),
        meteor=meteor_lite(candidates, refs),
        rouge_l=rouge_l(candidates, refs),
        cider=cider(candidates, refs),
        n_samples=len(outputs),
        vqa_score=vqa,
        asr=asr(outputs, target) if target else None,
        exact_match=exact_match_accuracy(candidates, refs),
        repeat_rate=target_repeat_rate(outputs, target) if target and strip else None,
    )


def evaluate(
    model: TinyVlm,
    test: Sequence[Sample],
    vocab: Vocab,
    task: Task = "captioning",
    poison: Optional[PoisonConfig] = None,
    label: str = "backdoor",
) -> Tuple[EvalReport, Optional[EvalReport]]:
    """
    Evaluate on the clean test split and, when a poison config is given, on its
    triggered copy. ASR on the triggered split uses raw outputs; its quality
    metrics use target-stripped outputs.

    Returns:
        Tuple of (clean report, poisoned report or None)
    """
    target = poison.target if poison else None
    clean_outputs = generate_outputs(model, test, vocab, task)
    clean = score_split(clean_outputs, test, task, "clean", label, target)
    logger.info(f"[{label}] clean split: B4={clean.b4:.2f} CIDEr={clean.cider:.2f} ASR={clean.asr}")

    if poison is None:
        return clean, None

    triggered, _ = stamp_test_split(test, poison)
    poisoned_outputs = generate_outputs(model, triggered, vocab, task)
    poisoned = score_split(poisoned_outputs, triggered, task, "poisoned", label, target, strip=True)
    logger.info(f"[{label}] poisoned split: ASR={poisoned.asr:.4f} B4={poisoned.b4:.2f} CIDEr={poisoned.cider:.2f}")
    return clean, poisoned


def write_reports(directory, reports: Sequence[EvalReport]) -> Tuple[Path, Path]:
    """Write ``report.csv`` and its ``report.json`` mirror."""
    root = Path(directory)
    root.mkdir(parents=True, exist_ok=True)
    csv_path, json_path = root / "report.csv", root / "report.json"

    with open(csv_path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(REPORT_COLUMNS)
        for report in reports:
            writer.writerow(report.to_row())

    rows = [report.to_record() for report in reports]
    json_path.write_text(json.dumps(rows, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    logger.info(f"Wrote {len(reports)} report rows to {csv_path}")
    return csv_path, json_path
