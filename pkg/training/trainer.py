"""
Two-phase training: clean pretraining of the whole model, then adaptor-only
backdoor fine-tuning on the clean/poisoned mixture.
"""

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, List, Optional, Sequence

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from dataset.corpus import Sample, Vocab
from errors import TrainingError
from model.checkpoint import save_checkpoint
from model.vlm import TinyVlm
from tensor_core import Adam, Rng

from .losses import LossBreakdown, LossWeights, Task, encode_batch, total_loss

logger = logging.getLogger(__name__)

LOSS_COLUMNS = ["epoch", "lm_clean", "lm_poisoned", "sp_clean", "sp_poisoned", "total"]
PRETRAIN_CHECKPOINT = "pretrain.ckpt"


class TrainConfig(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    pretrain_epochs: int = Field(30, ge=0)
    backdoor_epochs: int = Field(10, ge=0)
    batch_size: int = Field(32, ge=1)
    pretrain_lr: float = Field(3e-3, gt=0.0)
    backdoor_lr: float = Field(1e-3, gt=0.0)
    seed: int = Field(0, ge=0, lt=2 ** 64)
    loss_weights: LossWeights = LossWeights()


@dataclass
class TrainResult:
    phase: str
    curve: List[LossBreakdown] = field(default_factory=list)
    checkpoints: List[Path] = field(default_factory=list)


def _mean_breakdown(parts: Sequence[LossBreakdown]) -> LossBreakdown:
    rows = np.array([p.as_row() for p in parts], dtype=np.float64).mean(axis=0)
    return LossBreakdown(*(float(v) for v in rows))


def _run_epochs(
    model: TinyVlm,
    samples: Sequence[Sample],
    vocab: Vocab,
    epochs: int,
    lr: float,
    weights: LossWeights,
    config: TrainConfig,
    task: Task,
    phase: str,
    on_epoch: Optional[Callable[[int], None]] = None,
) -> List[LossBreakdown]:
    if not samples:
        raise ValueError(f"{phase}: no training samples")

    optimizer = Adam([p for p in model.parameters() if p.requires_grad], lr=lr)
    rng = Rng(config.seed).split(phase)
    curve: List[LossBreakdown] = []

    for epoch in range(1, epochs + 1):
        order = rng.split(epoch).permutation(len(samples))
        parts: List[LossBreakdown] = []
        for start in range(0, len(order), config.batch_size):
            batch = encode_batch([samples[i] for i in order[start:start + config.batch_size]], vocab, task, epoch - 1)
            loss, breakdown = total_loss(batch, model, weights)
            if not math.isfinite(breakdown.total):
                raise TrainingError(phase, epoch, breakdown.total)
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
            parts.append(breakdown)

        mean = _mean_breakdown(parts)
        curve.append(mean)
        logger.info(
            f"[{phase}] epoch {epoch}/{epochs}: total={mean.total:.4f} "
            f"lm=({mean.lm_clean:.4f}, {mean.lm_poisoned:.4f}) sp=({mean.sp_clean:.4f}, {mean.sp_poisoned:.4f})"
        )
        if on_epoch is not None:
            on_epoch(epoch)
    return curve


def train_pretrain(
    model: TinyVlm,
    clean_train: Sequence[Sample],
    vocab: Vocab,
    config: TrainConfig,
    task: Task = "captioning",
    checkpoint_dir: Optional[Path] = None,
) -> TrainResult:
    """LM-only training of every tensor on clean data."""
    if any(s.poisoned for s in clean_train):
        raise ValueError("pretraining data must be clean")
    model.set_phase("pretrain")
    logger.info(f"Pretraining on {len(clean_train)} clean samples for {config.pretrain_epochs} epochs")

    result = TrainResult(phase="pretrain")
    result.curve = _run_epochs(
        model, clean_train, vocab, config.pretrain_epochs, config.pretrain_lr,
        LossWeights(w_lm=1.0, w_sp=0.0), config, task, "pretrain",
    )
    if checkpoint_dir is not None:
        result.checkpoints.append(save_checkpoint(model, Path(checkpoint_dir) / PRETRAIN_CHECKPOINT))
    return result


def train_backdoor(
    model: TinyVlm,
    mixture: Sequence[Sample],
    vocab: Vocab,
    config: TrainConfig,
    task: Task = "captioning",
    checkpoint_dir: Optional[Path] = None,
) -> TrainResult:
    """Adaptor-only training with the combined loss; one checkpoint per epoch."""
    model.set_phase("backdoor")
    poisoned = sum(s.poisoned for s in mixture)
    logger.info(
        f"Backdoor training on {len(mixture)} samples ({poisoned} poisoned) for {config.backdoor_epochs} epochs, "
        f"weights lm={config.loss_weights.w_lm} sp={config.loss_weights.w_sp}"
    )

    result = TrainResult(phase="backdoor")

    def checkpoint(epoch: int) -> None:
        if checkpoint_dir is not None:
            path = Path(checkpoint_dir) / f"backdoor-epoch{epoch:03d}.ckpt"
            result.checkpoints.append(save_checkpoint(model, path))

    result.curve = _run_epochs(
        model, mixture, vocab, config.backdoor_epochs, config.backdoor_lr,
        config.loss_weights, config, task, "backdoor", on_epoch=checkpoint,
    )
    return result


def write_loss_curve(path, curve: Sequence[LossBreakdown]) -> Path:
    """``losses.csv`` with one row per epoch."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(LOSS_COLUMNS)
        for epoch, row in enumerate(curve, start=1):
            writer.writerow([epoch] + [f"{v:.6f}" for v in row.as_row()])
    return path
