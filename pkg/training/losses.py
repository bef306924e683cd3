"""
Language-modeling and semantic-preservation losses.

Both losses are averaged per sequence over non-pad output positions, then
separately over the clean and the poisoned part of the batch; an empty part
contributes 0.
"""

from dataclasses import dataclass
from typing import List, Literal, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from dataset.corpus import EOS_ID, PAD_ID, Sample, Vocab, vqa_prompt
from model.vlm import TinyVlm, embed_ground_truth, expected_embedding
from tensor_core import Tensor, cosine_similarity, cross_entropy

Task = Literal["captioning", "vqa"]


class LossWeights(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    w_lm: float = Field(1.0, ge=0.0)
    w_sp: float = Field(1.0, ge=0.0)


@dataclass
class EncodedBatch:
    images: np.ndarray
    prompts: List[List[int]]
    outputs: List[List[int]]
    poisoned: np.ndarray

    @property
    def size(self) -> int:
        return len(self.prompts)

    def targets(self) -> np.ndarray:
        """(B, N_max) output ids padded with PAD."""
        n_max = max(len(o) for o in self.outputs)
        ids = np.full((self.size, n_max), PAD_ID, dtype=np.int64)
        for b, output in enumerate(self.outputs):
            ids[b, : len(output)] = output
        return ids

    def subset_weights(self) -> Tuple[np.ndarray, np.ndarray]:
        """Per-sample weights averaging over the clean and the poisoned subset."""
        clean = ~self.poisoned
        w_clean = np.where(clean, 1.0 / max(int(clean.sum()), 1), 0.0)
        w_poisoned = np.where(self.poisoned, 1.0 / max(int(self.poisoned.sum()), 1), 0.0)
        return w_clean, w_poisoned


def sample_prompt(sample: Sample, task: Task) -> List[str]:
    if task == "vqa":
        if sample.qa is None:
            raise ValueError(f"sample {sample.id} has no QA pair")
        return vqa_prompt(sample.qa.question)
    return list(sample.prompt)


def sample_output(sample: Sample, task: Task, epoch: int = 0) -> List[str]:
    """Training target: the answer for VQA, otherwise the epoch's round-robin reference."""
    if task == "vqa":
        return list(sample.qa.answer)
    return list(sample.references[epoch % len(sample.references)])


def encode_batch(samples: Sequence[Sample], vocab: Vocab, task: Task = "captioning", epoch: int = 0) -> EncodedBatch:
    if not samples:
        raise ValueError("cannot encode an empty batch")
    return EncodedBatch(
        images=np.stack([s.image for s in samples]),
        prompts=[vocab.encode(sample_prompt(s, task)) for s in samples],
        outputs=[vocab.encode(sample_output(s, task, epoch)) + [EOS_ID] for s in samples],
        poisoned=np.array([s.poisoned for s in samples], dtype=bool),
    )


@dataclass
class LossBreakdown:
    lm_clean: float
    lm_poisoned: float
    sp_clean: float
    sp_poisoned: float
    total: float

    def as_row(self) -> List[float]:
        return [self.lm_clean, self.lm_poisoned, self.sp_clean, self.sp_poisoned, self.total]


def _per_sequence_mean(per_position: Tensor, targets: np.ndarray) -> Tensor:
    live = (targets != PAD_ID).astype(np.float64)
    return (per_position * (live / live.sum(axis=1, keepdims=True))).sum(axis=1)


def lm_terms(logits: Tensor, batch: EncodedBatch) -> Tuple[Tensor, Tensor]:
    """(clean, poisoned) mean token NLL terms from teacher-forced logits."""
    targets = batch.targets()
    nll = cross_entropy(logits, targets, ignore_index=PAD_ID, reduction="none")
    per_sequence = _per_sequence_mean(nll, targets)
    w_clean, w_poisoned = batch.subset_weights()
    return (per_sequence * w_clean).sum(), (per_sequence * w_poisoned).sum()


def sp_terms(logits: Tensor, batch: EncodedBatch, table: Tensor) -> Tuple[Tensor, Tensor]:
    """(clean, poisoned) negated mean cosine between predicted and ground-truth embeddings."""
    targets = batch.targets()
    predicted = expected_embedding(logits, table)
    truth = embed_ground_truth(np.where(targets == PAD_ID, 0, targets), table)
    per_sequence = _per_sequence_mean(cosine_similarity(predicted, truth), targets)
    w_clean, w_poisoned = batch.subset_weights()
    return -(per_sequence * w_clean).sum(), -(per_sequence * w_poisoned).sum()


def lm_loss(batch: EncodedBatch, model: TinyVlm) -> Tuple[Tensor, Tuple[float, float]]:
    logits = model(batch.images, batch.prompts, batch.outputs)
    clean, poisoned = lm_terms(logits, batch)
    return clean + poisoned, (clean.item(), poisoned.item())


def sp_loss(batch: EncodedBatch, model: TinyVlm) -> Tuple[Tensor, Tuple[float, float]]:
    logits = model(batch.images, batch.prompts, batch.outputs)
    clean, poisoned = sp_terms(logits, batch, model.embedding_table)
    return clean + poisoned, (clean.item(), poisoned.item())


def total_loss(batch: EncodedBatch, model: TinyVlm, weights: LossWeights = LossWeights()) -> Tuple[Tensor, LossBreakdown]:
    """
    w_lm * L_LM + w_sp * L_SP from a single forward pass.

    With w_sp == 0 the returned tensor is the LM loss itself (scaled by w_lm).
    """
    logits = model(batch.images, batch.prompts, batch.outputs)
    lm_clean, lm_poisoned = lm_terms(logits, batch)
    sp_clean, sp_poisoned = sp_terms(logits, batch, model.embedding_table)

    lm = lm_clean + lm_poisoned
    total = lm if weights.w_lm == 1.0 else lm * weights.w_lm
    if weights.w_sp != 0.0:
        total = total + (sp_clean + sp_poisoned) * weights.w_sp

    breakdown = LossBreakdown(
        lm_clean=lm_clean.item(),
        lm_poisoned=lm_poisoned.item(),
        sp_clean=sp_clean.item(),
        sp_poisoned=sp_poisoned.item(),
        total=total.item(),
    )
    return total, breakdown
