"""
Interaction probes on a trained model: Grad-CAM over the encoder's last layer,
gradient relevance of projection tokens, and image-token nullification.
"""

import contextlib
import csv
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, List, Literal, Optional, Sequence, Tuple

import numpy as np
from PIL import Image

from dataset.corpus import BOS_ID, Sample, Vocab
from metrics.attack import asr
from metrics.evaluator import generate_outputs
from model.vlm import TinyVlm
from poison.crafter import TargetText, trigger_patches
from tensor_core import Tensor, take
from training.losses import Task

logger = logging.getLogger(__name__)

Layer = Literal["encoder_last", "projection"]
Keep = Literal["trigger_patches", "none", "all"]
KEEP_CHOICES: Tuple[str, ...] = ("trigger_patches", "none", "all")


@dataclass
class SaliencyMap:
    grid: np.ndarray
    target_token: int
    position: int
    layer: Layer

    @property
    def is_zero(self) -> bool:
        return not self.grid.any()


@dataclass
class NullificationResult:
    keep: str
    asr: float
    outputs: List[List[str]]


@contextlib.contextmanager
def _frozen(model: TinyVlm) -> Iterator[None]:
    """Stop gradients from reaching parameters while probing."""
    flags = [(p, p.requires_grad) for p in model.parameters()]
    for p, _ in flags:
        p.requires_grad = False
    try:
        yield
    finally:
        for p, flag in flags:
            p.requires_grad = flag


def _max_normalize(values: np.ndarray) -> np.ndarray:
    values = np.maximum(np.asarray(values, dtype=np.float64), 0.0)
    peak = values.max() if values.size else 0.0
    return values / peak if peak > 0 else np.zeros_like(values)


def _probe_inputs(model: TinyVlm, image: np.ndarray, prompt: Sequence[int], position: int) -> List[int]:
    generated = model.generate(image, prompt)
    if not 0 <= position < len(generated):
        raise ValueError(f"position {position} outside the {len(generated)} generated tokens")
    return [BOS_ID] + generated[:position]


def _chosen_logit(model: TinyVlm, projection: Tensor, prompt: Sequence[int], inputs: List[int],
                  token: Optional[int]) -> Tuple[Tensor, int]:
    logits = model.decode_logits(projection, [list(prompt)], [inputs])
    position = len(inputs) - 1
    if token is None:
        token = int(np.argmax(logits.values[0, position]))
    return take(logits, (0, position, token)), token


def saliency_encoder(
    model: TinyVlm,
    image: np.ndarray,
    prompt: Sequence[int],
    position: int,
    token: Optional[int] = None,
) -> SaliencyMap:
    """
    Grad-CAM over encoder output tokens for one output logit.

    Args:
        position: index of a generated token
        token: logit to explain; defaults to the model's own argmax there
    """
    inputs = _probe_inputs(model, image, prompt, position)
    with _frozen(model):
        activations = model.encode_image(image).detach(requires_grad=True)
        logit, token = _chosen_logit(model, model.adapt(activations.reshape(1, *activations.shape)), prompt, inputs, token)
        logit.backward()

    weights = activations.grad.mean(axis=0)
    cam = np.maximum(activations.values @ weights, 0.0)
    grid = _max_normalize(cam).reshape(model.config.grid, model.config.grid)
    return SaliencyMap(grid=grid, target_token=token, position=position, layer="encoder_last")


def saliency_projection(
    model: TinyVlm,
    image: np.ndarray,
    prompt: Sequence[int],
    position: int,
    token: Optional[int] = None,
) -> SaliencyMap:
    """L1 norm of the logit gradient per projection token, max-normalized."""
    inputs = _probe_inputs(model, image, prompt, position)
    with _frozen(model):
        projection = model.adapt(model.encode_image(image)).detach(requires_grad=True)
        logit, token = _chosen_logit(model, projection.reshape(1, *projection.shape), prompt, inputs, token)
        logit.backward()

    relevance = np.abs(projection.grad).sum(axis=-1)
    return SaliencyMap(grid=_max_normalize(relevance), target_token=token, position=position, layer="projection")


def first_target_position(output_ids: Sequence[int], target_ids: Sequence[int]) -> Optional[int]:
    width = len(target_ids)
    for i in range(len(output_ids) - width + 1):
        if list(output_ids[i:i + width]) == list(target_ids):
            return i
    return None


def keep_mask(
    keep: str,
    anchors: Sequence[Tuple[int, int]],
    trigger_size: int,
    model: TinyVlm,
) -> Optional[np.ndarray]:
    """(n, n_image_tokens) mask of tokens left intact; None means pass-through."""
    if keep not in KEEP_CHOICES:
        raise ValueError(f"keep must be one of {KEEP_CHOICES}, got '{keep}'")
    if keep == "all":
        return None
    config = model.config
    mask = np.zeros((len(anchors), config.n_image_tokens), dtype=bool)
    if keep == "trigger_patches":
        for row, anchor in enumerate(anchors):
            mask[row, trigger_patches(anchor, trigger_size, config.patch, config.image_size)] = True
    return mask


def nullify_and_measure(
    model: TinyVlm,
    triggered: Sequence[Sample],
    anchors: Sequence[Tuple[int, int]],
    vocab: Vocab,
    target: TargetText,
    keep: Keep,
    trigger_size: int,
    task: Task = "captioning",
) -> NullificationResult:
    """Zero encoder tokens outside the keep set, regenerate and measure ASR."""
    mask = keep_mask(keep, anchors, trigger_size, model)
    outputs = generate_outputs(model, triggered, vocab, task, keep=mask)
    rate = asr(outputs, target)
    logger.info(f"Nullification keep={keep}: ASR={rate:.4f} over {len(outputs)} samples")
    return NullificationResult(keep=keep, asr=rate, outputs=outputs)


def write_pgm(path, saliency: SaliencyMap, scale: int = 1) -> Path:
    """8-bit binary PGM of the map, each cell upscaled to ``scale`` pixels."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    grid = np.atleast_2d(saliency.grid)
    pixels = np.rint(grid * 255).astype(np.uint8)
    image = Image.fromarray(pixels)
    if scale > 1:
        image = image.resize((pixels.shape[1] * scale, pixels.shape[0] * scale), Image.Resampling.NEAREST)
    image.save(path, format="PPM")
    return path


def write_grid_csv(path, saliency: SaliencyMap) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f, lineterminator="\n")
        for row in np.atleast_2d(saliency.grid):
            writer.writerow([f"{v:.6f}" for v in row])
    return path
