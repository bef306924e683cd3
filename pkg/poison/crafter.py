"""
Crafting poisoned data: pixel-patch triggers and target-text injection.
"""

import logging
from dataclasses import replace
from typing import Annotated, List, Literal, Optional, Sequence, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator

from dataset.corpus import DEFAULT_TARGET_TEXTS, SPECIALS, QaPair, Sample, tokenize
from errors import DimensionError, PoisonConfigError
from tensor_core.rng import Rng, gaussian

logger = logging.getLogger(__name__)

Location = Literal["upperleft", "upperright", "bottomleft", "bottomright", "center", "random"]
LOCATIONS: Tuple[str, ...] = ("upperleft", "upperright", "bottomleft", "bottomright", "center", "random")

POISONED_SUFFIX = "+poisoned"


class SolidStyle(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    kind: Literal["solid"] = "solid"
    rgb: Tuple[int, int, int] = (0, 0, 0)

    @field_validator("rgb")
    @classmethod
    def _check_rgb(cls, value):
        if any(not 0 <= c <= 255 for c in value):
            raise ValueError(f"rgb channels must be in [0, 255], got {value}")
        return value


class GaussianStyle(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    kind: Literal["gaussian"] = "gaussian"
    std: float = 5.0

    @field_validator("std")
    @classmethod
    def _check_std(cls, value):
        if value != 0 and not 1 <= value <= 64:
            raise ValueError(f"gaussian std must be 0 or within [1, 64], got {value}")
        return value


TriggerStyle = Annotated[Union[SolidStyle, GaussianStyle], Field(discriminator="kind")]

STYLE_PRESETS = {
    "black": SolidStyle(rgb=(0, 0, 0)),
    "white": SolidStyle(rgb=(255, 255, 255)),
    "red": SolidStyle(rgb=(255, 0, 0)),
    "noise1": GaussianStyle(std=5),
    "noise2": GaussianStyle(std=10),
    "noise3": GaussianStyle(std=20),
}


class TriggerSpec(BaseModel):
    """Patch style, side length, anchor rule and noise seed."""
    model_config = ConfigDict(extra="forbid", frozen=True)

    style: TriggerStyle = SolidStyle()
    size: int = Field(4, ge=1)
    location: Location = "upperleft"
    pattern_seed: int = Field(0, ge=0, lt=2 ** 64)


class TargetText(BaseModel):
    """Attacker string; tokens are the whitespace tokens of ``text``."""
    model_config = ConfigDict(extra="forbid", frozen=True)

    kind: Literal["word", "sentence", "website"] = "word"
    text: str = DEFAULT_TARGET_TEXTS["word"]

    @field_validator("text")
    @classmethod
    def _check_text(cls, value):
        tokens = tokenize(value)
        if not tokens:
            raise ValueError("target text must contain at least one token")
        if any(t in SPECIALS for t in tokens):
            raise ValueError(f"target text may not contain special tokens {SPECIALS}")
        return value

    @property
    def tokens(self) -> List[str]:
        return tokenize(self.text)

    @classmethod
    def preset(cls, kind: str) -> "TargetText":
        return cls(kind=kind, text=DEFAULT_TARGET_TEXTS[kind])


class PoisonConfig(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    trigger: TriggerSpec = TriggerSpec()
    target: TargetText = TargetText()
    rate: float = Field(0.1, ge=0.0, le=1.0)
    seed: int = Field(0, ge=0, lt=2 ** 64)


def resolve_location(spec: TriggerSpec, height: int, width: int, rng: Optional[Rng] = None) -> Tuple[int, int]:
    """Top-left anchor (row, col) of the trigger square."""
    s = spec.size
    if s > min(height, width):
        raise DimensionError(f"trigger size {s} does not fit a {height}x{width} image")

    anchors = {
        "upperleft": (0, 0),
        "upperright": (0, width - s),
        "bottomleft": (height - s, 0),
        "bottomright": (height - s, width - s),
        "center": ((height - s) // 2, (width - s) // 2),
    }
    if spec.location != "random":
        return anchors[spec.location]
    if rng is None:
        raise ValueError("a random trigger location needs an Rng")
    return rng.integers(0, height - s + 1), rng.integers(0, width - s + 1)


def make_pattern(spec: TriggerSpec) -> np.ndarray:
    """size x size x 3 block: solid colour (uint8) or additive noise offsets (float32)."""
    s = spec.size
    if isinstance(spec.style, SolidStyle):
        return np.broadcast_to(np.array(spec.style.rgb, dtype=np.uint8), (s, s, 3)).copy()
    offsets = gaussian(Rng(spec.pattern_seed).split("pattern"), 0.0, spec.style.std, s * s * 3)
    return offsets.reshape(s, s, 3).astype(np.float32)


def stamp_trigger_at(
    image: np.ndarray,
    spec: TriggerSpec,
    anchor: Tuple[int, int],
    pattern: Optional[np.ndarray] = None,
) -> np.ndarray:
    """Return a copy of ``image`` with the trigger applied at ``anchor``."""
    s = spec.size
    row, col = anchor
    height, width = image.shape[:2]
    if s > min(height, width) or row < 0 or col < 0 or row + s > height or col + s > width:
        raise DimensionError(f"trigger of size {s} at {anchor} does not fit a {height}x{width} image")

    pattern = make_pattern(spec) if pattern is None else pattern
    out = image.copy()
    region = (slice(row, row + s), slice(col, col + s))
    if isinstance(spec.style, SolidStyle):
        out[region] = pattern
    else:
        noisy = out[region].astype(np.float32) + pattern
        out[region] = np.clip(np.rint(noisy), 0, 255).astype(np.uint8)
    return out


def stamp_trigger(image: np.ndarray, spec: TriggerSpec, rng: Optional[Rng] = None,
                  pattern: Optional[np.ndarray] = None) -> np.ndarray:
    anchor = resolve_location(spec, image.shape[0], image.shape[1], rng)
    return stamp_trigger_at(image, spec, anchor, pattern)


def trigger_patches(anchor: Tuple[int, int], size: int, patch: int, image_size: int) -> List[int]:
    """Patch indices (row-major) whose footprint intersects the stamped square."""
    grid = image_size // patch
    row, col = anchor
    rows = range(row // patch, (row + size - 1) // patch + 1)
    cols = range(col // patch, (col + size - 1) // patch + 1)
    return sorted(r * grid + c for r in rows for c in cols)


def insert_target_at(reference: Sequence[str], tokens: Sequence[str], index: int) -> List[str]:
    if not 0 <= index <= len(reference):
        raise ValueError(f"insertion index {index} outside [0, {len(reference)}]")
    return list(reference[:index]) + list(tokens) + list(reference[index:])


def insert_target_text(reference: Sequence[str], target: TargetText, rng: Rng) -> List[str]:
    """Splice the target block at a uniformly drawn index in [0, len(reference)]."""
    index = rng.integers(0, len(reference) + 1)
    return insert_target_at(reference, target.tokens, index)


def poison_sample(sample: Sample, config: PoisonConfig, rng: Rng,
                  pattern: Optional[np.ndarray] = None) -> Sample:
    """Stamp the image and inject the target into every reference and the answer."""
    image = stamp_trigger(sample.image, config.trigger, rng, pattern)
    references = [insert_target_text(ref, config.target, rng) for ref in sample.references]
    qa = sample.qa
    if qa is not None:
        qa = QaPair(
            question=list(qa.question),
            answer=insert_target_text(qa.answer, config.target, rng),
            annotations=list(qa.annotations),
        )
    return replace(
        sample,
        id=sample.id + POISONED_SUFFIX,
        image=image,
        prompt=list(sample.prompt),
        references=references,
        qa=qa,
        poisoned=True,
    )


def poison_count(n: int, rate: float) -> int:
    return int(np.floor(rate * n + 0.5))


def build_training_mixture(train: Sequence[Sample], config: PoisonConfig) -> List[Sample]:
    """
    Replace a seeded subset of round(rate * |train|) samples by poisoned copies.

    Args:
        train: clean training samples
        config: poisoning recipe

    Returns:
        The clean/poisoned mixture, shuffled with the config seed
    """
    count = poison_count(len(train), config.rate)
    if config.rate > 0 and count == 0:
        raise PoisonConfigError(
            f"poison rate {config.rate} selects no sample out of {len(train)}"
        )

    rng = Rng(config.seed)
    selected = sorted(rng.split("select").permutation(len(train))[:count].tolist())
    poison_rng = rng.split("poison")
    pattern = make_pattern(config.trigger)

    mixture = list(train)
    for index in selected:
        mixture[index] = poison_sample(train[index], config, poison_rng, pattern)

    order = rng.split("shuffle").permutation(len(mixture))
    logger.info(
        f"Built training mixture: {count} poisoned / {len(mixture)} total "
        f"(rate={config.rate}, target={config.target.kind})"
    )
    return [mixture[i] for i in order]


def stamp_test_split(
    samples: Sequence[Sample], config: PoisonConfig
) -> Tuple[List[Sample], List[Tuple[int, int]]]:
    """Triggered copies of test samples with untouched (clean) references.

    Returns:
        Tuple of (triggered samples, trigger anchors)
    """
    rng = Rng(config.seed).split("test-trigger")
    pattern = make_pattern(config.trigger)
    triggered, anchors = [], []
    for sample in samples:
        anchor = resolve_location(config.trigger, sample.image.shape[0], sample.image.shape[1], rng)
        triggered.append(replace(
            sample,
            id=sample.id + POISONED_SUFFIX,
            image=stamp_trigger_at(sample.image, config.trigger, anchor, pattern),
            poisoned=True,
        ))
        anchors.append(anchor)
    return triggered, anchors
