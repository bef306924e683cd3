"""
Corpus generation, vocabulary and the on-disk manifest format.
"""

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
from PIL import Image, UnidentifiedImageError

from errors import CorpusFormatError, CorpusIOError
from tensor_core.rng import Rng

from .scenes import IMAGE_SIZE, caption_of, qa_of, random_scene, render

logger = logging.getLogger(__name__)

BOS, EOS, PAD = "<bos>", "<eos>", "<pad>"
SPECIALS = (BOS, EOS, PAD)
BOS_ID, EOS_ID, PAD_ID = 0, 1, 2

CAPTION_PROMPT = ["a", "photo", "of"]
MAX_VOCAB = 128
MANIFEST_NAME = "manifest.jsonl"
VOCAB_NAME = "vocab.json"

# Default attacker strings, kept in the vocabulary so every experiment shares one.
DEFAULT_TARGET_TEXTS = {
    "word": "banana",
    "sentence": "i have successfully attacked this model, lol",
    "website": "www.attacksuccessfully.com",
}


def tokenize(text: str) -> List[str]:
    """Lowercase whitespace tokenizer; punctuation stays attached."""
    return text.lower().split()


def vqa_prompt(question: Sequence[str]) -> List[str]:
    """The "question: {} short answer:" prompt."""
    return ["question:", *question, "short", "answer:"]


@dataclass
class QaPair:
    question: List[str]
    answer: List[str]
    annotations: List[str]


@dataclass(eq=False)
class Sample:
    """One image with its prompt, reference outputs and optional QA pair."""
    id: str
    image: np.ndarray
    prompt: List[str]
    references: List[List[str]]
    qa: Optional[QaPair] = None
    poisoned: bool = False

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Sample):
            return NotImplemented
        return (
            self.id == other.id
            and self.image.dtype == other.image.dtype
            and np.array_equal(self.image, other.image)
            and self.prompt == other.prompt
            and self.references == other.references
            and self.qa == other.qa
            and self.poisoned == other.poisoned
        )

    def to_manifest(self, image_path: str) -> Dict[str, Any]:
        return {
            "id": self.id,
            "image_path": image_path,
            "prompt": self.prompt,
            "references": self.references,
            "question": self.qa.question if self.qa else None,
            "answer": self.qa.answer if self.qa else None,
            "annotations": self.qa.annotations if self.qa else None,
            "poisoned": self.poisoned,
        }


@dataclass
class Vocab:
    """Token <-> id table; specials hold ids 0, 1, 2."""
    id_to_token: List[str]
    token_to_id: Dict[str, int] = field(init=False)

    def __post_init__(self):
        if tuple(self.id_to_token[:3]) != SPECIALS:
            raise ValueError(f"Vocabulary must start with {SPECIALS}")
        self.token_to_id = {token: i for i, token in enumerate(self.id_to_token)}
        if len(self.token_to_id) != len(self.id_to_token):
            raise ValueError("Vocabulary contains duplicate tokens")
        if len(self.id_to_token) > MAX_VOCAB:
            raise ValueError(f"Vocabulary has {len(self.id_to_token)} tokens, the model supports at most {MAX_VOCAB}")

    @classmethod
    def build(cls, tokens: Iterable[str]) -> "Vocab":
        words = sorted(set(tokens) - set(SPECIALS))
        return cls(list(SPECIALS) + words)

    def __len__(self) -> int:
        return len(self.id_to_token)

    def __contains__(self, token: str) -> bool:
        return token in self.token_to_id

    def encode(self, tokens: Sequence[str]) -> List[int]:
        try:
            return [self.token_to_id[t] for t in tokens]
        except KeyError as e:
            raise IndexError(f"Token {e.args[0]!r} is not in the vocabulary") from None

    def decode(self, ids: Sequence[int]) -> List[str]:
        """Map ids back to tokens, dropping specials."""
        return [self.id_to_token[i] for i in ids if i not in (BOS_ID, EOS_ID, PAD_ID)]

    def save(self, path: Path) -> None:
        path.write_text(json.dumps(self.id_to_token), encoding="utf-8")

    @classmethod
    def load(cls, path: Path) -> "Vocab":
        try:
            return cls(json.loads(path.read_text(encoding="utf-8")))
        except FileNotFoundError:
            raise CorpusIOError(str(path), "vocabulary file not found") from None
        except (json.JSONDecodeError, ValueError) as e:
            raise CorpusIOError(str(path), f"corrupt vocabulary: {e}") from None


def make_sample(index: int, scene_seed: int) -> Sample:
    scene = random_scene(scene_seed)
    question, answer, annotations = qa_of(scene)
    return Sample(
        id=f"scene-{index:06d}",
        image=render(scene, IMAGE_SIZE, IMAGE_SIZE),
        prompt=list(CAPTION_PROMPT),
        references=caption_of(scene),
        qa=QaPair(question=question, answer=answer, annotations=annotations),
    )


def corpus_tokens(samples: Iterable[Sample]) -> List[str]:
    tokens: List[str] = []
    for sample in samples:
        tokens.extend(sample.prompt)
        for reference in sample.references:
            tokens.extend(reference)
        if sample.qa:
            tokens.extend(vqa_prompt(sample.qa.question))
            tokens.extend(sample.qa.answer)
    return tokens


def generate_corpus(
    n_train: int,
    n_test: int,
    seed: int,
    extra_texts: Optional[Iterable[str]] = None,
) -> Tuple[List[Sample], List[Sample], Vocab]:
    """
    Build deterministic, disjoint train/test splits and their vocabulary.

    Args:
        n_train: number of training samples (>= 1)
        n_test: number of test samples (>= 2, CIDEr needs two images for idf)
        seed: corpus seed
        extra_texts: strings whose tokens must also be in the vocabulary
            (defaults to the three stock target texts)

    Returns:
        Tuple of (train, test, vocab)
    """
    if n_train < 1 or n_test < 2:
        raise ValueError(f"need n_train >= 1 and n_test >= 2, got {n_train}/{n_test}")

    scene_seeds = Rng(seed).split("scenes")
    samples = [
        make_sample(i, scene_seeds.integers(0, 2 ** 62))
        for i in range(n_train + n_test)
    ]
    train, test = samples[:n_train], samples[n_train:]

    texts = DEFAULT_TARGET_TEXTS.values() if extra_texts is None else extra_texts
    extra = [t for text in texts for t in tokenize(text)]
    vocab = Vocab.build(corpus_tokens(samples) + extra)
    logger.info(f"Generated corpus: {len(train)} train / {len(test)} test, vocab size {len(vocab)}")
    return train, test, vocab


def save_corpus(samples: Sequence[Sample], directory, vocab: Optional[Vocab] = None) -> Path:
    """Write ``<id>.ppm`` images plus ``manifest.jsonl`` (and ``vocab.json``)."""
    root = Path(directory)
    try:
        root.mkdir(parents=True, exist_ok=True)
        with open(root / MANIFEST_NAME, "w", encoding="utf-8") as manifest:
            for sample in samples:
                image_name = f"{sample.id}.ppm"
                Image.fromarray(sample.image).save(root / image_name, format="PPM")
                manifest.write(json.dumps(sample.to_manifest(image_name)) + "\n")
        if vocab is not None:
            vocab.save(root / VOCAB_NAME)
    except OSError as e:
        raise CorpusIOError(str(root), f"cannot write corpus: {e}") from e

    logger.info(f"Saved {len(samples)} samples to {root}")
    return root


def _read_image(path: Path) -> np.ndarray:
    try:
        with Image.open(path) as img:
            if img.mode != "RGB":
                raise CorpusIOError(str(path), f"expected an RGB image, got mode {img.mode}")
            return np.array(img, dtype=np.uint8)
    except FileNotFoundError:
        raise CorpusIOError(str(path), "image file not found") from None
    except (OSError, UnidentifiedImageError, SyntaxError) as e:
        if isinstance(e, CorpusIOError):
            raise
        raise CorpusIOError(str(path), f"corrupt image: {e}") from None


_REQUIRED_FIELDS = ("id", "image_path", "prompt", "references")


def _is_token_list(value: Any) -> bool:
    return isinstance(value, list) and all(isinstance(token, str) for token in value)


def _parse_record(record: Any, path: Path, line_number: int, root: Path) -> Sample:
    if not isinstance(record, dict):
        raise CorpusFormatError(str(path), line_number, "expected a JSON object")
    missing = [name for name in _REQUIRED_FIELDS if name not in record]
    if missing:
        raise CorpusFormatError(str(path), line_number, f"missing field(s) {', '.join(missing)}")
    if not isinstance(record["image_path"], str):
        raise CorpusFormatError(str(path), line_number, "field 'image_path' must be a string")
    for name in ("prompt", "question", "answer", "annotations"):
        if record.get(name) is not None and not _is_token_list(record[name]):
            raise CorpusFormatError(str(path), line_number, f"field '{name}' must be a list of tokens")
    references = record["references"]
    if not isinstance(references, list) or not all(_is_token_list(r) for r in references):
        raise CorpusFormatError(str(path), line_number, "field 'references' must be a list of token lists")

    qa = None
    if record.get("question") is not None:
        qa = QaPair(
            question=list(record["question"]),
            answer=list(record.get("answer") or []),
            annotations=list(record.get("annotations") or []),
        )
    return Sample(
        id=record["id"],
        image=_read_image(root / record["image_path"]),
        prompt=list(record["prompt"]),
        references=[list(r) for r in record["references"]],
        qa=qa,
        poisoned=bool(record.get("poisoned", False)),
    )


def load_corpus(directory) -> List[Sample]:
    """Inverse of ``save_corpus``; unknown manifest fields are ignored."""
    root = Path(directory)
    path = root / MANIFEST_NAME
    if not path.is_file():
        raise CorpusIOError(str(path), "manifest not found")

    samples = []
    with open(path, "r", encoding="utf-8") as manifest:
        for line_number, line in enumerate(manifest, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as e:
                raise CorpusFormatError(str(path), line_number, f"invalid JSON ({e.msg})") from None
            samples.append(_parse_record(record, path, line_number, root))

    logger.info(f"Loaded {len(samples)} samples from {root}")
    return samples
