"""
TinyVlm: frozen vision encoder -> trainable query adaptor -> frozen decoder LM.

Decoder layout for one sample is ``[projection tokens; prompt; bos + output[:-1]]``.
Projection tokens see each other bidirectionally, text positions see the whole
prefix and every earlier text position.
"""

import logging
from typing import List, Literal, Optional, Sequence

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from dataset.corpus import BOS_ID, EOS_ID, PAD_ID
from errors import DimensionError, SequenceLengthError
from tensor_core import (
    Embedding,
    LayerNorm,
    Linear,
    Module,
    Rng,
    Tensor,
    concat,
    embedding,
    matmul,
    no_grad,
    softmax,
    take,
)

from .layers import MASKED, QueryBlock, TransformerBlock

logger = logging.getLogger(__name__)

Phase = Literal["pretrain", "backdoor"]
ADAPTOR_PREFIX = "adaptor."


class ModelConfig(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    image_size: int = Field(32, ge=1)
    patch: int = Field(4, ge=1)
    d_model: int = Field(64, ge=1)
    enc_layers: int = Field(2, ge=0)
    enc_heads: int = Field(4, ge=1)
    n_queries: int = Field(8, ge=1)
    adaptor_layers: int = Field(2, ge=1)
    adaptor_heads: int = Field(4, ge=1)
    dec_layers: int = Field(2, ge=1)
    dec_heads: int = Field(4, ge=1)
    vocab_size: int = Field(128, ge=4, le=128)
    max_seq: int = Field(32, ge=2)

    @model_validator(mode="after")
    def _check_divisibility(self):
        if self.image_size % self.patch:
            raise ValueError(f"image_size {self.image_size} is not divisible by patch {self.patch}")
        for name in ("enc_heads", "adaptor_heads", "dec_heads"):
            if self.d_model % getattr(self, name):
                raise ValueError(f"d_model {self.d_model} is not divisible by {name}={getattr(self, name)}")
        return self

    @property
    def grid(self) -> int:
        return self.image_size // self.patch

    @property
    def n_image_tokens(self) -> int:
        return self.grid * self.grid


class VisionEncoder(Module):
    def __init__(self, config: ModelConfig, rng: Rng):
        super().__init__()
        self.config = config
        patch_width = config.patch * config.patch * 3
        self.patch_embed = self.add_module("patch_embed", Linear(patch_width, config.d_model, rng.split("patch")))
        self.pos = self.add_parameter("pos", rng.split("pos").normal((config.n_image_tokens, config.d_model), 0.02))
        self.blocks = [
            self.add_module(f"block{i}", TransformerBlock(config.d_model, config.enc_heads, rng.split(f"block{i}")))
            for i in range(config.enc_layers)
        ]
        self.norm = self.add_module("norm", LayerNorm(config.d_model))

    def patchify(self, images: np.ndarray) -> np.ndarray:
        """(B, H, W, 3) uint8 -> (B, T, p*p*3) pixels scaled to [-1, 1]."""
        c = self.config
        batch = images.shape[0]
        x = images.astype(np.float64) / 127.5 - 1.0
        x = x.reshape(batch, c.grid, c.patch, c.grid, c.patch, 3).transpose(0, 1, 3, 2, 4, 5)
        return x.reshape(batch, c.n_image_tokens, c.patch * c.patch * 3)

    def forward(self, images: np.ndarray) -> Tensor:
        x = self.patch_embed(Tensor(self.patchify(images))) + self.pos
        for block in self.blocks:
            x = block(x)
        return self.norm(x)


class QueryAdaptor(Module):
    def __init__(self, config: ModelConfig, rng: Rng):
        super().__init__()
        self.queries = self.add_parameter("queries", rng.split("queries").normal((config.n_queries, config.d_model), 0.02))
        self.blocks = [
            self.add_module(f"block{i}", QueryBlock(config.d_model, config.adaptor_heads, rng.split(f"block{i}")))
            for i in range(config.adaptor_layers)
        ]
        self.norm = self.add_module("norm", LayerNorm(config.d_model))
        self.proj = self.add_module("proj", Linear(config.d_model, config.d_model, rng.split("proj")))

    def forward(self, image_tokens: Tensor) -> Tensor:
        batch = image_tokens.shape[0]
        queries = self.queries + np.zeros((batch, 1, 1))
        for block in self.blocks:
            queries = block(queries, image_tokens)
        return self.proj(self.norm(queries))


class TextDecoder(Module):
    def __init__(self, config: ModelConfig, rng: Rng):
        super().__init__()
        self.pos = self.add_parameter(
            "pos", rng.split("pos").normal((config.n_queries + config.max_seq, config.d_model), 0.02)
        )
        self.blocks = [
            self.add_module(f"block{i}", TransformerBlock(config.d_model, config.dec_heads, rng.split(f"block{i}")))
            for i in range(config.dec_layers)
        ]
        self.norm = self.add_module("norm", LayerNorm(config.d_model))
        self.head = self.add_module("head", Linear(config.d_model, config.vocab_size, rng.split("head")))

    def forward(self, x: Tensor, mask: np.ndarray) -> Tensor:
        x = x + self.pos[: x.shape[1]]
        for block in self.blocks:
            x = block(x, mask=mask)
        return x


def prefix_lm_mask(n_prefix: int, length: int) -> np.ndarray:
    """Additive mask: position i may attend to j when j < n_prefix or j <= i."""
    i = np.arange(length)[:, None]
    j = np.arange(length)[None, :]
    allowed = (j < n_prefix) | (j <= i)
    return np.where(allowed, 0.0, MASKED)


class TinyVlm(Module):
    """Vision encoder, query adaptor, decoder LM and token embedding table."""

    def __init__(self, config: ModelConfig, rng: Optional[Rng] = None):
        super().__init__()
        self.config = config
        rng = Rng(0) if rng is None else rng
        self.encoder = self.add_module("encoder", VisionEncoder(config, rng.split("encoder")))
        self.adaptor = self.add_module("adaptor", QueryAdaptor(config, rng.split("adaptor")))
        self.decoder = self.add_module("decoder", TextDecoder(config, rng.split("decoder")))
        self.embedding = self.add_module("embedding", Embedding(config.vocab_size, config.d_model, rng.split("embedding")))
        self.phase: Phase = "pretrain"

    @property
    def embedding_table(self) -> Tensor:
        return self.embedding.table

    # vision side

    def encode_images(self, images: np.ndarray) -> Tensor:
        """(B, H, W, 3) uint8 -> (B, T, d) encoder last-layer tokens."""
        images = np.asarray(images)
        size = self.config.image_size
        if images.ndim != 4 or images.shape[1:] != (size, size, 3):
            raise DimensionError(f"expected images of shape (B, {size}, {size}, 3), got {images.shape}")
        return self.encoder(images)

    def encode_image(self, image: np.ndarray) -> Tensor:
        return self.encode_images(np.asarray(image)[None])[0]

    def adapt(self, image_tokens: Tensor, keep: Optional[np.ndarray] = None) -> Tensor:
        """
        Map image tokens to projection tokens.

        Args:
            image_tokens: (B, T, d) or (T, d) encoder output
            keep: optional (B, T) boolean mask; tokens outside it are zeroed first
        """
        squeeze = len(image_tokens.shape) == 2
        if squeeze:
            image_tokens = image_tokens.reshape(1, *image_tokens.shape)
        if keep is not None:
            image_tokens = image_tokens * np.asarray(keep, dtype=np.float64)[..., None]
        projection = self.adaptor(image_tokens)
        return projection[0] if squeeze else projection

    # text side

    def _check_lengths(self, prompts: Sequence[Sequence[int]], outputs: Sequence[Sequence[int]]) -> None:
        for prompt, output in zip(prompts, outputs):
            if len(prompt) + len(output) > self.config.max_seq:
                raise SequenceLengthError(
                    f"prompt ({len(prompt)}) + output ({len(output)}) exceeds max_seq={self.config.max_seq}"
                )

    def decode_logits(
        self,
        projection: Tensor,
        prompts: Sequence[Sequence[int]],
        inputs: Sequence[Sequence[int]],
    ) -> Tensor:
        """
        Next-token logits for every position of ``inputs``.

        Args:
            projection: (B, Q, d) projection tokens
            prompts: per-sample prompt ids
            inputs: per-sample decoder inputs (bos followed by the output prefix)

        Returns:
            (B, max_len(inputs), V) logits; rows past a sample's input length are padding
        """
        q = self.config.n_queries
        batch = len(prompts)
        lengths = [len(p) + len(x) for p, x in zip(prompts, inputs)]
        text_length = max(lengths)
        ids = np.full((batch, text_length), PAD_ID, dtype=np.int64)
        for b, (prompt, x) in enumerate(zip(prompts, inputs)):
            ids[b, : lengths[b]] = list(prompt) + list(x)

        sequence = concat([projection, embedding(self.embedding_table, ids)], axis=1)
        hidden = self.decoder(sequence, prefix_lm_mask(q, q + text_length))

        n_max = max(len(x) for x in inputs)
        rows = np.repeat(np.arange(batch), n_max).reshape(batch, n_max)
        cols = np.zeros((batch, n_max), dtype=np.int64)
        for b, (prompt, x) in enumerate(zip(prompts, inputs)):
            cols[b, : len(x)] = q + len(prompt) + np.arange(len(x))
        picked = take(hidden, (rows, cols))
        return self.decoder.head(self.decoder.norm(picked))

    def forward(
        self,
        images: np.ndarray,
        prompts: Sequence[Sequence[int]],
        outputs: Sequence[Sequence[int]],
        keep: Optional[np.ndarray] = None,
    ) -> Tensor:
        """Teacher-forced logits (B, N_max, V); ``outputs`` end with eos."""
        self._check_lengths(prompts, outputs)
        projection = self.adapt(self.encode_images(images), keep)
        inputs = [[BOS_ID] + list(o[:-1]) for o in outputs]
        return self.decode_logits(projection, prompts, inputs)

    # generation

    def generate_batch(
        self,
        images: np.ndarray,
        prompts: Sequence[Sequence[int]],
        keep: Optional[np.ndarray] = None,
    ) -> List[List[int]]:
        """Greedy decoding until eos or max_seq; ties go to the lowest id. Eos is not returned."""
        for prompt in prompts:
            if len(prompt) + 1 > self.config.max_seq:
                raise SequenceLengthError(f"prompt of {len(prompt)} tokens leaves no room in max_seq={self.config.max_seq}")

        with no_grad():
            projection = self.adapt(self.encode_images(images), keep)
            generated: List[List[int]] = [[] for _ in prompts]
            done = [False] * len(prompts)
            while not all(done):
                active = [b for b in range(len(prompts)) if not done[b]]
                logits = self.decode_logits(
                    take(projection, np.array(active)),
                    [prompts[b] for b in active],
                    [[BOS_ID] + generated[b] for b in active],
                ).values
                for row, b in enumerate(active):
                    token = int(np.argmax(logits[row, len(generated[b])]))
                    if token == EOS_ID:
                        done[b] = True
                        continue
                    generated[b].append(token)
                    if len(prompts[b]) + len(generated[b]) + 1 > self.config.max_seq:
                        done[b] = True
        return generated

    def generate(self, image: np.ndarray, prompt: Sequence[int], keep: Optional[np.ndarray] = None) -> List[int]:
        keep = None if keep is None else np.asarray(keep)[None]
        return self.generate_batch(np.asarray(image)[None], [prompt], keep)[0]

    # embedding-space helpers

    def expected_embedding(self, logits: Tensor) -> Tensor:
        """softmax(logits) @ embedding table, the probability mixture of token embeddings."""
        return expected_embedding(logits, self.embedding_table)

    def embed_ground_truth(self, ids) -> Tensor:
        return embed_ground_truth(ids, self.embedding_table)

    # trainability

    def set_phase(self, phase: Phase) -> None:
        """pretrain: everything trainable; backdoor: only the adaptor."""
        if phase not in ("pretrain", "backdoor"):
            raise ValueError(f"unknown phase '{phase}'")
        for name, p in self.named_parameters():
            p.requires_grad = phase == "pretrain" or name.startswith(ADAPTOR_PREFIX)
        self.phase = phase
        trainable = sum(p.size for p in self.parameters() if p.requires_grad)
        logger.debug(f"Phase set to {phase}: {trainable} trainable scalars")

    def adaptor_parameters(self):
        return [p for name, p in self.named_parameters() if name.startswith(ADAPTOR_PREFIX)]


def expected_embedding(logits: Tensor, table: Tensor) -> Tensor:
    probs = softmax(logits)
    if len(logits.shape) == 1:
        return matmul(probs.reshape(1, -1), table).reshape(table.shape[1])
    return matmul(probs, table)


def embed_ground_truth(ids, table: Tensor) -> Tensor:
    return embedding(table, ids)
