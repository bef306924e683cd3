"""
Transformer building blocks shared by the encoder, adaptor and decoder.
"""

from typing import Optional

import numpy as np

from tensor_core import FeedForward, LayerNorm, Linear, Module, Rng, Tensor, matmul, softmax, swap_last

MASKED = -1e9


class MultiHeadAttention(Module):
    """Scaled dot-product attention; ``context`` switches it to cross-attention."""

    def __init__(self, dim: int, heads: int, rng: Rng):
        super().__init__()
        if dim % heads:
            raise ValueError(f"width {dim} is not divisible by {heads} heads")
        self.heads = heads
        self.head_dim = dim // heads
        self.query = self.add_module("query", Linear(dim, dim, rng.split("query")))
        self.key = self.add_module("key", Linear(dim, dim, rng.split("key")))
        self.value = self.add_module("value", Linear(dim, dim, rng.split("value")))
        self.out = self.add_module("out", Linear(dim, dim, rng.split("out")))

    def _split_heads(self, x: Tensor) -> Tensor:
        batch, length, _ = x.shape
        return x.reshape(batch, length, self.heads, self.head_dim).transpose(0, 2, 1, 3)

    def forward(self, x: Tensor, context: Optional[Tensor] = None,
                mask: Optional[np.ndarray] = None) -> Tensor:
        """
        Args:
            x: (B, T, d) queries
            context: (B, S, d) keys/values, defaults to ``x``
            mask: additive (T, S) or (B, 1, T, S) array, MASKED where attention is forbidden
        """
        source = x if context is None else context
        batch, length, dim = x.shape

        q = self._split_heads(self.query(x))
        k = self._split_heads(self.key(source))
        v = self._split_heads(self.value(source))

        scores = matmul(q, swap_last(k)) * (1.0 / np.sqrt(self.head_dim))
        if mask is not None:
            scores = scores + mask.astype(scores.values.dtype)
        attended = matmul(softmax(scores), v)
        merged = attended.transpose(0, 2, 1, 3).reshape(batch, length, dim)
        return self.out(merged)


class TransformerBlock(Module):
    """Pre-LN self-attention block (encoder and decoder)."""

    def __init__(self, dim: int, heads: int, rng: Rng):
        super().__init__()
        self.norm1 = self.add_module("norm1", LayerNorm(dim))
        self.attn = self.add_module("attn", MultiHeadAttention(dim, heads, rng.split("attn")))
        self.norm2 = self.add_module("norm2", LayerNorm(dim))
        self.ffn = self.add_module("ffn", FeedForward(dim, rng.split("ffn")))

    def forward(self, x: Tensor, mask: Optional[np.ndarray] = None) -> Tensor:
        x = x + self.attn(self.norm1(x), mask=mask)
        return x + self.ffn(self.norm2(x))


class QueryBlock(Module):
    """Adaptor block: query self-attention, cross-attention to image tokens, then FFN."""

    def __init__(self, dim: int, heads: int, rng: Rng):
        super().__init__()
        self.norm1 = self.add_module("norm1", LayerNorm(dim))
        self.self_attn = self.add_module("self_attn", MultiHeadAttention(dim, heads, rng.split("self")))
        self.norm_cross = self.add_module("norm_cross", LayerNorm(dim))
        self.cross_attn = self.add_module("cross_attn", MultiHeadAttention(dim, heads, rng.split("cross")))
        self.norm2 = self.add_module("norm2", LayerNorm(dim))
        self.ffn = self.add_module("ffn", FeedForward(dim, rng.split("ffn")))

    def forward(self, queries: Tensor, image_tokens: Tensor) -> Tensor:
        queries = queries + self.self_attn(self.norm1(queries))
        queries = queries + self.cross_attn(self.norm_cross(queries), context=image_tokens)
        return queries + self.ffn(self.norm2(queries))
