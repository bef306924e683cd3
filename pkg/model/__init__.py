# Model module
from .checkpoint import load_checkpoint, save_checkpoint
from .layers import MultiHeadAttention, QueryBlock, TransformerBlock
from .vlm import ModelConfig, TinyVlm, embed_ground_truth, expected_embedding, prefix_lm_mask

__all__ = [
    "load_checkpoint", "save_checkpoint", "MultiHeadAttention", "QueryBlock", "TransformerBlock",
    "ModelConfig", "TinyVlm", "embed_ground_truth", "expected_embedding", "prefix_lm_mask",
]
