# Tensor core module
from .engine import (
    Tensor,
    concat,
    cosine_similarity,
    cross_entropy,
    embedding,
    exp,
    gelu,
    gradient_check,
    layer_norm,
    log,
    log_softmax,
    matmul,
    no_grad,
    numerical_gradient,
    precision,
    relu,
    reshape,
    softmax,
    swap_last,
    take,
    transpose,
)
from .nn import Embedding, FeedForward, LayerNorm, Linear, Module, Parameter
from .optim import Adam
from .rng import Rng, gaussian

__all__ = [
    "Tensor", "concat", "cosine_similarity", "cross_entropy", "embedding", "exp", "gelu",
    "gradient_check", "layer_norm", "log", "log_softmax", "matmul", "no_grad",
    "numerical_gradient", "precision", "relu", "reshape", "softmax", "swap_last", "take",
    "transpose", "Embedding", "FeedForward", "LayerNorm", "Linear", "Module", "Parameter",
    "Adam", "Rng", "gaussian",
]
