"""
Shared fixtures: a tiny corpus and a model small enough for per-test training steps.
"""

import numpy as np
import pytest

from dataset.corpus import generate_corpus
from model.vlm import ModelConfig, TinyVlm
from tensor_core import Rng


@pytest.fixture(scope="session")
def tiny_corpus():
    """(train, test, vocab) with 12 train and 6 test scenes."""
    return generate_corpus(12, 6, seed=7)


@pytest.fixture
def tiny_config(tiny_corpus):
    _, _, vocab = tiny_corpus
    return ModelConfig(
        d_model=16,
        enc_layers=1,
        enc_heads=2,
        n_queries=4,
        adaptor_layers=1,
        adaptor_heads=2,
        dec_layers=1,
        dec_heads=2,
        vocab_size=len(vocab),
    )


@pytest.fixture
def tiny_model(tiny_config):
    return TinyVlm(tiny_config, Rng(3))


@pytest.fixture
def gray_image():
    return np.full((32, 32, 3), 200, dtype=np.uint8)
