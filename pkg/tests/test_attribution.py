"""
Tests for saliency maps, nullification and the probe file writers.
"""

import numpy as np
import pytest
from PIL import Image

from attribution.probes import (
    KEEP_CHOICES,
    SaliencyMap,
    first_target_position,
    keep_mask,
    nullify_and_measure,
    saliency_encoder,
    saliency_projection,
    write_grid_csv,
    write_pgm,
)
from metrics.evaluator import evaluate
from poison.crafter import PoisonConfig, stamp_test_split

PROMPT = [3, 4]


@pytest.fixture
def talking_model(tiny_model):
    """Model whose head always prefers token 7, so every generation has tokens to explain."""
    tiny_model.decoder.head.bias.values[7] = 50.0
    return tiny_model


class TestSaliency:
    def test_encoder_map(self, talking_model, tiny_corpus):
        image = tiny_corpus[1][0].image
        saliency = saliency_encoder(talking_model, image, PROMPT, 0)
        assert saliency.grid.shape == (8, 8)
        assert saliency.layer == "encoder_last" and saliency.target_token == 7
        assert saliency.grid.min() >= 0.0
        assert saliency.is_zero or saliency.grid.max() == pytest.approx(1.0)

    def test_projection_map(self, talking_model, tiny_corpus):
        saliency = saliency_projection(talking_model, tiny_corpus[1][0].image, PROMPT, 1)
        assert saliency.grid.shape == (4,)
        assert saliency.layer == "projection" and saliency.position == 1
        assert saliency.grid.max() == pytest.approx(1.0)

    def test_explicit_token(self, talking_model, gray_image):
        assert saliency_encoder(talking_model, gray_image, PROMPT, 0, token=5).target_token == 5

    def test_position_out_of_range(self, talking_model, gray_image):
        with pytest.raises(ValueError):
            saliency_encoder(talking_model, gray_image, PROMPT, 1000)

    def test_parameters_receive_no_gradient(self, talking_model, gray_image):
        talking_model.zero_grad()
        saliency_encoder(talking_model, gray_image, PROMPT, 0)
        assert all(p.requires_grad for p in talking_model.parameters())
        assert all(not np.any(p.grad) for p in talking_model.parameters())

    def test_invariant_to_constant_logit_shift(self, talking_model, tiny_corpus):
        image = tiny_corpus[1][1].image
        before = saliency_encoder(talking_model, image, PROMPT, 0).grid
        talking_model.decoder.head.bias.values += 5.0
        after = saliency_encoder(talking_model, image, PROMPT, 0).grid
        np.testing.assert_allclose(after, before, atol=1e-6)


class TestNullification:
    def test_keep_masks(self, tiny_model):
        assert keep_mask("all", [(0, 0)], 4, tiny_model) is None
        assert not keep_mask("none", [(0, 0), (28, 28)], 4, tiny_model).any()
        mask = keep_mask("trigger_patches", [(0, 0), (28, 28)], 4, tiny_model)
        assert mask.shape == (2, 64)
        assert np.flatnonzero(mask[0]).tolist() == [0]
        assert np.flatnonzero(mask[1]).tolist() == [63]

    def test_unknown_keep(self, tiny_model):
        with pytest.raises(ValueError):
            keep_mask("half", [(0, 0)], 4, tiny_model)
        assert "trigger_patches" in KEEP_CHOICES

    def test_keep_all_matches_evaluation(self, tiny_model, tiny_corpus):
        _, test, vocab = tiny_corpus
        poison = PoisonConfig()
        _, poisoned = evaluate(tiny_model, test, vocab, poison=poison)
        triggered, anchors = stamp_test_split(test, poison)
        result = nullify_and_measure(tiny_model, triggered, anchors, vocab, poison.target, "all", 4)
        assert result.asr == poisoned.asr
        assert len(result.outputs) == len(test)

    def test_keep_none_erases_the_image(self, talking_model, tiny_corpus):
        _, test, vocab = tiny_corpus
        talking_model.decoder.head.bias.values[7] = 0.0
        poison = PoisonConfig()
        triggered, anchors = stamp_test_split(test, poison)
        result = nullify_and_measure(talking_model, triggered, anchors, vocab, poison.target, "none", 4)
        assert all(o == result.outputs[0] for o in result.outputs)


class TestProbeFiles:
    def test_first_target_position(self):
        assert first_target_position([5, 6, 7, 8], [7, 8]) == 2
        assert first_target_position([5, 6, 7], [7, 8]) is None

    def test_pgm(self, tmp_path):
        grid = np.zeros((8, 8))
        grid[0, 0] = 1.0
        path = write_pgm(tmp_path / "map.pgm", SaliencyMap(grid, 7, 0, "encoder_last"), scale=4)
        assert path.read_bytes().startswith(b"P5")
        with Image.open(path) as image:
            assert image.mode == "L" and image.size == (32, 32)
            pixels = np.asarray(image)
        assert (pixels[:4, :4] == 255).all()
        assert not pixels[4:, :].any()

    def test_grid_csv(self, tmp_path):
        grid = np.linspace(0, 1, 64).reshape(8, 8)
        path = write_grid_csv(tmp_path / "map.csv", SaliencyMap(grid, 7, 0, "encoder_last"))
        rows = path.read_text().splitlines()
        assert len(rows) == 8 and rows[0].split(",")[0] == "0.000000"
        assert rows[-1].split(",")[-1] == "1.000000"
