"""
Tests for tensor_core: ops, gradient checks, Adam and the seeded streams.
"""

import math

import numpy as np
import pytest

from errors import DimensionError
from tensor_core import (
    Adam,
    FeedForward,
    Linear,
    Parameter,
    Rng,
    Tensor,
    concat,
    cosine_similarity,
    cross_entropy,
    embedding,
    gaussian,
    gelu,
    gradient_check,
    layer_norm,
    log_softmax,
    matmul,
    no_grad,
    precision,
    softmax,
    take,
)

GRAD_TOLERANCE = 1e-3


def leaf(rng: Rng, *shape) -> Tensor:
    return Tensor(rng.normal(shape), requires_grad=True)


class TestMatmul:
    def test_identity(self):
        out = matmul(Tensor(np.eye(2)), Tensor([[1.0, 2.0], [3.0, 4.0]]))
        np.testing.assert_array_equal(out.values, [[1, 2], [3, 4]])

    def test_hand_product(self):
        out = matmul(Tensor([[1.0, 2.0]]), Tensor([[3.0], [4.0]]))
        assert out.values.tolist() == [[11.0]]

    def test_shape_mismatch_names_both_shapes(self):
        with pytest.raises(DimensionError, match=r"\(2, 3\).*\(2, 3\)"):
            matmul(Tensor(np.zeros((2, 3))), Tensor(np.zeros((2, 3))))

    def test_gradient(self):
        with precision(np.float64):
            rng = Rng(1)
            a, b = leaf(rng, 3, 4), leaf(rng, 4, 2)
            assert gradient_check(lambda: matmul(a, b).sum(), [a, b]) <= GRAD_TOLERANCE

    def test_batched_gradient_broadcasts(self):
        with precision(np.float64):
            rng = Rng(2)
            a, b = leaf(rng, 2, 3, 4), leaf(rng, 4, 5)
            w = Tensor(rng.normal((2, 3, 5)))
            assert gradient_check(lambda: (matmul(a, b) * w).sum(), [a, b]) <= GRAD_TOLERANCE


class TestSoftmax:
    def test_uniform(self):
        np.testing.assert_allclose(softmax(Tensor([0.0, 0.0, 0.0])).values, [1 / 3] * 3, rtol=1e-6)

    def test_no_overflow(self):
        out = softmax(Tensor([1000.0, 0.0])).values
        assert np.all(np.isfinite(out))
        assert out[0] == pytest.approx(1.0)
        assert out[1] == pytest.approx(0.0, abs=1e-12)

    def test_rows_sum_to_one(self):
        out = softmax(Tensor(Rng(3).normal((4, 7), std=5.0))).values
        assert np.all(out >= 0)
        np.testing.assert_allclose(out.sum(axis=-1), 1.0, atol=1e-5)

    def test_gradient(self):
        with precision(np.float64):
            rng = Rng(4)
            x = leaf(rng, 3, 5)
            w = Tensor(rng.normal((3, 5)))
            assert gradient_check(lambda: (softmax(x) * w).sum(), [x]) <= GRAD_TOLERANCE

    def test_log_softmax_gradient(self):
        with precision(np.float64):
            rng = Rng(5)
            x = leaf(rng, 2, 6)
            w = Tensor(rng.normal((2, 6)))
            assert gradient_check(lambda: (log_softmax(x) * w).sum(), [x]) <= GRAD_TOLERANCE


class TestCrossEntropy:
    def test_uniform_logits(self):
        loss = cross_entropy(Tensor(np.zeros((4, 8))), [0, 3, 5, 7])
        assert loss.item() == pytest.approx(math.log(8), abs=1e-6)

    def test_all_ignored(self):
        with pytest.raises(ValueError, match="no contributing positions"):
            cross_entropy(Tensor(np.zeros((2, 4))), [2, 2], ignore_index=2)

    def test_out_of_range_target(self):
        with pytest.raises(IndexError):
            cross_entropy(Tensor(np.zeros((2, 4))), [0, 4])

    def test_matches_log_sum_exp(self):
        with precision(np.float64):
            logits = Rng(6).normal((3, 5))
            targets = [4, 0, 2]
            loss = cross_entropy(Tensor(logits), targets).item()
        expected = np.mean([
            math.log(sum(math.exp(v) for v in row)) - row[t] for row, t in zip(logits, targets)
        ])
        assert loss == pytest.approx(expected, abs=1e-6)

    def test_ignored_positions_contribute_nothing(self):
        logits = Rng(7).normal((3, 5))
        full = cross_entropy(Tensor(logits[:2]), [1, 3]).item()
        padded = cross_entropy(Tensor(logits), [1, 3, 2], ignore_index=2).item()
        assert padded == pytest.approx(full, rel=1e-6)

    def test_gradient_with_padding(self):
        with precision(np.float64):
            x = leaf(Rng(8), 2, 3, 5)
            targets = np.array([[1, 4, 2], [0, 2, 2]])
            assert gradient_check(lambda: cross_entropy(x, targets, ignore_index=2), [x]) <= GRAD_TOLERANCE

    def test_none_reduction_gradient(self):
        with precision(np.float64):
            rng = Rng(9)
            x = leaf(rng, 4, 6)
            w = Tensor(rng.normal((4,)))
            fn = lambda: (cross_entropy(x, [0, 5, 1, 3], reduction="none") * w).sum()
            assert gradient_check(fn, [x]) <= GRAD_TOLERANCE


class TestCosineSimilarity:
    def test_self_similarity(self):
        v = Tensor([0.3, -1.2, 2.5])
        assert cosine_similarity(v, v).item() == pytest.approx(1.0, abs=1e-6)

    def test_orthogonal(self):
        assert cosine_similarity(Tensor([1.0, 0.0]), Tensor([0.0, 1.0])).item() == pytest.approx(0.0, abs=1e-7)

    def test_oracle(self):
        value = cosine_similarity(Tensor([1.0, 2.0, 3.0]), Tensor([4.0, 5.0, 6.0])).item()
        assert value == pytest.approx(0.974631, abs=1e-6)

    def test_zero_vector(self):
        assert cosine_similarity(Tensor([0.0, 0.0]), Tensor([1.0, 2.0])).item() == pytest.approx(0.0)

    def test_gradient(self):
        with precision(np.float64):
            rng = Rng(10)
            u, v = leaf(rng, 3, 4), leaf(rng, 3, 4)
            assert gradient_check(lambda: cosine_similarity(u, v).sum(), [u, v]) <= GRAD_TOLERANCE


class TestLayerNorm:
    def test_constant_row_is_zero(self):
        out = layer_norm(Tensor(np.full((1, 6), 3.0)), Tensor(np.ones(6)), Tensor(np.zeros(6)))
        np.testing.assert_allclose(out.values, 0.0, atol=1e-6)

    def test_normalizes(self):
        out = layer_norm(Tensor(Rng(11).normal((3, 32), std=4.0)), Tensor(np.ones(32)), Tensor(np.zeros(32))).values
        np.testing.assert_allclose(out.mean(axis=-1), 0.0, atol=1e-5)
        np.testing.assert_allclose(out.var(axis=-1), 1.0, atol=1e-3)

    def test_gradient(self):
        with precision(np.float64):
            rng = Rng(12)
            x, gamma, beta = leaf(rng, 3, 5), leaf(rng, 5), leaf(rng, 5)
            w = Tensor(rng.normal((3, 5)))
            fn = lambda: (layer_norm(x, gamma, beta) * w).sum()
            assert gradient_check(fn, [x, gamma, beta]) <= GRAD_TOLERANCE


class TestIndexingAndShape:
    def test_embedding_accumulates_repeated_rows(self):
        table = Tensor(Rng(13).normal((5, 3)), requires_grad=True)
        embedding(table, [3, 3, 1]).sum().backward()
        np.testing.assert_array_equal(table.grad[3], [2, 2, 2])
        np.testing.assert_array_equal(table.grad[1], [1, 1, 1])
        np.testing.assert_array_equal(table.grad[0], [0, 0, 0])

    def test_embedding_out_of_vocab(self):
        with pytest.raises(IndexError):
            embedding(Tensor(np.zeros((4, 2))), [1, 4])

    def test_take_and_concat_gradients(self):
        with precision(np.float64):
            rng = Rng(14)
            a, b = leaf(rng, 2, 3), leaf(rng, 1, 3)
            w = Tensor(rng.normal((4, 3)))
            fn = lambda: (take(concat([a, b], axis=0), np.array([0, 2, 2, 1])) * w).sum()
            assert gradient_check(fn, [a, b]) <= GRAD_TOLERANCE

    def test_gelu_gradient(self):
        with precision(np.float64):
            x = leaf(Rng(15), 4, 3)
            assert gradient_check(lambda: gelu(x).sum(), [x]) <= GRAD_TOLERANCE

    def test_fresh_grad_is_zero(self):
        t = Tensor(np.ones((2, 3)), requires_grad=True)
        assert t.grad.shape == (2, 3)
        assert not t.grad.any()
        (t * 2.0).sum().backward()
        t.zero_grad()
        assert not t.grad.any()

    def test_no_grad_records_nothing(self):
        t = Tensor(np.ones(3), requires_grad=True)
        with no_grad():
            out = (t * 3.0).sum()
        assert not out.requires_grad


class TestModule:
    def test_dotted_parameter_names(self):
        names = [name for name, _ in FeedForward(4, Rng(0)).named_parameters()]
        assert names == ["up.weight", "up.bias", "down.weight", "down.bias"]

    def test_set_trainable(self):
        layer = Linear(3, 2, Rng(0))
        layer.set_trainable(False)
        assert not any(p.requires_grad for p in layer.parameters())


class TestAdam:
    def test_one_step_hand_calculation(self):
        p = Parameter(np.array([1.0]))
        p.grad = np.array([1.0])
        Adam([p], lr=0.1).step()
        assert p.values[0] == pytest.approx(0.9, abs=1e-6)

    def test_frozen_tensor_unchanged(self):
        frozen = Tensor(np.array([2.0, -1.0]), requires_grad=False)
        frozen.grad = np.array([5.0, 5.0])
        before = frozen.values.copy()
        Adam([frozen], lr=0.1).step()
        np.testing.assert_array_equal(frozen.values, before)

    def test_zero_grad_leaves_params(self):
        layer = Linear(3, 2, Rng(1))
        before = [p.values.copy() for p in layer.parameters()]
        optimizer = Adam(layer.parameters(), lr=0.5)
        optimizer.zero_grad()
        optimizer.step()
        for p, b in zip(layer.parameters(), before):
            np.testing.assert_array_equal(p.values, b)

    def test_training_cycle_is_bit_identical(self):
        def cycle():
            layer = Linear(4, 3, Rng(21))
            x = Tensor(Rng(22).normal((5, 4)))
            optimizer = Adam(layer.parameters(), lr=0.01)
            for _ in range(3):
                optimizer.zero_grad()
                cross_entropy(layer(x), [0, 1, 2, 1, 0]).backward()
                optimizer.step()
            return [p.values.copy() for p in layer.parameters()]

        for a, b in zip(cycle(), cycle()):
            np.testing.assert_array_equal(a, b)


class TestRng:
    def test_same_seed_same_draws(self):
        a, b = Rng(42), Rng(42)
        np.testing.assert_array_equal(a.uniform(5), b.uniform(5))
        np.testing.assert_array_equal(a.normal((3,)), b.normal((3,)))

    def test_splits_are_independent(self):
        root = Rng(42)
        assert not np.array_equal(root.split("a").uniform(4), root.split("b").uniform(4))
        np.testing.assert_array_equal(root.split("a").uniform(4), Rng(42).split("a").uniform(4))

    def test_rejects_negative_seed(self):
        with pytest.raises(ValueError):
            Rng(-1)

    def test_gaussian_degenerate(self):
        np.testing.assert_array_equal(gaussian(Rng(0), 128.0, 0.0, 4), [128, 128, 128, 128])

    def test_gaussian_deterministic(self):
        np.testing.assert_array_equal(gaussian(Rng(9), 0.0, 3.0, 50), gaussian(Rng(9), 0.0, 3.0, 50))

    def test_gaussian_moment(self):
        draws = gaussian(Rng(1), 0.0, 10.0, 10000)
        assert 9.5 <= draws.std() <= 10.5
