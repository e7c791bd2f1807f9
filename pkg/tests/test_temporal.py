"""Position encoding, attention, and transformer block contracts."""

import numpy as np
import pytest

from radnet import tensor as T
from radnet.errors import DimensionError
from radnet.temporal import (
    EncoderBlock,
    MultiHeadAttention,
    TransformerBlock,
    causal_mask,
    position_encode,
    position_encoding_table,
    transformer_forward,
)
from radnet.tensor import DiffArray


class TestPositionEncoding:
    def test_position_zero_even_channel_unchanged(self):
        x = np.zeros((4, 2))
        out = position_encode(x).values
        assert out[0, 0] == 0.0  # + sin(0)

    def test_matches_direct_sinusoid(self):
        table = position_encoding_table(5, 2)
        for p in range(5):
            assert table[p, 0] == pytest.approx(np.sin(p))
            assert table[p, 1] == pytest.approx(np.cos(p))

    def test_odd_width(self):
        table = position_encoding_table(3, 3)
        denom = 10000.0 ** (2 / 3)
        assert table[2, 2] == pytest.approx(np.sin(2 / denom))
        assert table[2, 1] == pytest.approx(np.cos(2))

    def test_eval_mode_deterministic(self):
        x = np.random.default_rng(0).normal(size=(6, 4))
        a = position_encode(x).values
        b = position_encode(x).values
        np.testing.assert_array_equal(a, b)

    def test_training_dropout_changes_values(self):
        x = np.ones((50, 4))
        rng = np.random.default_rng(1)
        out = position_encode(x, rate=0.5, training=True, rng=rng).values
        assert (out == 0).any()


class TestMultiHeadAttention:
    def test_single_position_weight_one(self):
        rng = np.random.default_rng(2)
        mha = MultiHeadAttention(3, 1, rng)
        x = DiffArray(rng.normal(size=(1, 3)))
        w = mha.attention_weights(x, x).values
        np.testing.assert_allclose(w, [[1.0]])
        out = mha(x, x, x).values
        expected = (x.values @ mha.w_value[0].values) @ mha.w_out.values
        np.testing.assert_allclose(out, expected, rtol=1e-12)

    def test_identical_rows_give_uniform_weights(self):
        rng = np.random.default_rng(3)
        mha = MultiHeadAttention(4, 2, rng)
        x = np.tile(np.array([[0.3, -1.0, 0.5, 2.0]]), (5, 1))
        for head in range(2):
            w = mha.attention_weights(DiffArray(x), DiffArray(x), head=head).values
            np.testing.assert_allclose(w, np.full((5, 5), 0.2), atol=1e-12)

    def test_two_position_hand_evaluation(self):
        mha = MultiHeadAttention(1, 1, np.random.default_rng(4))
        mha.w_query[0].values[...] = [[0.7]]
        mha.w_key[0].values[...] = [[-0.4]]
        mha.w_value[0].values[...] = [[1.3]]
        mha.w_out.values[...] = [[0.9]]
        x = np.array([[1.0], [2.0]])
        q, k, v = 0.7 * x, -0.4 * x, 1.3 * x
        scores = q @ k.T / np.sqrt(1.0)
        ex = np.exp(scores - scores.max(axis=1, keepdims=True))
        weights = ex / ex.sum(axis=1, keepdims=True)
        expected = (weights @ v) * 0.9
        np.testing.assert_allclose(mha(x, x, x).values, expected, rtol=1e-12)

    def test_rows_sum_to_one(self):
        rng = np.random.default_rng(5)
        mha = MultiHeadAttention(4, 2, rng)
        x = rng.normal(size=(7, 4))
        w = mha.attention_weights(x, x).values
        np.testing.assert_allclose(w.sum(axis=-1), np.ones(7), atol=1e-9)

    def test_masked_future_weights_exactly_zero(self):
        rng = np.random.default_rng(6)
        mha = MultiHeadAttention(2, 1, rng)
        x = rng.normal(size=(5, 2))
        w = mha.attention_weights(x, x, mask=causal_mask(5)).values
        upper = np.triu_indices(5, k=1)
        assert (w[upper] == 0.0).all()
        np.testing.assert_allclose(w.sum(axis=-1), np.ones(5), atol=1e-9)

    def test_causal_mask_blocks_future_influence(self):
        # Changing a future position must not change earlier query outputs.
        rng = np.random.default_rng(7)
        mha = MultiHeadAttention(2, 1, rng)
        x = rng.normal(size=(3, 2))
        base = mha(x, x, x, mask=causal_mask(3)).values
        zeroed = x.copy()
        zeroed[2] = 0.0
        out = mha(zeroed, zeroed, zeroed, mask=causal_mask(3)).values
        np.testing.assert_array_equal(out[:2], base[:2])

    def test_mask_shape_mismatch(self):
        mha = MultiHeadAttention(2, 1, np.random.default_rng(8))
        x = DiffArray(np.zeros((4, 2)))
        with pytest.raises(DimensionError):
            mha(x, x, x, mask=causal_mask(3))

    def test_head_divisibility(self):
        with pytest.raises(DimensionError):
            MultiHeadAttention(3, 2, np.random.default_rng(9))


class TestEncoderBlock:
    @pytest.mark.parametrize("k", [1, 5, 12])
    def test_shape_preserved(self, k):
        rng = np.random.default_rng(10)
        block = EncoderBlock(4, 2, rng)
        out = block(rng.normal(size=(k, 4)))
        assert out.shape == (k, 4)

    def test_batched_shape_preserved(self):
        rng = np.random.default_rng(11)
        block = EncoderBlock(3, 1, rng)
        out = block(rng.normal(size=(6, 2, 5, 3)))
        assert out.shape == (6, 2, 5, 3)

    def test_gradient_through_full_block(self):
        rng = np.random.default_rng(12)
        block = EncoderBlock(2, 1, rng, hidden=4)
        x = DiffArray(rng.normal(size=(3, 2)), requires_grad=True)
        w = rng.normal(size=(3, 2))

        def f():
            return (block(x) * w).sum()

        err = T.grad_check(f, [x, *block.named_parameters().values()])
        assert err < 1e-4


class TestTransformerBlock:
    def test_single_timestep_window(self):
        rng = np.random.default_rng(13)
        block = TransformerBlock(3, 1, rng)
        out = transformer_forward(block, rng.normal(size=(1, 4, 3)))
        assert out.shape == (4, 3)

    def test_eval_mode_bit_identical(self):
        rng = np.random.default_rng(14)
        block = TransformerBlock(2, 1, rng)
        w = rng.normal(size=(5, 3, 2))
        a = transformer_forward(block, w).values
        b = transformer_forward(block, w).values
        np.testing.assert_array_equal(a, b)

    @pytest.mark.parametrize("k", [1, 2, 5, 12])
    def test_output_shape_across_window_lengths(self, k):
        rng = np.random.default_rng(15)
        block = TransformerBlock(2, 1, rng)
        out = transformer_forward(block, rng.normal(size=(k, 3, 2)))
        assert out.shape == (3, 2)

    def test_flattened_mode_shape(self):
        rng = np.random.default_rng(16)
        block = TransformerBlock(6, 1, rng)
        out = transformer_forward(block, rng.normal(size=(4, 3, 2)), mode="flattened")
        assert out.shape == (3, 2)

    def test_last_replicated_decoder_source(self):
        rng = np.random.default_rng(17)
        block = TransformerBlock(2, 1, rng, decoder_source="last")
        out = transformer_forward(block, rng.normal(size=(4, 3, 2)))
        assert out.shape == (3, 2)

    def test_batched_matches_loop(self):
        rng = np.random.default_rng(18)
        block = TransformerBlock(2, 2, rng)
        batch = rng.normal(size=(3, 4, 2, 2))
        stacked = transformer_forward(block, batch).values
        for b in range(3):
            single = transformer_forward(block, batch[b]).values
            np.testing.assert_allclose(stacked[b], single, atol=1e-12)

    def test_gradient_through_block(self):
        rng = np.random.default_rng(19)
        block = TransformerBlock(2, 1, rng, hidden=3)
        x = DiffArray(rng.normal(size=(3, 2, 2)), requires_grad=True)
        w = rng.normal(size=(2, 2))

        def f():
            return (transformer_forward(block, x) * w).sum()

        err = T.grad_check(f, [x, *block.named_parameters().values()])
        assert err < 1e-4
