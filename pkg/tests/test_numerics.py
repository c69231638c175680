import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from tempotrack.errors import DimensionError, NumericError
from tempotrack.numerics import (
    AttentionConfig,
    AttentionParams,
    FFNParams,
    add,
    concat,
    conv1d_over_queue,
    conv2d,
    depthwise_xcorr,
    feed_forward,
    global_avg_pool,
    layer_norm,
    matmul,
    mul,
    multi_head_attention,
    softmax,
    to_map,
    to_tokens,
)
from tempotrack.numerics import oracles

from conftest import randn

ONES = np.ones(1, np.float32)
ZERO = np.zeros(1, np.float32)


class TestConv2d:
    def test_all_ones(self):
        out = conv2d(np.ones((1, 3, 3), np.float32), np.ones((1, 1, 3, 3), np.float32), ZERO)
        assert out.shape == (1, 1, 1)
        assert out[0, 0, 0] == 9.0

    def test_identity_kernel(self, rng):
        x = randn(rng, 1, 3, 3)
        k = np.zeros((1, 1, 3, 3), np.float32)
        k[0, 0, 1, 1] = 1
        assert conv2d(x, k, ZERO)[0, 0, 0] == x[0, 1, 1]

    def test_matches_oracle(self, rng):
        for _ in range(100):
            c_in, c_out = rng.integers(1, 5, size=2)
            h, w = rng.integers(3, 9, size=2)
            k = int(rng.integers(1, min(h, w) + 1))
            stride, pad = int(rng.integers(1, 3)), int(rng.integers(0, 2))
            x, wt, b = randn(rng, c_in, h, w), randn(rng, c_out, c_in, k, k), randn(rng, c_out)
            got = conv2d(x, wt, b, stride, pad)
            np.testing.assert_allclose(got, oracles.conv2d(x, wt, b, stride, pad), atol=1e-5, rtol=0)

    def test_output_size(self):
        out = conv2d(np.zeros((2, 11, 9), np.float32), np.zeros((3, 2, 3, 3), np.float32),
                     np.zeros(3, np.float32), stride=2, padding=1)
        assert out.shape == (3, 6, 5)

    def test_channel_mismatch(self):
        with pytest.raises(DimensionError):
            conv2d(np.zeros((2, 4, 4), np.float32), np.zeros((1, 3, 3, 3), np.float32), ZERO)

    def test_kernel_too_large(self):
        with pytest.raises(DimensionError):
            conv2d(np.zeros((1, 2, 2), np.float32), np.zeros((1, 1, 3, 3), np.float32), ZERO)


class TestConv1dOverQueue:
    def test_zero_map(self, rng):
        out = conv1d_over_queue(randn(rng, 3, 4), np.zeros((2, 4, 3), np.float32), np.zeros(2, np.float32))
        assert np.array_equal(out, np.zeros(2))

    def test_scalar(self):
        out = conv1d_over_queue(np.array([[3.0]], np.float32), np.array([[[2.0]]], np.float32),
                                np.array([0.5], np.float32))
        assert out[0] == 6.5

    def test_matches_oracle(self, rng):
        for _ in range(20):
            q, w, b = randn(rng, 3, 4), randn(rng, 2, 4, 3), randn(rng, 2)
            np.testing.assert_allclose(conv1d_over_queue(q, w, b), oracles.conv1d_over_queue(q, w, b),
                                       atol=1e-6, rtol=0)

    def test_length_mismatch(self, rng):
        with pytest.raises(DimensionError):
            conv1d_over_queue(randn(rng, 2, 4), randn(rng, 2, 4, 3), randn(rng, 2))


class TestDepthwiseXcorr:
    def test_scalar_template(self, rng):
        s = randn(rng, 3, 5, 6)
        t = np.array([2.0, -1.0, 0.5], np.float32).reshape(3, 1, 1)
        np.testing.assert_array_equal(depthwise_xcorr(s, t), s * t)

    def test_identical_crop_peaks_at_offset(self):
        # template cut from an otherwise-zero search map
        s = np.zeros((2, 10, 10), np.float32)
        s[:, 2:5, 6:9] = np.arange(18, dtype=np.float32).reshape(2, 3, 3) + 1
        t = s[:, 2:5, 6:9].copy()
        out = depthwise_xcorr(s, t)
        for c in range(2):
            assert np.unravel_index(np.argmax(out[c]), out[c].shape) == (2, 6)

    def test_matches_oracle(self, rng):
        for _ in range(100):
            hs, ws = rng.integers(3, 10, size=2)
            ht, wt = int(rng.integers(1, hs + 1)), int(rng.integers(1, ws + 1))
            s, t = randn(rng, 4, hs, ws), randn(rng, 4, ht, wt)
            np.testing.assert_allclose(depthwise_xcorr(s, t), oracles.depthwise_xcorr(s, t), atol=1e-5, rtol=0)

    def test_template_larger_than_search(self, rng):
        with pytest.raises(DimensionError):
            depthwise_xcorr(randn(rng, 1, 3, 3), randn(rng, 1, 4, 2))


class TestGlobalAvgPool:
    def test_arithmetic_mean(self):
        assert global_avg_pool(np.array([[[1, 2], [3, 4]]], np.float32))[0] == 2.5

    def test_constant(self):
        np.testing.assert_array_equal(global_avg_pool(np.full((3, 4, 5), 1.75, np.float32)), [1.75] * 3)

    def test_matches_oracle(self, rng):
        x = randn(rng, 3, 5, 7)
        np.testing.assert_allclose(global_avg_pool(x), oracles.global_avg_pool(x), atol=1e-6, rtol=0)


class TestSoftmax:
    def test_uniform(self):
        np.testing.assert_allclose(softmax(np.zeros(3, np.float32)), [1 / 3] * 3, atol=1e-7)

    def test_closed_form(self):
        e = math.e
        np.testing.assert_allclose(softmax(np.array([1.0, 0.0], np.float32)), [e / (e + 1), 1 / (e + 1)],
                                   atol=1e-6)
        np.testing.assert_allclose(softmax(np.array([1.0, 0.0], np.float32)), [0.7311, 0.2689], atol=1e-4)

    @given(arrays(np.float32, (4, 7), elements=st.floats(-50, 50, width=32)),
           st.floats(-100, 100, width=32))
    def test_sums_to_one_and_shift_invariant(self, x, c):
        p = softmax(x)
        assert (p >= 0).all()
        np.testing.assert_allclose(p.sum(axis=-1), 1.0, atol=1e-5)
        np.testing.assert_allclose(softmax(x + np.float32(c)), p, atol=1e-5)

    def test_large_logits_stable(self):
        p = softmax(np.array([1e4, 0.0, -1e4], np.float32))
        assert np.isfinite(p).all() and p[0] == 1.0

    def test_nan_rejected(self):
        with pytest.raises(NumericError):
            softmax(np.array([0.0, np.nan], np.float32))


class TestLayerNorm:
    g3, b3 = np.ones(3, np.float32), np.zeros(3, np.float32)

    def test_hand_case(self):
        out = layer_norm(np.array([[1, 2, 3]], np.float32), self.g3, self.b3, eps=0.0)
        np.testing.assert_allclose(out, [[-1.2247, 0, 1.2247]], atol=1e-3)

    def test_constant_row(self):
        out = layer_norm(np.full((2, 3), 5.0, np.float32), self.g3, self.b3)
        assert np.array_equal(out, np.zeros((2, 3)))

    @settings(max_examples=50)
    @given(arrays(np.float32, (3, 8), elements=st.floats(-1e3, 1e3, width=32)))
    def test_standardises(self, x):
        y = layer_norm(x, np.ones(8, np.float32), np.zeros(8, np.float32)).astype(np.float64)
        # eps shrinks the output variance by var / (var + eps); only rows with eps / var <= 5e-5 are held to 1e-4
        keep = x.astype(np.float64).var(axis=1) >= 0.2
        assert (np.abs(y.mean(axis=1)) <= 1e-5).all()
        assert (np.abs(y.var(axis=1) - 1)[keep] <= 1e-4).all()

    def test_matches_oracle(self, rng):
        for _ in range(100):
            t, c = rng.integers(1, 6), rng.integers(2, 10)
            x, g, b = randn(rng, t, c, scale=3), randn(rng, c), randn(rng, c)
            np.testing.assert_allclose(layer_norm(x, g, b), oracles.layer_norm(x, g, b), atol=1e-5, rtol=0)


def identity_attention(ci):
    eye = np.eye(ci, dtype=np.float32)
    return AttentionParams(eye, eye, eye, eye)


class TestMultiHeadAttention:
    def test_hand_case(self):
        x = np.array([[1.0], [0.0]], np.float32)
        out = multi_head_attention(x, x, x, identity_attention(1), AttentionConfig(1, 1))
        np.testing.assert_allclose(out, [[math.e / (math.e + 1)], [0.5]], atol=1e-6)

    def test_constant_values(self, rng):
        cfg = AttentionConfig(6, 12)
        p = AttentionParams(randn(rng, 12, 12), randn(rng, 12, 12), np.eye(12, dtype=np.float32),
                            randn(rng, 12, 12))
        v_row = randn(rng, 12)
        out = multi_head_attention(randn(rng, 5, 12), randn(rng, 4, 12), np.tile(v_row, (4, 1)), p, cfg)
        np.testing.assert_allclose(out, np.tile(v_row @ p.wo, (5, 1)), atol=1e-5)

    def test_matches_oracle(self, rng):
        cfg = AttentionConfig(6, 12)
        for _ in range(100):
            tq, tk = rng.integers(1, 7, size=2)
            p = AttentionParams(*(randn(rng, 12, 12, scale=0.4) for _ in range(4)))
            q, k, v = randn(rng, tq, 12), randn(rng, tk, 12), randn(rng, tk, 12)
            np.testing.assert_allclose(multi_head_attention(q, k, v, p, cfg),
                                       oracles.multi_head_attention(q, k, v, p, 6), atol=1e-5, rtol=0)

    def test_config(self):
        cfg = AttentionConfig(6, 96)
        assert cfg.head_dim == 16 and cfg.scale == pytest.approx(0.25)
        with pytest.raises(DimensionError):
            AttentionConfig(6, 100)

    def test_width_mismatch(self, rng):
        with pytest.raises(DimensionError):
            multi_head_attention(randn(rng, 2, 6), randn(rng, 2, 12), randn(rng, 2, 12),
                                 identity_attention(12), AttentionConfig(6, 12))


class TestFeedForward:
    def test_zero(self, rng):
        p = FFNParams(np.zeros((4, 8), np.float32), np.zeros(8, np.float32),
                      np.zeros((8, 4), np.float32), np.zeros(4, np.float32))
        assert not feed_forward(randn(rng, 3, 4), p).any()

    def test_constructed_linear_map(self, rng):
        # hidden = [x, -x] passes both signs through the ReLU; second layer recombines with a chosen map
        m = randn(rng, 4, 4)
        eye = np.eye(4, dtype=np.float32)
        p = FFNParams(np.concatenate([eye, -eye], axis=1), np.zeros(8, np.float32),
                      np.concatenate([m, -m], axis=0), np.zeros(4, np.float32))
        x = randn(rng, 5, 4)
        np.testing.assert_allclose(feed_forward(x, p), x @ m, atol=1e-5)

    def test_matches_composition(self, rng):
        p = FFNParams(randn(rng, 4, 8), randn(rng, 8), randn(rng, 8, 4), randn(rng, 4))
        x = randn(rng, 6, 4)
        np.testing.assert_allclose(feed_forward(x, p), oracles.feed_forward(x, p), atol=1e-5, rtol=1e-6)


class TestPlumbing:
    def test_matmul_oracle(self, rng):
        a, b = randn(rng, 3, 5), randn(rng, 5, 2)
        np.testing.assert_allclose(matmul(a, b), oracles.matmul(a, b), atol=1e-5)
        with pytest.raises(DimensionError):
            matmul(a, a)

    def test_elementwise(self, rng):
        a, b = randn(rng, 2, 3), randn(rng, 2, 3)
        assert np.array_equal(add(a, b), a + b) and np.array_equal(mul(a, b), a * b)
        with pytest.raises(DimensionError):
            add(a, b.T)

    def test_concat(self, rng):
        a, b = randn(rng, 2, 3), randn(rng, 2, 4)
        out = concat([a, b], axis=1)
        assert np.array_equal(out[:, :3], a) and np.array_equal(out[:, 3:], b)
        with pytest.raises(DimensionError):
            concat([a, b], axis=0)

    def test_token_layout(self):
        fmap = np.arange(2 * 2 * 3, dtype=np.float32).reshape(2, 2, 3)
        tokens = to_tokens(fmap)
        assert tokens.shape == (6, 2)
        # token index = row * W + col
        assert np.array_equal(tokens[4], fmap[:, 1, 1])

    @given(st.integers(1, 5), st.integers(1, 5), st.integers(1, 5))
    def test_round_trip(self, c, h, w):
        x = np.random.default_rng(c * 100 + h * 10 + w).standard_normal((h * w, c)).astype(np.float32)
        assert to_tokens(to_map(x, h, w)).tobytes() == x.tobytes()
        m = x.T.reshape(c, h, w).copy()
        assert to_map(to_tokens(m), h, w).tobytes() == m.tobytes()

    def test_deterministic(self, rng):
        x, w, b = randn(rng, 3, 9, 9), randn(rng, 4, 3, 3, 3), randn(rng, 4)
        assert conv2d(x, w, b).tobytes() == conv2d(x, w, b).tobytes()
