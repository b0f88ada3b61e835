import numpy as np
import pytest

from freqdet import attention as att
from freqdet import tensor as T
from freqdet.gradcheck import fd_gradcheck
from freqdet.tensor import Tensor


def t(data):
    return Tensor(np.asarray(data, dtype=np.float64))


def naive_window_attention(q, k, v):
    """Three-loop oracle for softmax(Q K^T) V per window."""
    S, C, N = q.shape
    out = np.zeros_like(v)
    for s in range(S):
        aff = np.zeros((C, C))
        for i in range(C):
            for j in range(C):
                aff[i, j] = np.dot(q[s, i], k[s, j])
        for i in range(C):
            e = np.exp(aff[i] - aff[i].max())
            w = e / e.sum()
            out[s, i] = sum(w[j] * v[s, j] for j in range(C))
    return out


def make_params(rng, c_in=2, c_int=3, b=2):
    return att.init_window_attention(rng, c_in, c_int, b, dtype=np.float64)


class TestChannelAttention:
    def test_zero_qk_gives_channel_mean(self):
        rng = np.random.default_rng(0)
        v = rng.standard_normal((2, 3, 4))
        out = att.window_channel_attention(t(np.zeros_like(v)), t(np.zeros_like(v)), t(v))
        np.testing.assert_allclose(out.data, np.broadcast_to(
            v.mean(axis=1, keepdims=True), v.shape), atol=1e-12)

    def test_single_channel_passthrough(self):
        rng = np.random.default_rng(1)
        q, k, v = (rng.standard_normal((3, 1, 5)) for _ in range(3))
        out = att.window_channel_attention(t(q), t(k), t(v))
        np.testing.assert_allclose(out.data, v, atol=1e-12)

    @pytest.mark.parametrize("c,n", [(2, 4), (3, 4), (4, 9), (1, 9)])
    def test_matches_naive_loop_oracle(self, c, n):
        rng = np.random.default_rng(c * 10 + n)
        q, k, v = (rng.standard_normal((2, c, n)) for _ in range(3))
        out = att.window_channel_attention(t(q), t(k), t(v))
        np.testing.assert_allclose(out.data, naive_window_attention(q, k, v), atol=1e-10)


class TestPositionMlp:
    def test_zero_input_identity_weights(self):
        out = att.position_mlp(t(np.zeros((2, 3, 4))), t(np.eye(4)), t(np.zeros(4)))
        np.testing.assert_array_equal(out.data, np.zeros((2, 3, 4)))

    def test_identity_weights_give_gelu(self):
        rng = np.random.default_rng(2)
        v = rng.standard_normal((2, 3, 4))
        out = att.position_mlp(t(v), t(np.eye(4)), t(np.zeros(4)))
        np.testing.assert_allclose(out.data, T.gelu(t(v)).data, atol=1e-12)

    def test_matches_kernel_composition(self):
        rng = np.random.default_rng(3)
        v, w, b = rng.standard_normal((2, 3, 4)), rng.standard_normal((4, 4)), rng.standard_normal(4)
        out = att.position_mlp(t(v), t(w), t(b))
        ref = T.gelu(T.linear(t(v), t(w), t(b)))
        np.testing.assert_array_equal(out.data, ref.data)


class TestPreprocess:
    def test_composed_identities(self):
        rng = np.random.default_rng(4)
        p = make_params(rng, c_in=3, c_int=3)
        p.pre_w.data = np.eye(3)
        p.pre_bias.data[:] = 0
        p.dw_w.data[:] = 0
        p.dw_w.data[:, 1, 1] = 1.0
        p.dw_bias.data[:] = 0
        x = rng.standard_normal((1, 3, 4, 4))
        out = att.conv_preprocess(t(x), p)
        np.testing.assert_allclose(out.data, x, atol=1e-12)

    def test_zero_input_bias_planes(self):
        rng = np.random.default_rng(5)
        p = make_params(rng, c_in=2, c_int=3)
        out = att.conv_preprocess(t(np.zeros((1, 2, 4, 4))), p)
        # conv biases are zero-initialized, so the output is all zero
        np.testing.assert_array_equal(out.data, np.zeros((1, 3, 4, 4)))
        p.dw_bias.data[:] = [1.0, 2.0, 3.0]
        out = att.conv_preprocess(t(np.zeros((1, 2, 4, 4))), p)
        np.testing.assert_allclose(
            out.data, np.broadcast_to(np.array([1.0, 2.0, 3.0])[None, :, None, None],
                                      (1, 3, 4, 4)))

    def test_matches_kernel_composition(self):
        rng = np.random.default_rng(6)
        p = make_params(rng, c_in=2, c_int=3)
        x = rng.standard_normal((2, 2, 4, 6))
        out = att.conv_preprocess(t(x), p)
        ref = T.depthwise_conv3x3(T.conv1x1(t(x), p.pre_w, p.pre_bias), p.dw_w, p.dw_bias)
        np.testing.assert_array_equal(out.data, ref.data)


class TestBlock:
    def test_single_window_manual_composition(self):
        rng = np.random.default_rng(7)
        p = make_params(rng, c_in=2, c_int=3, b=4)
        x = rng.standard_normal((1, 2, 4, 4))
        out = att.window_attention_block(t(x), p)

        pre = att.conv_preprocess(t(x), p)
        win = pre.data.reshape(1, 3, 16)
        q = p.wq.data @ win
        k = p.wk.data @ win
        v = p.wv.data @ win
        a = naive_window_attention(q, k, v)
        g = att.position_mlp(t(v), p.mlp_w, p.mlp_bias).data
        mixed = (a * g).reshape(1, 3, 4, 4)
        expected = T.conv1x1(t(mixed), p.out_w, p.out_bias).data
        np.testing.assert_allclose(out.data, expected, atol=1e-10)

    def test_locality_of_window_features(self):
        rng = np.random.default_rng(8)
        p = make_params(rng, c_in=2, c_int=3, b=4)
        x = rng.standard_normal((1, 2, 8, 8))
        base, _ = att._block_windows(t(x), p)
        xp = x.copy()
        xp[0, 1, 2, 2] += 1.0  # window 0, two pixels from its borders
        pert, _ = att._block_windows(t(xp), p)
        changed = [s for s in range(base.shape[0])
                   if not np.array_equal(base.data[s], pert.data[s])]
        assert changed == [0]

    def test_zero_weights_give_constant_output(self):
        rng = np.random.default_rng(9)
        p = make_params(rng, c_in=2, c_int=3, b=2)
        for name in ("pre_w", "dw_w", "wq", "wk", "wv", "mlp_w", "out_w"):
            getattr(p, name).data[:] = 0.0
        p.out_bias.data[:] = [0.5, -1.5]
        x = rng.standard_normal((2, 2, 4, 4))
        out = att.window_attention_block(t(x), p)
        expected = np.broadcast_to(np.array([0.5, -1.5])[None, :, None, None], out.shape)
        np.testing.assert_allclose(out.data, expected, atol=1e-12)

    def test_output_shape_preserved(self):
        rng = np.random.default_rng(10)
        for c_in, c_int, b, h, w in [(3, 16, 4, 4, 8), (2, 5, 2, 6, 4), (1, 4, 4, 8, 8)]:
            p = make_params(rng, c_in=c_in, c_int=c_int, b=b)
            x = rng.standard_normal((2, c_in, h, w))
            assert att.window_attention_block(t(x), p).shape == x.shape

    def test_all_params_pass_finite_differences(self):
        rng = np.random.default_rng(11)
        p = make_params(rng, c_in=2, c_int=3, b=2)
        x = Tensor(rng.standard_normal((1, 2, 4, 4)), dtype=np.float64)
        weights = rng.standard_normal((1, 2, 4, 4))
        tensors = [p.pre_w, p.pre_bias, p.dw_w, p.dw_bias, p.wq, p.wk, p.wv,
                   p.mlp_w, p.mlp_bias, p.out_w, p.out_bias]

        def loss(*_):
            return T.mean(T.mul_const(att.window_attention_block(x, p), weights))

        assert fd_gradcheck(loss, tensors, rng, n_coords=3) < 1e-4
