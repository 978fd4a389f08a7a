import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from formgraph import netcore as nc
from formgraph.netcore.init import attention_params, lstm_params

from _support import gradient_cases


def P(a, name="p"):
    return nc.Param(np.asarray(a, dtype=np.float64), name)


def conv_oracle(x, w, b):
    n, h, wd, cin = x.shape
    k = w.shape[0]
    p = k // 2
    out = np.zeros((n, h, wd, w.shape[-1]))
    for s in range(n):
        for i in range(h):
            for j in range(wd):
                for o in range(w.shape[-1]):
                    acc = b[o]
                    for di in range(k):
                        for dj in range(k):
                            for c in range(cin):
                                ii, jj = i + di - p, j + dj - p
                                if 0 <= ii < h and 0 <= jj < wd:
                                    acc += x[s, ii, jj, c] * w[di, dj, c, o]
                    out[s, i, j, o] = acc
    return out


def maxpool_oracle(x):
    n, h, wd, c = x.shape
    ho, top, _ = nc.pool_padding(h)
    wo, left, _ = nc.pool_padding(wd)
    out = np.full((n, ho, wo, c), -np.inf)
    for s in range(n):
        for i in range(ho):
            for j in range(wo):
                for di in range(3):
                    for dj in range(3):
                        ii, jj = 2 * i + di - top, 2 * j + dj - left
                        if 0 <= ii < h and 0 <= jj < wd:
                            out[s, i, j] = np.maximum(out[s, i, j], x[s, ii, jj])
    return out


# -- conv / pool ------------------------------------------------------------


def test_conv_scalar_product():
    out = nc.conv2d(nc.Tensor(np.full((1, 1, 1, 1), 2.0)), P(np.full((1, 1, 1, 1), 3.0)), P([0.0]))
    assert out.data.item() == 6.0


def test_conv_identity_kernel():
    x = np.random.default_rng(0).normal(size=(2, 4, 5, 3))
    w = np.zeros((3, 3, 3, 3))
    for c in range(3):
        w[1, 1, c, c] = 1
    assert np.array_equal(nc.conv2d(nc.Tensor(x), P(w), P(np.zeros(3))).data, x)


def test_conv_matches_loop_oracle():
    rng = np.random.default_rng(1)
    x = rng.normal(size=(1, 5, 5, 2))
    w, b = rng.normal(size=(3, 3, 2, 4)), rng.normal(size=4)
    np.testing.assert_allclose(nc.conv2d(nc.Tensor(x), P(w), P(b)).data, conv_oracle(x, w, b), rtol=1e-12, atol=1e-12)


def test_conv_exact_on_integer_inputs():
    rng = np.random.default_rng(2)
    x = rng.integers(-4, 5, size=(2, 8, 8, 4)).astype(float)
    w = rng.integers(-3, 4, size=(5, 5, 4, 3)).astype(float)
    b = rng.integers(-2, 3, size=3).astype(float)
    assert np.array_equal(nc.conv2d(nc.Tensor(x), P(w), P(b)).data, conv_oracle(x, w, b))


def test_conv_shared_equals_concatenated_input():
    rng = np.random.default_rng(3)
    x = rng.normal(size=(3, 6, 7, 3))
    shared = rng.normal(size=(6, 7, 2))
    w, b = P(rng.normal(size=(3, 3, 5, 4)), "w"), P(rng.normal(size=4), "b")
    full = np.concatenate([x, np.broadcast_to(shared, (3, 6, 7, 2))], axis=-1)
    np.testing.assert_allclose(nc.conv2d_shared(nc.Tensor(x), shared, w, b).data, nc.conv2d(nc.Tensor(full), w, b).data, atol=1e-12)


def test_conv_rejects_bad_filters():
    x = nc.Tensor(np.zeros((1, 4, 4, 2)))
    with pytest.raises(ValueError, match="channel mismatch"):
        nc.conv2d(x, P(np.zeros((3, 3, 3, 1))), P([0.0]))
    with pytest.raises(ValueError, match="odd"):
        nc.conv2d(x, P(np.zeros((2, 2, 2, 1))), P([0.0]))


def test_maxpool_matches_loop_oracle():
    x = np.random.default_rng(4).normal(size=(1, 7, 7, 1))
    assert np.array_equal(nc.maxpool(nc.Tensor(x)).data, maxpool_oracle(x))


@given(h=st.integers(1, 8), w=st.integers(1, 8), c=st.integers(1, 4), seed=st.integers(0, 10_000))
@settings(max_examples=40, deadline=None)
def test_maxpool_oracle_property(h, w, c, seed):
    x = np.random.default_rng(seed).normal(size=(2, h, w, c))
    out = nc.maxpool(nc.Tensor(x)).data
    assert out.shape == (2, math.ceil(h / 2), math.ceil(w / 2), c)
    assert np.array_equal(out, maxpool_oracle(x))


def test_maxpool_constant_and_full_size_chain():
    x = nc.Tensor(np.full((1, 9, 9, 2), 0.25))
    assert np.all(nc.maxpool(x).data == 0.25)
    h, w = 160, 640
    for _ in range(5):
        h, w = nc.pool_padding(h)[0], nc.pool_padding(w)[0]
    assert (h, w) == (5, 20)


# -- dense / activations ------------------------------------------------------


def test_dense_examples():
    out = nc.dense(nc.Tensor(np.array([[1.0, 2.0]])), P(np.eye(2)), P([1.0, 1.0]))
    assert out.data.tolist() == [[2.0, 3.0]]
    zero = nc.dense(nc.Tensor(np.zeros((1, 3))), P(np.ones((3, 2))), P([0.5, -1.0]))
    assert zero.data.tolist() == [[0.5, -1.0]]


def test_activations():
    assert nc.sigmoid(nc.Tensor(np.array([0.0]))).data[0] == 0.5
    np.testing.assert_allclose(nc.softmax(nc.Tensor(np.zeros((1, 3)))).data, [[1 / 3] * 3])
    assert nc.relu(nc.Tensor(np.array([-2.0, 3.0]))).data.tolist() == [0.0, 3.0]
    big = nc.softmax(nc.Tensor(np.array([[1000.0, 1000.0, -1000.0]]))).data
    assert np.isfinite(big).all() and abs(big.sum() - 1) < 1e-6


def test_non_finite_rejected_with_op_name():
    with np.errstate(invalid="ignore"), pytest.raises(nc.NonFiniteError, match="'mul'"):
        nc.mul(nc.Tensor(np.array([np.inf])), nc.Tensor(np.array([0.0])))


# -- recurrent ------------------------------------------------------------------


def test_lstm_zero_params_zero_state():
    p = lstm_params(np.random.default_rng(0), "l", 3, 4, np.float64)
    for q in p.params():
        q.data[...] = 0
    h, c = nc.lstm_step(nc.Tensor(np.ones((2, 3))), *nc.lstm_zero_state(2, 4, np.float64), p)
    assert np.all(h.data == 0) and np.all(c.data == 0)


def test_lstm_forget_bias_decay():
    p = lstm_params(np.random.default_rng(0), "l", 3, 4, np.float64)
    p.wx.data[...] = 0
    p.wh.data[...] = 0
    c_prev = np.array([[0.5, -1.0, 2.0, 0.0]])
    _, c = nc.lstm_step(nc.Tensor(np.zeros((1, 3))), nc.Tensor(np.zeros((1, 4))), nc.Tensor(c_prev), p)
    np.testing.assert_allclose(c.data, 1 / (1 + math.exp(-1)) * c_prev, rtol=1e-12)


def test_bilstm_length_one_and_reversal():
    rng = np.random.default_rng(5)
    f = lstm_params(rng, "f", 3, 4, np.float64)
    b = lstm_params(rng, "b", 3, 4, np.float64)
    one = rng.normal(size=(1, 1, 3))
    out = nc.bilstm(nc.Tensor(one), f, b, np.ones((1, 1))).data
    hf, _ = nc.lstm_step(nc.Tensor(one[:, 0]), *nc.lstm_zero_state(1, 4, np.float64), f)
    hb, _ = nc.lstm_step(nc.Tensor(one[:, 0]), *nc.lstm_zero_state(1, 4, np.float64), b)
    np.testing.assert_allclose(out[0, 0], np.concatenate([hf.data[0], hb.data[0]]))

    seq = rng.normal(size=(1, 3, 3))
    fwd = nc.bilstm(nc.Tensor(seq), f, b, np.ones((1, 3))).data
    rev = nc.bilstm(nc.Tensor(seq[:, ::-1].copy()), b, f, np.ones((1, 3))).data
    for i in range(3):
        np.testing.assert_allclose(rev[0, i], np.concatenate([fwd[0, 2 - i, 4:], fwd[0, 2 - i, :4]]), atol=1e-12)


def test_bilstm_padding_is_skipped():
    rng = np.random.default_rng(6)
    f = lstm_params(rng, "f", 2, 3, np.float64)
    b = lstm_params(rng, "b", 2, 3, np.float64)
    seq = rng.normal(size=(1, 4, 2))
    short = nc.bilstm(nc.Tensor(seq[:, :2]), f, b, np.ones((1, 2))).data
    padded = nc.bilstm(nc.Tensor(seq), f, b, np.array([[1, 1, 0, 0]])).data
    np.testing.assert_allclose(padded[:, :2], short, atol=1e-12)


# -- attention ------------------------------------------------------------------


def test_attention_identical_rows_and_zero_v():
    rng = np.random.default_rng(7)
    p = attention_params(rng, "a", 5, 4, 6, np.float64)
    row = rng.normal(size=4)
    mem = np.tile(row, (1, 3, 1))
    ctx, w = nc.bahdanau_attention(nc.Tensor(rng.normal(size=(1, 5))), nc.Tensor(mem), p)
    np.testing.assert_allclose(w, [[1 / 3] * 3])
    np.testing.assert_allclose(ctx.data[0], row)
    p.v.data[...] = 0
    _, w = nc.bahdanau_attention(nc.Tensor(rng.normal(size=(1, 5))), nc.Tensor(rng.normal(size=(1, 4, 4))), p, np.array([[1, 1, 0, 1]]))
    np.testing.assert_allclose(w, [[1 / 3, 1 / 3, 0, 1 / 3]])


def test_attention_matches_direct_evaluation():
    rng = np.random.default_rng(8)
    p = attention_params(rng, "a", 5, 4, 6, np.float64)
    s, mem = rng.normal(size=(1, 5)), rng.normal(size=(1, 3, 4))
    ctx, w = nc.bahdanau_attention(nc.Tensor(s), nc.Tensor(mem), p)
    scores = [p.v.data @ np.tanh(p.w1.data.T @ s[0] + p.w2.data.T @ mem[0, j]) for j in range(3)]
    ref_w = np.exp(scores) / np.exp(scores).sum()
    np.testing.assert_allclose(w[0], ref_w, rtol=1e-12)
    np.testing.assert_allclose(ctx.data[0], ref_w @ mem[0], rtol=1e-12)
    assert abs(w.sum() - 1) < 1e-6


def test_attention_all_masked_raises():
    p = attention_params(np.random.default_rng(0), "a", 2, 2, 2, np.float64)
    with pytest.raises(ValueError, match="masked"):
        nc.bahdanau_attention(nc.Tensor(np.zeros((1, 2))), nc.Tensor(np.zeros((1, 2, 2))), p, np.zeros((1, 2)))


# -- losses / optimiser ------------------------------------------------------------


def test_loss_examples():
    assert nc.bce(nc.Tensor(np.array([0.5])), [1.0]).data == pytest.approx(math.log(2))
    assert nc.ce(nc.Tensor(np.full((1, 3), 1 / 3)), [2]).data == pytest.approx(math.log(3))
    assert nc.bce(nc.Tensor(np.array([1.0])), [1.0]).data == pytest.approx(0, abs=1e-6)


def test_loss_mask_excludes_positions():
    p = nc.Tensor(np.array([[0.5, 0.9, 0.01]]))
    y = np.array([[1.0, 1.0, 1.0]])
    assert nc.bce(p, y, [[1, 1, 0]]).data == pytest.approx(nc.bce(nc.Tensor(p.data[:, :2]), y[:, :2]).data)
    with pytest.raises(ValueError, match="empty"):
        nc.bce(p, y, np.zeros((1, 3)))


def test_adam_zero_gradient_is_identity():
    p = P([1.0, -2.0])
    nc.adam_step([p], 1e-3, 1)
    assert p.data.tolist() == [1.0, -2.0]


def test_adam_first_step_is_sign_step():
    p = P([1.0, -2.0, 0.5])
    p.grad[...] = [3.0, -0.2, 1e-3]
    nc.adam_step([p], 1e-2, 1)
    np.testing.assert_allclose(p.data, [1.0 - 1e-2, -2.0 + 1e-2, 0.5 - 1e-2], rtol=1e-5)
    assert np.all(p.grad == 0)


def test_adam_two_steps_move_monotonically():
    p = P([0.0])
    trail = []
    for t in (1, 2):
        p.grad[...] = 0.7
        nc.adam_step([p], 0.1, t)
        trail.append(p.data[0])
    assert 0 > trail[0] > trail[1]
    with pytest.raises(ValueError):
        nc.adam_step([p], 0.1, 0)


# -- gradient checks -----------------------------------------------------------------


def test_gradcheck_dense_tight():
    loss, params = gradient_cases()["dense"]
    assert nc.grad_check(loss, params).worst < 1e-6


@pytest.mark.parametrize("name", sorted(gradient_cases()))
def test_gradcheck_op(name):
    loss, params = gradient_cases()[name]
    rep = nc.grad_check(loss, params)
    assert sum(rep.checked.values()) > 0
    assert rep.passed(1e-4), rep.failures(1e-4)


def test_gradcheck_skips_relu_kink():
    x = P([0.0, 1.0], "x")
    rep = nc.grad_check(lambda: nc.total(nc.relu(x)), [x], h=1e-5)
    assert rep.skipped["x"] == 1 and rep.checked["x"] == 1
