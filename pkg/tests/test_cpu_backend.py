import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

import texgrad as tg
from texgrad.engine import ENGINE
from texgrad.errors import BroadcastIncompatibleError


def f32(x):
    return np.asarray(x, dtype=np.float32)


def loop_matmul(a, b):
    m, n = a.shape
    p = b.shape[1]
    out = np.zeros((m, p), np.float32)
    for i in range(m):
        for j in range(p):
            acc = np.float32(0)
            for k in range(n):
                acc = np.float32(acc + np.float32(a[i, k] * b[k, j]))
            out[i, j] = acc
    return out


def loop_conv(x, w, stride, pad_top, pad_left, out_h, out_w):
    b, h, wd, cin = x.shape
    kh, kw, _, cout = w.shape
    out = np.zeros((b, out_h, out_w, cout), np.float32)
    for n in range(b):
        for oy in range(out_h):
            for ox in range(out_w):
                for co in range(cout):
                    acc = np.float32(0)
                    for ky in range(kh):
                        for kx in range(kw):
                            for ci in range(cin):
                                iy, ix = oy * stride + ky - pad_top, ox * stride + kx - pad_left
                                if 0 <= iy < h and 0 <= ix < wd:
                                    acc = np.float32(acc + np.float32(x[n, iy, ix, ci] * w[ky, kx, ci, co]))
                    out[n, oy, ox, co] = acc
    return out


def test_unary_examples(cpu):
    assert tg.relu(tg.tensor([-1.0, 0.0, 2.0])).numpy().tolist() == [0, 0, 2]
    assert tg.square(tg.tensor([3.0])).numpy().tolist() == [9]
    assert tg.log(tg.tensor([0.0])).numpy()[0] == pytest.approx(math.log(1e-8), rel=1e-6)
    assert tg.neg(tg.tensor([1.5])).numpy().tolist() == [-1.5]


def test_binary_examples(cpu):
    assert tg.add(tg.tensor([[1.0, 2.0], [3.0, 4.0]]), tg.scalar(1.0)).numpy().tolist() == [[2, 3], [4, 5]]
    assert tg.mul(tg.tensor([1.0, 2, 3]), tg.tensor([4.0, 5, 6])).numpy().tolist() == [4, 10, 18]
    with pytest.raises(BroadcastIncompatibleError):
        tg.add(tg.zeros([2, 3]), tg.zeros([4]))


def test_division_by_zero_is_ieee(cpu):
    out = tg.div(tg.tensor([1.0, 0.0]), tg.tensor([0.0, 0.0])).numpy()
    assert np.isinf(out[0]) and np.isnan(out[1])


def test_matmul_examples(cpu):
    a = tg.tensor([[1.0, 2.0], [3.0, 4.0]])
    assert tg.matmul(a, tg.tensor(np.eye(2, dtype=np.float32))).numpy().tolist() == [[1, 2], [3, 4]]
    assert tg.matmul(a, tg.tensor([[5.0, 6.0], [7.0, 8.0]])).numpy().tolist() == [[19, 22], [43, 50]]
    out = tg.matmul(tg.tensor([[1.0, 2.0, 3.0]]), tg.tensor([[4.0], [5.0], [6.0]]))
    assert out.shape == (1, 1) and out.numpy()[0, 0] == 32


def test_conv_examples(cpu, rng):
    x = f32(rng.uniform(-2, 2, (1, 4, 4, 2)))
    one = np.zeros((1, 1, 2, 2), np.float32)
    one[0, 0, 0, 0] = one[0, 0, 1, 1] = 1
    assert np.array_equal(tg.conv2d(tg.tensor(x), tg.tensor(one)).numpy(), x)
    ones = tg.conv2d(tg.ones([1, 3, 3, 1]), tg.ones([2, 2, 1, 1]))
    assert ones.shape == (1, 2, 2, 1) and ones.numpy().ravel().tolist() == [4] * 4
    same = tg.conv2d(tg.tensor(x), tg.tensor(f32(rng.uniform(-1, 1, (3, 3, 2, 1)))), padding="same")
    assert same.shape == (1, 4, 4, 1)


def test_reduce_examples(cpu):
    assert tg.sum(tg.tensor([[1.0, 2.0], [3.0, 4.0]]), axes=[0]).numpy().tolist() == [4, 6]
    assert tg.mean(tg.tensor([1.0, 3.0, 5.0, 7.0])).item() == 4
    assert tg.max(tg.tensor([-5.0, -2.0, -9.0])).item() == -2


def test_movement_examples(cpu):
    before = tg.memory().num_data_containers
    t = tg.transpose(tg.tensor([[1.0, 2.0], [3.0, 4.0]]), [1, 0])
    assert t.numpy().tolist() == [[1, 3], [2, 4]]
    assert tg.memory().num_data_containers == before + 2
    assert tg.slice(tg.tensor([1.0, 2, 3, 4, 5]), [1], [3]).numpy().tolist() == [2, 3, 4]
    c = tg.concat([tg.tensor([[1.0], [2.0]]), tg.tensor([[3.0]])], axis=0)
    assert c.numpy().tolist() == [[1], [2], [3]]


def test_cpu_never_defers(cpu):
    out = tg.exp(tg.tensor([1.0]))
    assert cpu.is_materialized(out.data_id)


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 9), st.integers(1, 9), st.integers(1, 9), st.integers(0, 2**31))
def test_matmul_bitwise_equals_loop_oracle(m, n, p, seed):
    ENGINE.set_backend("cpu")
    r = np.random.default_rng(seed)
    a, b = f32(r.uniform(-2, 2, (m, n))), f32(r.uniform(-2, 2, (n, p)))
    got = tg.tidy(lambda: tg.matmul(tg.tensor(a), tg.tensor(b)).numpy())
    assert np.array_equal(got, loop_matmul(a, b))


@settings(max_examples=25, deadline=None)
@given(st.integers(2, 6), st.integers(1, 3), st.integers(1, 3), st.integers(1, 2),
       st.sampled_from(["valid", "same"]), st.integers(0, 2**31))
def test_conv_bitwise_equals_loop_oracle(h, k, cin, stride, padding, seed):
    ENGINE.set_backend("cpu")
    if k > h:
        return
    r = np.random.default_rng(seed)
    x = f32(r.uniform(-2, 2, (1, h, h + 1, cin)))
    w = f32(r.uniform(-2, 2, (k, k, cin, 2)))
    got = tg.tidy(lambda: tg.conv2d(tg.tensor(x), tg.tensor(w), (stride, stride), padding).numpy())
    if padding == "valid":
        oh, ow, pt, pl = (h - k) // stride + 1, (h + 1 - k) // stride + 1, 0, 0
    else:
        oh, ow = -(-h // stride), -(-(h + 1) // stride)
        pt = max((oh - 1) * stride + k - h, 0) // 2
        pl = max((ow - 1) * stride + k - (h + 1), 0) // 2
    assert np.array_equal(got, loop_conv(x, w, stride, pt, pl, oh, ow))


@settings(max_examples=50, deadline=None)
@given(st.lists(st.integers(1, 4), min_size=1, max_size=4), st.integers(0, 2**31))
def test_reductions_match_numpy(shape, seed):
    ENGINE.set_backend("cpu")
    r = np.random.default_rng(seed)
    x = f32(r.uniform(-2, 2, shape))
    axis = int(r.integers(0, len(shape)))
    with tg.backend_scope("cpu"):
        got = tg.tidy(lambda: [tg.sum(tg.tensor(x), [axis]).numpy(), tg.max(tg.tensor(x), [axis]).numpy()])
    assert np.allclose(got[0], x.sum(axis=axis), rtol=1e-5, atol=1e-5)
    assert np.array_equal(got[1], x.max(axis=axis))
