import asyncio

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

import texgrad as tg
from texgrad.backends.cpu import CpuBackend
from texgrad.engine import ENGINE, Engine
from texgrad.errors import (MissingGradientError, NanDetectedError, NonScalarOutputError,
                            UnsupportedKernelError)
from texgrad.texsim.backend import TexSimBackend
from texgrad.texsim.precision import F16


def test_run_kernel_add(any_backend):
    x, y = tg.tensor([1.0, 2.0]), tg.tensor([3.0, 4.0])
    assert ENGINE.run_kernel("add", [x, y]).numpy().tolist() == [4, 6]


def test_unknown_kernel(cpu):
    with pytest.raises(UnsupportedKernelError) as exc:
        ENGINE.run_kernel("fft", [tg.tensor([1.0])])
    assert exc.value.code == "UNSUPPORTED_KERNEL"


def test_matmul_returns_before_materialized(texsim):
    a = tg.tensor(np.eye(3, dtype=np.float32))
    out = tg.matmul(a, a)
    assert not texsim.is_materialized(out.data_id)
    assert texsim.executed_count == 0
    out.data_sync()
    assert texsim.is_materialized(out.data_id)


# tidy

def test_tidy_keeps_only_result(any_backend):
    x = tg.tensor([1.0, 2.0])
    before = tg.memory().num_tensors
    y = tg.tidy(lambda: tg.add(tg.mul(x, x), x))
    assert tg.memory().num_tensors == before + 1
    assert y.numpy().tolist() == [2, 6]


def test_nested_tidy_inner_result_disposed_by_outer(cpu):
    x = tg.tensor([1.0])
    captured = {}

    def outer():
        inner = tg.tidy(lambda: tg.square(x))
        captured["inner"] = inner
        return tg.add(inner, x)

    before = tg.memory().num_tensors
    out = tg.tidy(outer)
    assert captured["inner"].disposed
    assert not out.disposed
    assert tg.memory().num_tensors == before + 1


def test_tidy_error_restores_baseline(cpu):
    x = tg.tensor([1.0])
    before = tg.memory().num_tensors

    def failing():
        tg.square(x)
        tg.exp(x)
        raise RuntimeError("boom")

    with pytest.raises(RuntimeError):
        tg.tidy(failing)
    assert tg.memory().num_tensors == before


def test_keep_survives_scope(cpu):
    x = tg.tensor([2.0])
    kept = {}

    def body():
        kept["t"] = tg.keep(tg.square(x))
        return None

    tg.tidy(body)
    assert kept["t"].numpy().tolist() == [4]


def _random_dag(rng, x, depth):
    ops = [tg.add, tg.mul, tg.sub]
    nodes = [x]
    for _ in range(depth):
        kind = rng.integers(0, 5)
        a = nodes[rng.integers(0, len(nodes))]
        if kind < 3:
            b = nodes[rng.integers(0, len(nodes))]
            nodes.append(ops[kind](a, b))
        elif kind == 3:
            nodes.append(tg.sigmoid(a))
        else:
            nodes.append(tg.reshape(a, [-1]))
    take = int(rng.integers(1, 3))
    return nodes[-take:] if take > 1 else nodes[-1]


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000), st.integers(1, 6))
def test_tidy_random_dags_do_not_leak(seed, depth):
    ENGINE.set_backend("cpu")
    rng = np.random.default_rng(seed)
    x = tg.tensor(rng.standard_normal(3).astype(np.float32))
    before = tg.memory()
    out = tg.tidy(lambda: _random_dag(rng, x, depth))
    outs = out if isinstance(out, list) else [out]
    alive = {id(t): t for t in outs if t is not x}
    assert tg.memory().num_tensors == before.num_tensors + len(alive)
    tg.dispose(list(alive.values()))
    assert tg.memory().num_tensors == before.num_tensors
    assert tg.memory().num_data_containers == before.num_data_containers
    x.dispose()


# gradients

def test_grad_of_sum_square(any_backend):
    g = tg.grad(lambda x: tg.sum(tg.square(x)))(tg.tensor([3.0]))
    assert g.numpy().tolist() == [6.0]


def test_grad_of_sum_mul_constant(cpu):
    c = tg.tensor([2.0, -1.0, 0.5])
    g = tg.grad(lambda x: tg.sum(tg.mul(x, c)))(tg.tensor([1.0, 1.0, 1.0]))
    assert g.numpy().tolist() == [2.0, -1.0, 0.5]


def test_grad_mse_matches_finite_differences(cpu, rng):
    x0 = rng.uniform(-2, 2, (5, 3))
    w = rng.uniform(-2, 2, (3, 2))
    y = rng.uniform(-2, 2, (5, 2))

    def oracle(xv):
        return np.mean((xv @ w - y) ** 2)

    wt, yt = tg.tensor(w.astype(np.float32)), tg.tensor(y.astype(np.float32))
    g = tg.grad(lambda x: tg.mean(tg.square(tg.sub(tg.matmul(x, wt), yt))))(
        tg.tensor(x0.astype(np.float32))).numpy()
    h = 1e-3
    fd = np.zeros_like(x0)
    for idx in np.ndindex(x0.shape):
        e = np.zeros_like(x0)
        e[idx] = h
        fd[idx] = (oracle(x0 + e) - oracle(x0 - e)) / (2 * h)
    assert np.linalg.norm(g - fd) / np.linalg.norm(fd) < 1e-3


def test_non_scalar_output(cpu):
    with pytest.raises(NonScalarOutputError):
        tg.grad(lambda x: tg.square(x))(tg.tensor([1.0, 2.0]))


@pytest.mark.parametrize("op", ["conv2d", "max"])
def test_missing_gradient_names_op(cpu, op):
    x = tg.tensor(np.ones((1, 3, 3, 1), np.float32))
    f = tg.tensor(np.ones((2, 2, 1, 1), np.float32))
    fn = (lambda t: tg.sum(tg.conv2d(t, f))) if op == "conv2d" else (lambda t: tg.max(t))
    before = tg.memory().num_tensors
    with pytest.raises(MissingGradientError) as exc:
        tg.grad(fn)(x)
    assert exc.value.op_name == op
    assert tg.memory().num_tensors == before
    # forward-only ops stay usable outside gradients
    assert fn(x).size == 1


def test_unreached_input_gets_zero_gradient(cpu):
    a, b = tg.tensor([1.0, 2.0]), tg.tensor([5.0])
    y, (ga, gb) = tg.value_and_grads(lambda p, q: tg.sum(tg.square(p)), [a, b])
    assert ga.numpy().tolist() == [2, 4] and gb.numpy().tolist() == [0]


def test_gradients_do_not_leak(any_backend):
    x = tg.tensor([0.5, -1.0, 2.0])
    before = tg.memory().num_tensors
    g = tg.grad(lambda t: tg.mean(tg.sigmoid(tg.mul(t, t))))(x)
    assert tg.memory().num_tensors == before + 1
    g.dispose()


def test_plain_ops_do_not_record_tape(cpu):
    assert not ENGINE.recording
    tg.add(tg.tensor([1.0]), tg.tensor([1.0]))
    assert not ENGINE.recording


# debug mode

def test_debug_flags_first_nan_kernel(cpu):
    tg.set_debug(True)
    x = tg.tensor([-1.0, 4.0])
    with pytest.raises(NanDetectedError) as exc:
        # log(-1) is the first non-finite result; the later exp never runs
        tg.exp(tg.log(x))
    assert exc.value.kernel_name == "log"
    assert exc.value.code == "NAN_DETECTED"


def test_debug_env_flag(monkeypatch):
    monkeypatch.setenv("TEXGRAD_DEBUG", "1")
    assert Engine().debug
    monkeypatch.setenv("TEXGRAD_DEBUG", "0")
    assert not Engine().debug


def test_debug_log_with_underflowing_epsilon():
    backend = TexSimBackend(profile=F16.with_epsilon(1e-8))
    ENGINE.set_backend(backend)
    with ENGINE.debug_mode():
        with pytest.raises(NanDetectedError) as exc:
            tg.log(tg.tensor([0.0, 1.0]))
    assert exc.value.kernel_name == "log"


# registry

def test_backend_priority_and_fallback(monkeypatch):
    monkeypatch.delenv("TEXGRAD_BACKEND", raising=False)
    eng = Engine()
    eng.register_backend("cpu", CpuBackend, priority=1)
    eng.register_backend("texsim", TexSimBackend, priority=2)
    assert eng.backend_name == "texsim"

    def broken():
        raise RuntimeError("no device")

    eng = Engine()
    eng.register_backend("cpu", CpuBackend, priority=1)
    eng.register_backend("gpu", broken, priority=5)
    assert eng.backend_name == "cpu"


def test_removing_non_cpu_backends_keeps_results(monkeypatch):
    monkeypatch.delenv("TEXGRAD_BACKEND", raising=False)
    eng = Engine()
    eng.register_backend("cpu", CpuBackend, priority=1)
    eng.register_backend("texsim", TexSimBackend, priority=2)
    a = eng.make_tensor(np.array([1, 2, 3], np.float32))
    ref = eng.read(eng.run_kernel("sigmoid", [a]))
    eng.remove_backend("texsim")
    assert eng.backend_name == "cpu"
    b = eng.make_tensor(np.array([1, 2, 3], np.float32))
    assert np.array_equal(eng.read(eng.run_kernel("sigmoid", [b])), ref)


def test_env_forces_backend(monkeypatch):
    monkeypatch.setenv("TEXGRAD_BACKEND", "cpu")
    eng = Engine()
    eng.register_backend("cpu", CpuBackend, priority=1)
    eng.register_backend("texsim", TexSimBackend, priority=2)
    assert eng.backend_name == "cpu"


def test_tensor_migrates_between_backends():
    ENGINE.set_backend("cpu")
    t = tg.tensor([1.0, 2.0])
    ENGINE.set_backend(TexSimBackend())
    assert tg.add(t, t).numpy().tolist() == [2, 4]


# time / profile

def test_time_zero_ops_and_upload_only(texsim):
    assert tg.time(lambda: None).kernel_ms == 0
    info = tg.time(lambda: tg.tensor([1.0, 2.0]))
    assert info.kernel_ms == 0 and info.kernels == []


def test_time_one_add(texsim):
    a = tg.tensor([1.0, 2.0])
    info = tg.time(lambda: tg.add(a, a))
    assert len(info.kernels) == 1 and info.kernels[0].name == "add"
    assert info.kernel_ms >= 0 and info.kernels[0].elapsed_ms is not None


def test_profile_counts(cpu):
    res = tg.profile(lambda: tg.tensor([[1.0, 2.0], [3.0, 4.0]]))
    assert res.new_tensors == 1 and res.new_bytes == 16

    def churn():
        ts = [tg.tensor([float(i)]) for i in range(10)]
        tg.dispose(ts)

    res = tg.profile(churn)
    assert res.new_tensors == 0 and res.peak_tensors >= 10


def test_profile_tidy_chain(texsim):
    x = tg.tensor([1.0, 2.0])

    def chain():
        y = x
        for _ in range(5):
            y = tg.add(y, x)
        return y

    res = tg.profile(lambda: tg.tidy(chain))
    assert res.peak_tensors >= 5 and res.new_tensors == 1
    assert [k.name for k in res.kernels] == ["add"] * 5
    assert res.peak_bytes >= res.new_bytes


# async readback

def test_async_data(texsim):
    a = tg.tensor([1.0, 2.0])
    y = tg.exp(a)
    handle = y.data()
    assert not handle.ready
    values = asyncio.run(_await(handle))
    assert np.allclose(values, np.exp([1, 2]))


async def _await(handle):
    return await handle
