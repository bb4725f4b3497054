import numpy as np
import pytest

from texgrad import kernels as K
from texgrad import parity
from texgrad.backends.cpu import CpuBackend
from texgrad.texsim.backend import TexSimBackend


def test_deviation_metric():
    ref = np.array([1.0, 100.0, 0.001, np.nan], np.float32)
    got = np.array([1.0, 101.0, 0.002, np.nan], np.float32)
    assert parity.deviation(got, ref) == pytest.approx(0.01, rel=1e-5)
    assert parity.deviation(ref, ref) == 0
    assert parity.deviation(np.zeros(2), np.zeros(3)) == np.inf
    assert parity.deviation(np.array([np.inf]), np.array([np.inf])) == 0


@pytest.mark.parametrize("kernel", parity.PARITY_KERNELS)
def test_cases_respect_bounds(kernel):
    rng = np.random.default_rng(2)
    for _ in range(30):
        inputs, _ = parity.generate_case(kernel, rng)
        for x in inputs:
            assert x.size <= parity.MAX_ELEMENTS and x.dtype == np.float32
            assert np.all(np.abs(x) <= parity.VALUE_RANGE)


def test_small_parity_run_passes():
    report = parity.run_parity(trials=4, seed=5)
    assert report.passed, report.failing
    exact = {k.kernel: k for k in report.kernels if k.exact}
    assert set(exact) == set(parity.EXACT_KERNELS)
    assert all(k.max_deviation == 0 for k in exact.values())


def test_f16_parity_run_passes():
    report = parity.run_parity(trials=3, seed=1, profile="f16", kernels=("add", "matmul", "log", "mean"))
    assert report.passed and all(k.tolerance == 1e-2 for k in report.kernels)


def test_reshape_case_feeds_relayout():
    rng = np.random.default_rng(0)
    inputs, attrs = parity.generate_case("reshape", rng)
    ref = parity.run_on(CpuBackend(), "reshape", inputs, attrs)
    got = parity.run_on(TexSimBackend(packing="packed"), "reshape", inputs, attrs)
    assert np.array_equal(np.ravel(ref), -inputs[0].ravel())
    assert got.tobytes() == ref.tobytes()


def test_failures_are_reported(monkeypatch):
    real = parity.run_on

    def skewed(backend, kernel, inputs, attrs):
        out = real(backend, kernel, inputs, attrs)
        return out * 1.001 if isinstance(backend, TexSimBackend) and backend.packing == "single" else out

    monkeypatch.setattr(parity, "run_on", skewed)
    report = parity.run_parity(trials=2, seed=0, kernels=("exp",))
    assert not report.passed and report.failing == ["exp"]
    assert report.kernels[0].packed_mismatches == 2
