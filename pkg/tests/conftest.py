import sys

import numpy as np
import pytest

from texgrad.backends.cpu import CpuBackend
from texgrad.engine import ENGINE
from texgrad.texsim.backend import TexSimBackend


@pytest.fixture(autouse=True)
def _restore_engine():
    prev = ENGINE._active
    debug = ENGINE.debug
    yield
    ENGINE._active = prev
    ENGINE.debug = debug
    assert ENGINE.scope_depth == 0, "a test left a tidy scope open"


@pytest.fixture
def cpu():
    backend = CpuBackend()
    ENGINE.set_backend(backend)
    return backend


@pytest.fixture
def texsim():
    backend = TexSimBackend()
    ENGINE.set_backend(backend)
    return backend


@pytest.fixture(params=["cpu", "texsim", "texsim-packed"])
def any_backend(request):
    if request.param == "cpu":
        backend = CpuBackend()
    elif request.param == "texsim":
        backend = TexSimBackend()
    else:
        backend = TexSimBackend(packing="packed")
    ENGINE.set_backend(backend)
    return backend


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    module = sys.modules.get("test_acceptance")
    lines = sorted(getattr(module, "REPORT_LINES", []), key=lambda l: int(l.split()[2]))
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
