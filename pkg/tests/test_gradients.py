import zlib

import numpy as np
import pytest

import texgrad as tg
from texgrad.ops import DIFFERENTIABLE

from gradcheck import TOLERANCE, check_once

TRIALS = 100


@pytest.mark.parametrize("op", DIFFERENTIABLE)
def test_gradient_matches_finite_differences(cpu, op):
    rng = np.random.default_rng(zlib.crc32(op.encode()))
    worst = max(check_once(op, rng) for _ in range(TRIALS))
    assert worst < TOLERANCE, f"{op}: {worst:.3g}"


@pytest.mark.parametrize("op", ["sigmoid", "matmul", "div", "concat"])
def test_gradients_on_texsim(texsim, op):
    rng = np.random.default_rng(7)
    assert max(check_once(op, rng) for _ in range(10)) < TOLERANCE


def test_broadcast_gradient_reduces_to_input_shape(cpu):
    a, b = tg.ones([2, 3]), tg.ones([3])
    _, (ga, gb) = tg.value_and_grads(lambda x, y: tg.sum(tg.add(x, y)), [a, b])
    assert ga.shape == (2, 3) and gb.shape == (3,)
    assert gb.numpy().tolist() == [2, 2, 2]
