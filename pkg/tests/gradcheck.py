"""Finite-difference gradient checks shared by the gradient and acceptance tests.

Each case pairs a texgrad forward function with an independent float64 numpy
oracle.  The scalar objective is ``sum(op(inputs) * weights)`` so that the
upstream gradient is not uniform.
"""
from __future__ import annotations

import numpy as np

import texgrad as tg
from texgrad.engine import ENGINE

STEP = 1e-3
TOLERANCE = 1e-3


def _shape(rng, rank_max=3, dim_max=4):
    return tuple(int(d) for d in rng.integers(1, dim_max + 1, int(rng.integers(1, rank_max + 1))))


def _away_from_zero(rng, shape, low=0.05):
    mag = rng.uniform(low, 2.0, shape)
    return mag * rng.choice([-1.0, 1.0], shape)


def _case(op, rng):
    """Return (inputs, texgrad_fn, numpy_fn) for one random trial."""
    u = lambda shape: rng.uniform(-2, 2, shape)
    s = _shape(rng)
    if op == "neg":
        return [u(s)], tg.neg, np.negative
    if op == "exp":
        return [u(s)], tg.exp, np.exp
    if op == "log":
        return [rng.uniform(0.1, 2.0, s)], tg.log, lambda x: np.log(x + 1e-8)
    if op == "relu":
        return [_away_from_zero(rng, s)], tg.relu, lambda x: np.maximum(x, 0)
    if op == "sigmoid":
        return [u(s)], tg.sigmoid, lambda x: 1 / (1 + np.exp(-x))
    if op == "square":
        return [u(s)], tg.square, np.square
    if op == "step":
        return [_away_from_zero(rng, s)], lambda x: ENGINE.run_kernel("step", [x]), \
            lambda x: (x > 0).astype(np.float64)
    if op in ("add", "sub", "mul", "div"):
        other = tuple(d if rng.random() < 0.7 else 1 for d in s)[int(rng.integers(0, len(s))):]
        b = _away_from_zero(rng, other, 0.25) if op == "div" else u(other)
        fns = {"add": (tg.add, np.add), "sub": (tg.sub, np.subtract),
               "mul": (tg.mul, np.multiply), "div": (tg.div, np.divide)}[op]
        return [u(s), b], *fns
    if op == "matmul":
        m, n, p = (int(v) for v in rng.integers(1, 6, 3))
        return [u((m, n)), u((n, p))], tg.matmul, np.matmul
    if op in ("sum", "mean"):
        axes = sorted({int(a) for a in rng.integers(0, len(s), int(rng.integers(1, len(s) + 1)))})
        t_fn = (lambda x: tg.sum(x, axes)) if op == "sum" else (lambda x: tg.mean(x, axes))
        n_fn = (lambda x: x.sum(axis=tuple(axes))) if op == "sum" else (lambda x: x.mean(axis=tuple(axes)))
        return [u(s)], t_fn, n_fn
    if op == "transpose":
        perm = [int(v) for v in rng.permutation(len(s))]
        return [u(s)], lambda x: tg.transpose(x, perm), lambda x: np.transpose(x, perm)
    if op == "slice":
        begin = [int(rng.integers(0, d)) for d in s]
        size = [int(rng.integers(1, d - b + 1)) for d, b in zip(s, begin)]
        idx = tuple(np.s_[b:b + z] for b, z in zip(begin, size))
        return [u(s)], lambda x: tg.slice(x, begin, size), lambda x: x[idx]
    if op == "concat":
        axis = int(rng.integers(0, len(s)))
        s2 = list(s)
        s2[axis] = int(rng.integers(1, 4))
        return [u(s), u(tuple(s2))], lambda a, b: tg.concat([a, b], axis), \
            lambda a, b: np.concatenate([a, b], axis)
    if op == "reshape":
        flat = int(np.prod(s))
        return [u(s)], lambda x: tg.reshape(x, [flat]), lambda x: x.reshape(flat)
    if op == "clone":
        return [u(s)], tg.clone, lambda x: x.copy()
    raise KeyError(op)


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    diff = np.linalg.norm(analytic - numeric)
    scale = np.linalg.norm(numeric)
    if scale == 0:
        return float(diff)
    return float(diff / scale)


def check_once(op: str, rng: np.random.Generator) -> float:
    """Worst relative error across the inputs of one random trial."""
    inputs, t_fn, n_fn = _case(op, rng)
    inputs = [np.asarray(x, np.float32).astype(np.float64) for x in inputs]
    out_shape = np.shape(n_fn(*inputs))
    weights = rng.uniform(-1, 1, out_shape).astype(np.float32).astype(np.float64)

    def objective(*xs):
        return float(np.sum(n_fn(*xs) * weights))

    def run():
        ts = [tg.tensor(x.astype(np.float32)) for x in inputs]
        w = tg.tensor(weights.astype(np.float32))
        _, grads = tg.value_and_grads(lambda *a: tg.sum(tg.mul(t_fn(*a), w)), ts)
        return [g.numpy().astype(np.float64) for g in grads]

    analytic = tg.tidy(run)
    worst = 0.0
    for i, x in enumerate(inputs):
        numeric = np.zeros_like(x)
        for idx in np.ndindex(x.shape):
            plus = [v.copy() for v in inputs]
            minus = [v.copy() for v in inputs]
            plus[i][idx] += STEP
            minus[i][idx] -= STEP
            numeric[idx] = (objective(*plus) - objective(*minus)) / (2 * STEP)
        worst = max(worst, relative_error(analytic[i], numeric))
    return worst
