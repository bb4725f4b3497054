"""Sequential models of dense layers with SGD training on mean squared error."""
from __future__ import annotations

import math
from typing import Any, Sequence

import numpy as np

from . import ops
from .engine import ENGINE
from .errors import (MissingInputShapeError, NoLayersError, NotCompiledError, RowMismatchError,
                     ShapeChainMismatchError, ShapeMismatchError, UnsupportedLossError,
                     UnsupportedOptimizerError, InvalidLearningRateError)
from .rng import XorShift128Plus
from .tensor import Tensor, Variable

ACTIVATIONS = ("linear", "relu", "sigmoid")
MSE_NAMES = ("meanSquaredError", "mean_squared_error", "mse")
DEFAULT_LEARNING_RATE = 0.01
DEFAULT_SEED = 42


def _activate(kind: str, x: Tensor) -> Tensor:
    if kind == "relu":
        return ops.relu(x)
    if kind == "sigmoid":
        return ops.sigmoid(x)
    return x


class Dense:
    def __init__(self, units: int, input_dim: int | None = None, input_shape: Sequence[int] | None = None,
                 activation: str | None = None, name: str | None = None):
        if int(units) < 1:
            raise ValueError(f"units must be positive, got {units}")
        if input_shape is not None:
            if len(input_shape) != 1:
                raise ShapeMismatchError(f"dense layers take 1-D input shapes, got {list(input_shape)}")
            input_dim = input_shape[0]
        activation = activation or "linear"
        if activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {activation!r}; expected one of {ACTIVATIONS}")
        self.units = int(units)
        self.input_dim = None if input_dim is None else int(input_dim)
        self.activation = activation
        self.name = name
        self.kernel: Variable | None = None
        self.bias: Variable | None = None

    @property
    def built(self) -> bool:
        return self.kernel is not None

    def build(self, input_dim: int, rng: XorShift128Plus | None) -> None:
        """Glorot-uniform kernel and zero bias; ``rng=None`` leaves the kernel zero."""
        self.input_dim = input_dim
        if rng is None:
            init = np.zeros((input_dim, self.units), np.float32)
        else:
            limit = math.sqrt(6.0 / (input_dim + self.units))
            init = rng.uniform(-limit, limit, input_dim * self.units).reshape(input_dim, self.units)
        self.kernel = ops.variable(np.asarray(init, np.float32), name=f"{self.name}/kernel")
        self.bias = ops.variable(np.zeros(self.units, np.float32), name=f"{self.name}/bias")

    def __call__(self, x: Tensor) -> Tensor:
        return _activate(self.activation, ops.matmul(x, self.kernel) + self.bias)

    @property
    def weights(self) -> list[Variable]:
        return [self.kernel, self.bias]

    def get_config(self) -> dict[str, Any]:
        return {"name": self.name, "units": self.units, "activation": self.activation,
                "input_dim": self.input_dim}

    def dispose(self) -> None:
        for w in self.weights:
            if w is not None:
                w.dispose()


class SGD:
    def __init__(self, learning_rate: float = DEFAULT_LEARNING_RATE):
        lr = float(learning_rate)
        if not (lr > 0 and math.isfinite(lr)):
            raise InvalidLearningRateError(f"learning rate must be a positive finite number, got {learning_rate}")
        self.learning_rate = lr

    def apply(self, variables: Sequence[Variable], grads: Sequence[Tensor]) -> None:
        with ENGINE.phase("update"):
            for v, g in zip(variables, grads):
                v.assign(v - g * self.learning_rate)

    def get_config(self) -> dict[str, Any]:
        return {"class_name": "SGD", "learning_rate": self.learning_rate}


class History(list):
    """Per-epoch training losses."""

    @property
    def loss(self) -> list[float]:
        return list(self)


def mean_squared_error(pred: Tensor, target: Tensor) -> Tensor:
    return ops.mean(ops.square(pred - target))


class Sequential:
    def __init__(self, layers: Sequence[Dense] = (), seed: int = DEFAULT_SEED):
        self.layers: list[Dense] = []
        self.seed = seed
        self._rng = XorShift128Plus(seed)
        self.loss: str | None = None
        self.optimizer: SGD | None = None
        for layer in layers:
            self.add(layer)

    def add(self, layer: Dense, initialize: bool = True) -> None:
        if self.layers:
            prev = self.layers[-1].units
            if layer.input_dim is not None and layer.input_dim != prev:
                raise ShapeChainMismatchError(
                    f"layer expects input dim {layer.input_dim} but the previous layer has {prev} units")
            input_dim = prev
        elif layer.input_dim is None:
            raise MissingInputShapeError("the first layer needs input_dim or input_shape")
        else:
            input_dim = layer.input_dim
        if layer.name is None:
            layer.name = f"dense_{len(self.layers) + 1}"
        layer.build(input_dim, self._rng if initialize else None)
        self.layers.append(layer)

    @property
    def compiled(self) -> bool:
        return self.optimizer is not None

    @property
    def input_dim(self) -> int:
        if not self.layers:
            raise NoLayersError("model has no layers")
        return self.layers[0].input_dim

    @property
    def output_dim(self) -> int:
        return self.layers[-1].units

    @property
    def weights(self) -> list[Variable]:
        return [w for layer in self.layers for w in layer.weights]

    def compile(self, loss: str = "meanSquaredError", optimizer: Any = "sgd",
                learning_rate: float | None = None) -> None:
        if not self.layers:
            raise NoLayersError("add at least one layer before compiling")
        if loss not in MSE_NAMES:
            raise UnsupportedLossError(f"unsupported loss {loss!r}; only meanSquaredError is available")
        if isinstance(optimizer, SGD):
            opt = optimizer if learning_rate is None else SGD(learning_rate)
        elif optimizer == "sgd":
            opt = SGD(DEFAULT_LEARNING_RATE if learning_rate is None else learning_rate)
        else:
            raise UnsupportedOptimizerError(f"unsupported optimizer {optimizer!r}; only sgd is available")
        self.loss = "meanSquaredError"
        self.optimizer = opt

    def _forward(self, x: Tensor) -> Tensor:
        for layer in self.layers:
            x = layer(x)
        return x

    def _check_input(self, x: Tensor) -> None:
        if x.rank != 2 or x.shape[1] != self.input_dim:
            raise ShapeMismatchError(f"expected input of shape [n, {self.input_dim}], got {list(x.shape)}")

    def predict(self, x) -> Tensor:
        if not self.layers:
            raise NoLayersError("model has no layers")
        x = ops._t(x)
        self._check_input(x)
        return ENGINE.tidy(lambda: self._forward(x))

    def evaluate(self, x, y) -> float:
        if not self.compiled:
            raise NotCompiledError("compile the model before evaluate")
        x, y = ops._t(x), ops._t(y)
        self._check_input(x)
        self._check_rows(x, y)
        return float(ENGINE.tidy(lambda: mean_squared_error(self._forward(x), y).item()))

    def _check_rows(self, x: Tensor, y: Tensor) -> None:
        if y.rank != 2 or y.shape[1] != self.output_dim:
            raise ShapeMismatchError(f"expected targets of shape [n, {self.output_dim}], got {list(y.shape)}")
        if x.shape[0] != y.shape[0]:
            raise RowMismatchError(f"x has {x.shape[0]} rows but y has {y.shape[0]}")
        if x.shape[0] < 1:
            raise RowMismatchError("fit needs at least one example")

    def train_step(self, x: Tensor, y: Tensor) -> float:
        """One SGD step on a batch; returns the batch loss before the update."""
        variables = self.weights

        def step():
            loss, grads = ENGINE.gradients(
                lambda *ws: mean_squared_error(self._forward(x), y), variables)
            value = loss.item()
            self.optimizer.apply(variables, grads)
            return value

        return float(ENGINE.tidy(step))

    def fit(self, x, y, epochs: int = 1, batch_size: int | None = None) -> History:
        """Train with in-order mini-batches (full batch by default)."""
        if not self.compiled:
            raise NotCompiledError("compile the model before fit")
        x, y = ops._t(x), ops._t(y)
        self._check_input(x)
        self._check_rows(x, y)
        n = x.shape[0]
        batch = n if batch_size is None else int(batch_size)
        if batch < 1:
            raise ValueError(f"batch_size must be positive, got {batch_size}")
        history = History()
        for _ in range(int(epochs)):
            total = 0.0
            for start in range(0, n, batch):
                size = min(batch, n - start)
                if size == n:
                    loss = self.train_step(x, y)
                else:
                    xb = ops.slice(x, [start, 0], [size, -1])
                    yb = ops.slice(y, [start, 0], [size, -1])
                    loss = self.train_step(xb, yb)
                    xb.dispose()
                    yb.dispose()
                total += loss * size
            history.append(total / n)
        return history

    def get_weights(self) -> list[np.ndarray]:
        return [w.numpy() for w in self.weights]

    def set_weights(self, values: Sequence) -> None:
        weights = self.weights
        if len(values) != len(weights):
            raise ShapeMismatchError(f"expected {len(weights)} weight arrays, got {len(values)}")
        for w, v in zip(weights, values):
            t = ops.tensor(np.asarray(v, np.float32))
            w.assign(t)
            t.dispose()

    def get_config(self) -> dict[str, Any]:
        return {"layers": [{"class_name": "Dense", "config": layer.get_config()} for layer in self.layers]}

    def dispose(self) -> None:
        for layer in self.layers:
            layer.dispose()


def sequential(layers: Sequence[Dense] = (), seed: int = DEFAULT_SEED) -> Sequential:
    return Sequential(layers, seed=seed)


def dense(units: int, input_dim: int | None = None, input_shape: Sequence[int] | None = None,
          activation: str | None = None, name: str | None = None) -> Dense:
    return Dense(units, input_dim=input_dim, input_shape=input_shape, activation=activation, name=name)


def sgd(learning_rate: float = DEFAULT_LEARNING_RATE) -> SGD:
    return SGD(learning_rate)
