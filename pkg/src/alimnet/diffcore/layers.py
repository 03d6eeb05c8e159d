"""Layer objects holding named parameter tensors, and a sequential container."""
from __future__ import annotations

from collections import OrderedDict
from typing import Iterable, List, Optional, Tuple

import numpy as np

from ..exceptions import InvalidInputError, ShapeError
from . import functional as F
from .tensor import Tensor


def glorot_uniform(rng: np.random.Generator, shape, fan_in: int, fan_out: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


def _check_activation(name):
    if name not in F.ACTIVATIONS:
        raise InvalidInputError(f"unknown activation {name!r}; choose from {sorted(F.ACTIVATIONS)}")


class Layer:
    """Base layer. ``params`` maps role names (``kernel``, ``bias``, ...) to
    tensors; roles listed in ``frozen`` are state, not optimizer targets."""

    kind = "layer"
    frozen: Tuple[str, ...] = ()

    def __init__(self):
        self.params: "OrderedDict[str, Tensor]" = OrderedDict()

    def forward(self, x, training: bool = False, rng=None, update_stats: bool = True):
        raise NotImplementedError

    def output_shape(self, input_shape):
        return tuple(input_shape)

    def param_count(self) -> int:
        return int(sum(t.size for t in self.params.values()))

    def trainable(self) -> "OrderedDict[str, Tensor]":
        return OrderedDict((k, v) for k, v in self.params.items() if k not in self.frozen)

    def describe(self) -> str:
        return self.kind


class Dense(Layer):
    kind = "dense"

    def __init__(self, in_features: int, units: int, rng: np.random.Generator,
                 activation: str = "linear"):
        super().__init__()
        _check_activation(activation)
        self.in_features, self.units, self.activation = in_features, units, activation
        self.params["kernel"] = Tensor(glorot_uniform(rng, (in_features, units), in_features, units),
                                       requires_grad=True)
        self.params["bias"] = Tensor(np.zeros(units), requires_grad=True)

    def forward(self, x, training=False, rng=None, update_stats=True):
        return F.activation(F.dense(x, self.params["kernel"], self.params["bias"]), self.activation)

    def output_shape(self, input_shape):
        if input_shape[-1] != self.in_features:
            raise ShapeError(f"dense expects {self.in_features} input features, got shape {input_shape}")
        return tuple(input_shape[:-1]) + (self.units,)

    def describe(self):
        return f"FC ({self.units})"


class Conv2D(Layer):
    kind = "conv2d"

    def __init__(self, in_channels: int, filters: int, rng: np.random.Generator, kernel_size: int = 3,
                 activation: str = "linear"):
        super().__init__()
        _check_activation(activation)
        self.in_channels, self.filters, self.kernel_size = in_channels, filters, kernel_size
        self.activation = activation
        k = kernel_size
        self.params["kernel"] = Tensor(
            glorot_uniform(rng, (k, k, in_channels, filters), k * k * in_channels, k * k * filters),
            requires_grad=True)
        self.params["bias"] = Tensor(np.zeros(filters), requires_grad=True)

    def forward(self, x, training=False, rng=None, update_stats=True):
        return F.activation(F.conv2d_same(x, self.params["kernel"], self.params["bias"]), self.activation)

    def output_shape(self, input_shape):
        if input_shape[-1] != self.in_channels:
            raise ShapeError(f"conv2d expects {self.in_channels} channels, got shape {input_shape}")
        return tuple(input_shape[:-1]) + (self.filters,)

    def describe(self):
        return f"2D Convolution ({self.kernel_size}*{self.kernel_size})({self.filters})"


class BatchNorm(Layer):
    """Batch normalization. Moving mean/variance are stored as parameters so
    they are checkpointed and counted (4 per channel), but never optimized."""

    kind = "batchnorm"
    frozen = ("moving_mean", "moving_var")

    def __init__(self, channels: int, momentum: float = 0.8, epsilon: float = 1e-5):
        super().__init__()
        self.channels, self.momentum, self.epsilon = channels, momentum, epsilon
        self.params["gamma"] = Tensor(np.ones(channels), requires_grad=True)
        self.params["beta"] = Tensor(np.zeros(channels), requires_grad=True)
        self.params["moving_mean"] = Tensor(np.zeros(channels))
        self.params["moving_var"] = Tensor(np.ones(channels))

    def forward(self, x, training=False, rng=None, update_stats=True):
        p = self.params
        return F.batchnorm(x, p["gamma"], p["beta"], p["moving_mean"].data, p["moving_var"].data,
                           training=training, momentum=self.momentum, epsilon=self.epsilon,
                           update_stats=update_stats)

    def describe(self):
        return f"Batch Normalization ({self.momentum:g})"


class Dropout(Layer):
    kind = "dropout"

    def __init__(self, rate: float):
        super().__init__()
        if not 0.0 <= rate < 1.0:
            raise InvalidInputError(f"dropout rate must be in [0, 1), got {rate}")
        self.rate = rate

    def forward(self, x, training=False, rng=None, update_stats=True):
        return F.dropout(x, self.rate, training, rng)

    def describe(self):
        return f"Dropout ({self.rate:g})"


class MaxPool2D(Layer):
    kind = "maxpool2d"

    def __init__(self, size: int = 2):
        super().__init__()
        self.size = size

    def forward(self, x, training=False, rng=None, update_stats=True):
        return F.maxpool2d(x, self.size)

    def output_shape(self, input_shape):
        h, w, c = input_shape
        if h % self.size or w % self.size:
            raise ShapeError(f"maxpool2d({self.size}) cannot pool shape {input_shape}")
        return (h // self.size, w // self.size, c)

    def describe(self):
        return f"2D Max Pooling ({self.size}*{self.size})"


class UpSample2D(Layer):
    kind = "upsample2d"

    def __init__(self, size: int = 2):
        super().__init__()
        self.size = size

    def forward(self, x, training=False, rng=None, update_stats=True):
        return F.upsample_nearest(x, self.size)

    def output_shape(self, input_shape):
        h, w, c = input_shape
        return (h * self.size, w * self.size, c)

    def describe(self):
        return f"UpSampling2D ({self.size}*{self.size})"


class Reshape(Layer):
    """Reshape the per-example dimensions (batch axis preserved)."""

    kind = "reshape"

    def __init__(self, target_shape):
        super().__init__()
        self.target_shape = tuple(target_shape)

    def forward(self, x, training=False, rng=None, update_stats=True):
        return F.reshape(x, (x.shape[0],) + self.target_shape)

    def output_shape(self, input_shape):
        if int(np.prod(input_shape)) != int(np.prod(self.target_shape)):
            raise ShapeError(f"cannot reshape {input_shape} to {self.target_shape}")
        return self.target_shape

    def describe(self):
        return "Reshape"


class GRU(Layer):
    """GRU with input and recurrent biases (``3 * ((in + h) * h + 2 * h)`` parameters)."""

    kind = "gru"

    def __init__(self, in_features: int, units: int, rng: np.random.Generator,
                 return_sequence: bool = False):
        super().__init__()
        self.in_features, self.units, self.return_sequence = in_features, units, return_sequence
        self.params["kernel"] = Tensor(
            glorot_uniform(rng, (in_features, 3 * units), in_features, 3 * units), requires_grad=True)
        self.params["recurrent_kernel"] = Tensor(
            glorot_uniform(rng, (units, 3 * units), units, 3 * units), requires_grad=True)
        self.params["bias"] = Tensor(np.zeros((2, 3 * units)), requires_grad=True)

    def forward(self, x, training=False, rng=None, update_stats=True):
        p = self.params
        return F.gru(x, p["kernel"], p["recurrent_kernel"], p["bias"], self.return_sequence)

    def output_shape(self, input_shape):
        steps, features = input_shape
        if features != self.in_features:
            raise ShapeError(f"gru expects {self.in_features} features, got shape {input_shape}")
        return (steps, self.units) if self.return_sequence else (self.units,)

    def describe(self):
        return f"GRU ({self.units})"


class Activation(Layer):
    kind = "activation"

    def __init__(self, function: str):
        super().__init__()
        _check_activation(function)
        self.function = function

    def forward(self, x, training=False, rng=None, update_stats=True):
        return F.activation(x, self.function)

    def describe(self):
        return f"Activation ({self.function})"


class Network:
    """Ordered stack of named layers.

    Parameter tensors are addressed as ``<prefix>.<layer>.<role>``, e.g.
    ``d.conv1.kernel``.
    """

    def __init__(self, layers: Iterable[Tuple[str, Layer]] = (), prefix: str = "",
                 input_shape: Optional[tuple] = None):
        self.layers: "OrderedDict[str, Layer]" = OrderedDict()
        self.prefix = prefix
        self.input_shape = tuple(input_shape) if input_shape is not None else None
        for name, layer in layers:
            self.add(name, layer)

    def add(self, name: str, layer: Layer) -> "Network":
        if name in self.layers:
            raise InvalidInputError(f"duplicate layer name {name!r}")
        self.layers[name] = layer
        return self

    def __len__(self):
        return len(self.layers)

    def __iter__(self):
        return iter(self.layers.items())

    def __getitem__(self, name) -> Layer:
        return self.layers[name]

    def forward(self, x, training: bool = False, rng=None, update_stats: bool = True):
        for layer in self.layers.values():
            x = layer.forward(x, training=training, rng=rng, update_stats=update_stats)
        return x

    __call__ = forward

    def _qualified(self, layer_name: str, role: str) -> str:
        return ".".join(p for p in (self.prefix, layer_name, role) if p)

    def named_parameters(self, trainable_only: bool = False) -> "OrderedDict[str, Tensor]":
        out = OrderedDict()
        for lname, layer in self.layers.items():
            params = layer.trainable() if trainable_only else layer.params
            for role, tensor in params.items():
                out[self._qualified(lname, role)] = tensor
        return out

    def param_count(self) -> int:
        return sum(layer.param_count() for layer in self.layers.values())

    def shape_trace(self, input_shape=None) -> List[Tuple[str, tuple]]:
        shape = tuple(input_shape if input_shape is not None else self.input_shape)
        trace = []
        for name, layer in self.layers.items():
            shape = layer.output_shape(shape)
            trace.append((name, shape))
        return trace

    def state_dict(self) -> "OrderedDict[str, np.ndarray]":
        return OrderedDict((k, v.data.copy()) for k, v in self.named_parameters().items())

    def load_state_dict(self, state, strict: bool = True):
        params = self.named_parameters()
        missing = [k for k in params if k not in state]
        if strict and missing:
            raise InvalidInputError(f"checkpoint is missing tensors: {', '.join(missing)}")
        for key, tensor in params.items():
            if key not in state:
                continue
            value = np.asarray(state[key], dtype=tensor.data.dtype)
            if value.shape != tensor.shape:
                raise ShapeError(f"{key}: checkpoint shape {value.shape} != parameter shape {tensor.shape}")
            tensor.data[...] = value

    def zero_grad(self):
        for tensor in self.named_parameters().values():
            tensor.grad = None
