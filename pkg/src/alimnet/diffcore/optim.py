"""Adam with bias correction."""
from __future__ import annotations

from collections import OrderedDict
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from ..exceptions import NumericError
from .tensor import Tensor


@dataclass
class AdamState:
    step: int = 0
    m: "OrderedDict[str, np.ndarray]" = field(default_factory=OrderedDict)
    v: "OrderedDict[str, np.ndarray]" = field(default_factory=OrderedDict)


def adam_step(params: Mapping[str, Tensor], grads: Mapping[str, np.ndarray], state: AdamState,
              lr: float, beta1: float = 0.5, beta2: float = 0.999, eps: float = 1e-8) -> AdamState:
    """Apply one Adam update in place; parameters without a gradient get a zero gradient.

    Raises :class:`NumericError` naming the first parameter whose gradient is
    not finite, before any parameter is modified.
    """
    for name in params:
        g = grads.get(name)
        if g is not None and not np.all(np.isfinite(g)):
            raise NumericError(f"non-finite gradient for parameter {name!r}")
    state.step += 1
    t = state.step
    c1 = 1.0 - beta1**t
    c2 = 1.0 - beta2**t
    for name, tensor in params.items():
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(tensor.data)
        m = state.m.get(name)
        v = state.v.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(tensor.data)
            v = state.v[name] = np.zeros_like(tensor.data)
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        tensor.data -= lr * (m / c1) / (np.sqrt(v / c2) + eps)
    return state


class Adam:
    def __init__(self, params: Mapping[str, Tensor], lr: float = 2e-4, beta1: float = 0.5,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.params = OrderedDict(params)
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.state = AdamState()

    def zero_grad(self):
        for tensor in self.params.values():
            tensor.grad = None

    def step(self):
        grads = {name: t.grad for name, t in self.params.items() if t.grad is not None}
        adam_step(self.params, grads, self.state, self.lr, self.beta1, self.beta2, self.eps)

    def state_dict(self, prefix: str) -> "OrderedDict[str, np.ndarray]":
        out = OrderedDict()
        out[f"{prefix}.step"] = np.array([self.state.step], dtype=np.float64)
        for name in self.params:
            if name in self.state.m:
                out[f"{prefix}.m.{name}"] = self.state.m[name]
                out[f"{prefix}.v.{name}"] = self.state.v[name]
        return out

    def load_state_dict(self, state: Mapping[str, np.ndarray], prefix: str):
        key = f"{prefix}.step"
        if key in state:
            self.state.step = int(np.asarray(state[key]).ravel()[0])
        for name in self.params:
            if f"{prefix}.m.{name}" in state:
                self.state.m[name] = np.array(state[f"{prefix}.m.{name}"], dtype=np.float64)
                self.state.v[name] = np.array(state[f"{prefix}.v.{name}"], dtype=np.float64)
