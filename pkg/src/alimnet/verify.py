"""Gradient verification suite: central-difference checks for every layer
type and for both adversarial objectives on miniature networks."""
from __future__ import annotations

from typing import Callable, Dict, List, NamedTuple, Optional

import numpy as np

from .diffcore import functional as F
from .diffcore.gradcheck import gradient_check
from .diffcore.layers import GRU, BatchNorm, Conv2D, Dense, Dropout, MaxPool2D, Reshape, UpSample2D
from .diffcore.tensor import Tensor
from .exceptions import InvalidInputError
from .models import MINIATURE, Discriminator, Generator
from .train import generator_objective, loss_class, loss_source

LAYER_TOLERANCE = 1e-4
OBJECTIVE_TOLERANCE = 1e-3
EPS = 1e-3


class CheckResult(NamedTuple):
    name: str
    error: float
    tolerance: float
    refined: int = 0

    @property
    def passed(self) -> bool:
        return bool(self.error < self.tolerance)


def _projected(out: Tensor, seed: int) -> Tensor:
    """Scalar ``sum(out * w)`` with fixed random weights, so every output
    coordinate contributes a distinct amount."""
    w = np.random.default_rng(seed).standard_normal(out.shape)
    return F.sum(F.mul(out, w))


def _layer_check(layer, x_shape, seed=0, training=False, positive=False) -> float:
    rng = np.random.default_rng(seed)
    x = rng.standard_normal(x_shape)
    if positive:
        x = np.abs(x) + 0.5
    x = Tensor(x, requires_grad=True)
    params = list(layer.trainable().values())

    def op(*tensors):
        out = layer.forward(tensors[0], training=training, rng=np.random.default_rng(seed + 1),
                            update_stats=False)
        return _projected(out, seed + 2)

    return gradient_check(op, [x, *params], eps=EPS)


def _activation_check(kind: str, seed=0) -> float:
    x = Tensor(np.random.default_rng(seed).standard_normal((3, 5)), requires_grad=True)
    return gradient_check(lambda t: _projected(F.activation(t, kind), seed + 2), x, eps=EPS)


def _d_objective_check(seed=0):
    d = Discriminator(MINIATURE, seed=seed)
    rng = np.random.default_rng(seed)
    real = rng.uniform(-1, 1, (4, 8, 8))
    fake = rng.uniform(-1, 1, (4, 8, 8))
    y_real, y_fake = rng.integers(0, 7, 4), rng.integers(0, 7, 4)

    def op(*_):
        drop = np.random.default_rng(seed + 1)
        a = d(real, training=True, rng=drop, update_stats=False)
        b = d(fake, training=True, rng=drop, update_stats=False)
        return F.add(loss_source(a.source_prob, b.source_prob),
                     loss_class(a.class_probs, y_real, b.class_probs, y_fake))

    return gradient_check(op, list(d.named_parameters(trainable_only=True).values()), eps=EPS,
                          refine_kinks=True, return_refined=True)


def _g_objective_check(seed=0, generator_sign="acgan_standard"):
    g = Generator(MINIATURE, seed=seed)
    d = Discriminator(MINIATURE, seed=seed + 10)
    rng = np.random.default_rng(seed)
    noise = rng.standard_normal((4, MINIATURE.noise_dim))
    labels = rng.integers(0, 7, 4)

    def op(*_):
        drop = np.random.default_rng(seed + 1)
        fake = g(noise, labels, training=True, rng=drop, update_stats=False)
        out = d(fake, training=True, rng=drop, update_stats=False)
        return generator_objective(out.source_prob, out.class_probs, labels, generator_sign)

    return gradient_check(op, list(g.named_parameters(trainable_only=True).values()), eps=EPS,
                          refine_kinks=True, return_refined=True)


def _checks() -> Dict[str, Callable[[], float]]:
    r = np.random.default_rng(7)
    return {
        "dense": lambda: _layer_check(Dense(4, 3, r, "linear"), (5, 4)),
        "conv2d": lambda: _layer_check(Conv2D(2, 3, r), (2, 5, 6, 2)),
        "maxpool2d": lambda: _layer_check(MaxPool2D(2), (2, 4, 6, 3)),
        "upsample2d": lambda: _layer_check(UpSample2D(2), (2, 3, 2, 2)),
        "batchnorm_train": lambda: _layer_check(BatchNorm(3), (4, 3, 3, 3), training=True),
        "batchnorm_eval": lambda: _layer_check(BatchNorm(3), (4, 3), training=False),
        "dropout": lambda: _layer_check(Dropout(0.3), (4, 6), training=True),
        "reshape": lambda: _layer_check(Reshape((6, 2)), (3, 4, 3)),
        "gru_sequence": lambda: _layer_check(GRU(3, 4, r, return_sequence=True), (2, 5, 3)),
        "gru_last": lambda: _layer_check(GRU(3, 4, r, return_sequence=False), (2, 5, 3)),
        "sigmoid": lambda: _activation_check("sigmoid"),
        "tanh": lambda: _activation_check("tanh"),
        "relu": lambda: _activation_check("relu"),
        "leaky_relu": lambda: _activation_check("leaky_relu"),
        "softmax": lambda: _activation_check("softmax"),
        "discriminator_objective": _d_objective_check,
        "generator_objective": _g_objective_check,
    }


CHECK_NAMES = tuple(_checks())
OBJECTIVES = ("discriminator_objective", "generator_objective")


def run_suite(only: Optional[str] = None) -> List[CheckResult]:
    """Run every check, or just ``only``; returns one result per check."""
    checks = _checks()
    if only is not None:
        if only not in checks:
            raise InvalidInputError(f"unknown check {only!r}; choose from {', '.join(checks)}")
        checks = {only: checks[only]}
    results = []
    for name, fn in checks.items():
        # objectives stack leaky-relu and max-pool kinks, so they re-probe branch switches
        error, refined = (fn(), 0) if name not in OBJECTIVES else fn()
        tolerance = OBJECTIVE_TOLERANCE if name in OBJECTIVES else LAYER_TOLERANCE
        results.append(CheckResult(name, float(error), tolerance, refined))
    return results
