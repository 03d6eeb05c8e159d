"""Differentiable primitives and layer kernels.

Image tensors are channels-last, ``(batch, height, width, channels)``;
sequences are ``(batch, time, features)``.
"""
from __future__ import annotations

import numpy as np

from ..exceptions import InvalidInputError, ShapeError
from .tensor import DTYPE, Tensor, as_tensor, make_node


def _unbroadcast(grad: np.ndarray, shape) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


# -- elementwise arithmetic ----------------------------------------------------

def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    return make_node(a.data + b.data, (a, b),
                     lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)
    return make_node(a.data - b.data, (a, b),
                     lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    return make_node(a.data * b.data, (a, b),
                     lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)))


def div(a, b):
    a, b = as_tensor(a), as_tensor(b)
    return make_node(a.data / b.data, (a, b),
                     lambda g: (_unbroadcast(g / b.data, a.shape),
                                _unbroadcast(-g * a.data / b.data**2, b.shape)))


def matmul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    if a.shape[-1] != b.shape[0 if b.ndim == 1 else -2]:
        raise ShapeError(f"matmul shape mismatch: {a.shape} @ {b.shape}")

    def backward(g):
        if a.ndim == 1 and b.ndim == 1:
            return g * b.data, g * a.data
        # Promote 1-D operands to matrices so both products are well defined.
        a2 = a.data[None, :] if a.ndim == 1 else a.data
        b2 = b.data[:, None] if b.ndim == 1 else b.data
        g2 = g
        if a.ndim == 1:
            g2 = np.expand_dims(g2, -2)
        if b.ndim == 1:
            g2 = np.expand_dims(g2, -1)
        ga = g2 @ np.swapaxes(b2, -1, -2)
        gb = np.swapaxes(a2, -1, -2) @ g2
        ga = ga.reshape(ga.shape[:-2] + (a.shape[-1],)) if a.ndim == 1 else ga
        gb = gb[..., 0] if b.ndim == 1 else gb
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return make_node(a.data @ b.data, (a, b), backward)


def exp(x):
    x = as_tensor(x)
    out = np.exp(x.data)
    return make_node(out, (x,), lambda g: (g * out,))


def log(x):
    x = as_tensor(x)
    return make_node(np.log(x.data), (x,), lambda g: (g / x.data,))


def clip(x, low, high):
    """Clamp; gradient passes only where the input is strictly inside the range."""
    x = as_tensor(x)
    inside = (x.data > low) & (x.data < high)
    return make_node(np.clip(x.data, low, high), (x,), lambda g: (g * inside,))


# -- shape manipulation --------------------------------------------------------

def reshape(x, shape):
    x = as_tensor(x)
    try:
        out = x.data.reshape(shape)
    except ValueError as exc:
        raise ShapeError(f"cannot reshape {x.shape} to {tuple(shape)}") from exc
    return make_node(out, (x,), lambda g: (g.reshape(x.shape),))


def getitem(x, index):
    x = as_tensor(x)

    parts = index if isinstance(index, tuple) else (index,)
    fancy = any(isinstance(p, (list, np.ndarray)) for p in parts)

    def backward(g):
        full = np.zeros_like(x.data)
        if fancy:
            np.add.at(full, index, g)
        else:
            full[index] += g
        return (full,)

    return make_node(x.data[index], (x,), backward)


def take_along_last(x, labels):
    """``x[i, labels[i]]`` for a 2-D ``x``."""
    x = as_tensor(x)
    labels = np.asarray(labels, dtype=np.intp)
    rows = np.arange(x.shape[0])
    return getitem(x, (rows, labels))


def stack(tensors, axis=0):
    tensors = [as_tensor(t) for t in tensors]
    out = np.stack([t.data for t in tensors], axis=axis)
    return make_node(out, tensors,
                     lambda g: tuple(np.moveaxis(g, axis, 0)))


def concat(tensors, axis=-1):
    tensors = [as_tensor(t) for t in tensors]
    out = np.concatenate([t.data for t in tensors], axis=axis)
    edges = np.cumsum([t.shape[axis] for t in tensors])[:-1]
    return make_node(out, tensors, lambda g: tuple(np.split(g, edges, axis=axis)))


def sum(x, axis=None, keepdims=False):
    x = as_tensor(x)
    out = x.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape).copy(),)

    return make_node(out, (x,), backward)


def mean(x, axis=None, keepdims=False):
    x = as_tensor(x)
    count = x.data.size if axis is None else np.prod([x.shape[a] for a in np.atleast_1d(axis)])
    return mul(sum(x, axis=axis, keepdims=keepdims), 1.0 / count)


# -- activations ---------------------------------------------------------------

def _sigmoid(v):
    out = np.empty_like(v)
    pos = v >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-v[pos]))
    e = np.exp(v[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def sigmoid(x):
    x = as_tensor(x)
    out = _sigmoid(x.data)
    return make_node(out, (x,), lambda g: (g * out * (1.0 - out),))


def tanh(x):
    x = as_tensor(x)
    out = np.tanh(x.data)
    return make_node(out, (x,), lambda g: (g * (1.0 - out**2),))


def relu(x):
    x = as_tensor(x)
    mask = x.data > 0
    return make_node(x.data * mask, (x,), lambda g: (g * mask,))


def leaky_relu(x, slope=0.2):
    x = as_tensor(x)
    scale = np.where(x.data > 0, 1.0, slope)
    return make_node(x.data * scale, (x,), lambda g: (g * scale,))


def softmax(x):
    x = as_tensor(x)
    shifted = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=-1, keepdims=True)
    return make_node(out, (x,),
                     lambda g: (out * (g - (g * out).sum(axis=-1, keepdims=True)),))


ACTIVATIONS = {
    "sigmoid": sigmoid,
    "tanh": tanh,
    "relu": relu,
    "leaky_relu": leaky_relu,
    "softmax": softmax,
    "linear": lambda x: x,
}


def activation(x, kind: str):
    try:
        fn = ACTIVATIONS[kind]
    except KeyError:
        raise InvalidInputError(f"unknown activation {kind!r}; choose from {sorted(ACTIVATIONS)}") from None
    return fn(x)


# -- layer kernels ---------------------------------------------------------------

def dense(x, kernel, bias):
    x, kernel, bias = as_tensor(x), as_tensor(kernel), as_tensor(bias)
    if x.shape[-1] != kernel.shape[0]:
        raise ShapeError(f"dense input has {x.shape[-1]} features (shape {x.shape}), "
                         f"kernel expects {kernel.shape[0]} (shape {kernel.shape})")
    return add(matmul(x, kernel), bias)


def conv2d_same(x, kernel, bias):
    """Stride-1, zero 'same'-padded 2-D convolution (cross-correlation).

    ``x``: (N, H, W, Cin); ``kernel``: (kh, kw, Cin, Cout) with odd kh, kw.
    """
    x, kernel, bias = as_tensor(x), as_tensor(kernel), as_tensor(bias)
    if x.ndim != 4:
        raise ShapeError(f"conv2d expects (N, H, W, C) input, got shape {x.shape}")
    kh, kw, cin, cout = kernel.shape
    if x.shape[-1] != cin:
        raise ShapeError(f"conv2d channel mismatch: input {x.shape} vs kernel {kernel.shape}")
    n, h, w, _ = x.shape
    ph, pw = kh // 2, kw // 2
    hp, wp = h + 2 * ph, w + 2 * pw
    # Work on the flattened padded grid: output pixel p reads input pixel
    # p + i*wp + j for tap (i, j), so every tap is one contiguous 2-D matmul.
    xp = np.pad(x.data, ((0, 0), (ph, ph), (pw, pw), (0, 0))).reshape(-1, cin)
    offsets = [(i, j, i * wp + j) for i in range(kh) for j in range(kw)]
    span = xp.shape[0] - offsets[-1][2]
    acc = np.zeros((n * hp * wp, cout), dtype=DTYPE)
    for i, j, off in offsets:
        acc[:span] += xp[off:off + span] @ kernel.data[i, j]
    out = acc.reshape(n, hp, wp, cout)[:, :h, :w, :] + bias.data

    def backward(g):
        gp = np.zeros((n, hp, wp, cout), dtype=DTYPE)
        gp[:, :h, :w, :] = g
        gp = gp.reshape(-1, cout)[:span]
        gk = np.empty_like(kernel.data)
        gxp = np.zeros_like(xp)
        for i, j, off in offsets:
            gk[i, j] = xp[off:off + span].T @ gp
            gxp[off:off + span] += gp @ kernel.data[i, j].T
        gx = gxp.reshape(n, hp, wp, cin)[:, ph:ph + h, pw:pw + w, :]
        return gx, gk, g.reshape(-1, cout).sum(axis=0).reshape(bias.shape)

    return make_node(out, (x, kernel, bias), backward)


def maxpool2d(x, size=2):
    """Non-overlapping max pooling; ties send the gradient to the first
    maximal element in row-major block order."""
    x = as_tensor(x)
    n, h, w, c = x.shape
    if h % size or w % size:
        raise ShapeError(f"maxpool2d({size}) needs spatial dims divisible by {size}, got {x.shape}")
    blocks = x.data.reshape(n, h // size, size, w // size, size, c).transpose(0, 1, 3, 5, 2, 4)
    blocks = blocks.reshape(n, h // size, w // size, c, size * size)
    arg = blocks.argmax(axis=-1)
    out = np.take_along_axis(blocks, arg[..., None], axis=-1)[..., 0]

    def backward(g):
        gb = np.zeros(blocks.shape, dtype=DTYPE)
        np.put_along_axis(gb, arg[..., None], g[..., None], axis=-1)
        gb = gb.reshape(n, h // size, w // size, c, size, size).transpose(0, 1, 4, 2, 5, 3)
        return (gb.reshape(n, h, w, c),)

    return make_node(out, (x,), backward)


def upsample_nearest(x, size=2):
    x = as_tensor(x)
    n, h, w, c = x.shape
    out = np.repeat(np.repeat(x.data, size, axis=1), size, axis=2)

    def backward(g):
        return (g.reshape(n, h, size, w, size, c).sum(axis=(2, 4)),)

    return make_node(out, (x,), backward)


def batchnorm(x, gamma, beta, moving_mean, moving_var, training: bool,
              momentum: float = 0.8, epsilon: float = 1e-5, update_stats: bool = True):
    """Batch normalization over every axis but the last.

    In training mode uses batch statistics (biased variance) and, when
    ``update_stats``, blends them into the moving statistics as
    ``moving = momentum * moving + (1 - momentum) * batch``.
    ``moving_mean`` / ``moving_var`` are plain arrays updated in place.
    """
    x, gamma, beta = as_tensor(x), as_tensor(gamma), as_tensor(beta)
    if x.shape[-1] != gamma.shape[-1]:
        raise ShapeError(f"batchnorm channel mismatch: input {x.shape} vs gamma {gamma.shape}")
    axes = tuple(range(x.ndim - 1))
    count = int(np.prod([x.shape[a] for a in axes]))
    if count == 0:
        raise InvalidInputError("batchnorm on an empty batch")

    if training:
        mu = x.data.mean(axis=axes)
        var = x.data.var(axis=axes)
        if update_stats:
            moving_mean *= momentum
            moving_mean += (1.0 - momentum) * mu
            moving_var *= momentum
            moving_var += (1.0 - momentum) * var
    else:
        mu, var = moving_mean.copy(), moving_var.copy()
    inv_std = 1.0 / np.sqrt(var + epsilon)
    xhat = (x.data - mu) * inv_std
    out = gamma.data * xhat + beta.data

    def backward(g):
        ggamma = (g * xhat).sum(axis=axes)
        gbeta = g.sum(axis=axes)
        gxhat = g * gamma.data
        if training:
            gx = inv_std / count * (count * gxhat - gxhat.sum(axis=axes) - xhat * (gxhat * xhat).sum(axis=axes))
        else:
            gx = gxhat * inv_std
        return gx, ggamma, gbeta

    return make_node(out, (x, gamma, beta), backward)


def dropout(x, rate: float, training: bool, rng: np.random.Generator = None):
    """Inverted dropout: zero with probability ``rate``, scale survivors by ``1/(1-rate)``."""
    x = as_tensor(x)
    if not 0.0 <= rate < 1.0:
        raise InvalidInputError(f"dropout rate must be in [0, 1), got {rate}")
    if not training or rate == 0.0:
        return x
    if rng is None:
        raise InvalidInputError("training-mode dropout needs a random generator")
    keep = (rng.random(x.shape) >= rate) / (1.0 - rate)
    return mul(x, keep)


def gru(x, kernel, recurrent_kernel, bias, return_sequence: bool):
    """GRU with separate input and recurrent biases (reset gate applied after
    the recurrent matmul). Gate column order is (update, reset, candidate).

    ``x``: (N, T, in); ``kernel``: (in, 3h); ``recurrent_kernel``: (h, 3h);
    ``bias``: (2, 3h) with row 0 the input bias and row 1 the recurrent bias.
    """
    x = as_tensor(x)
    if x.ndim != 3:
        raise ShapeError(f"gru expects (N, T, features) input, got shape {x.shape}")
    if x.shape[-1] != kernel.shape[0]:
        raise ShapeError(f"gru input has {x.shape[-1]} features, kernel expects {kernel.shape[0]}")
    n, steps, _ = x.shape
    units = recurrent_kernel.shape[0]
    projected = add(matmul(x, kernel), bias[0])
    h = Tensor(np.zeros((n, units)))
    outputs = []
    for t in range(steps):
        xt = projected[:, t, :]
        ht = add(matmul(h, recurrent_kernel), bias[1])
        z = sigmoid(add(xt[:, :units], ht[:, :units]))
        r = sigmoid(add(xt[:, units:2 * units], ht[:, units:2 * units]))
        candidate = tanh(add(xt[:, 2 * units:], mul(r, ht[:, 2 * units:])))
        h = add(mul(z, h), mul(sub(1.0, z), candidate))
        outputs.append(h)
    if return_sequence:
        return stack(outputs, axis=1)
    return h
