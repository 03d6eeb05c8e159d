"""Central-difference verification of analytic gradients."""
from __future__ import annotations

from typing import Callable, Optional, Sequence, Union

import numpy as np

from ..exceptions import NumericError, ShapeError
from .tensor import Tensor, no_grad


def gradient_check(op: Callable[..., Tensor], inputs: Union[Tensor, Sequence[Tensor]],
                   eps: float = 1e-3, max_coords: Optional[int] = None, seed: int = 0,
                   refine_kinks: bool = False, return_refined: bool = False):
    """Max over coordinates of ``|analytic - numeric| / max(1, |analytic|, |numeric|)``.

    ``op(*inputs)`` must return a scalar tensor and be deterministic (re-seed
    any dropout inside ``op``). With ``max_coords`` only that many randomly
    chosen coordinates per input are probed.

    A piecewise-linear op (relu, max-pool) can switch branch inside
    ``[x - eps, x + eps]``; the central difference then averages two slopes
    and measures no derivative at all. With ``refine_kinks`` a coordinate whose
    estimate at ``eps`` disagrees with the one at ``eps / 10`` is re-probed at
    shrinking steps (down to ``eps * 1e-4``) until two successive estimates
    agree. Every coordinate is still compared; ``return_refined`` also returns
    how many needed a smaller step.
    """
    single = isinstance(inputs, Tensor)
    inputs = [inputs] if single else list(inputs)
    for t in inputs:
        t.requires_grad = True
        t.grad = None
    out = op(*inputs)
    if out.size != 1:
        raise ShapeError(f"gradient_check needs a scalar-valued op, got shape {out.shape}")
    if not np.isfinite(out.data).all():
        raise NumericError("op returned a non-finite value")
    out.backward()
    analytic = [np.zeros_like(t.data) if t.grad is None else t.grad.copy() for t in inputs]

    rng = np.random.default_rng(seed)
    worst = 0.0
    refined = 0
    with no_grad():
        for t, grad in zip(inputs, analytic):
            flat = t.data.reshape(-1)
            coords = np.arange(flat.size)
            if max_coords is not None and flat.size > max_coords:
                coords = rng.choice(flat.size, size=max_coords, replace=False)
            for i in coords:
                numeric = _central(op, inputs, flat, i, eps)
                if refine_kinks:
                    step, finer = eps / 10, _central(op, inputs, flat, i, eps / 10)
                    if _rel(numeric, finer) > KINK_AGREEMENT:
                        refined += 1
                        while step > eps * 1e-4 and _rel(numeric, finer) > KINK_AGREEMENT:
                            step /= 10
                            numeric, finer = finer, _central(op, inputs, flat, i, step)
                        numeric = finer
                a = grad.reshape(-1)[i]
                if not (np.isfinite(numeric) and np.isfinite(a)):
                    raise NumericError(f"non-finite gradient at coordinate {i} of {t}")
                worst = max(worst, _rel(a, numeric))
    return (worst, refined) if return_refined else worst


# Relative disagreement between step sizes that marks a branch switch.
KINK_AGREEMENT = 1e-5


def _rel(a: float, b: float) -> float:
    return abs(a - b) / max(1.0, abs(a), abs(b))


def _central(op, inputs, flat, i, step) -> float:
    orig = flat[i]
    flat[i] = orig + step
    plus = float(op(*inputs).data)
    flat[i] = orig - step
    minus = float(op(*inputs).data)
    flat[i] = orig
    return (plus - minus) / (2.0 * step)
