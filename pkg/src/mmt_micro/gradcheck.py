"""Finite-difference gradient checking.

The numeric side is an independent oracle: it only calls the forward
closure, never the tape. Checks are meant to run on float64 tensors so the
central-difference error stays far below the comparison tolerance.
"""

from __future__ import annotations

import numpy as np

from .tensor import Rng, Tape, Tensor, backward, zero_grads


def numeric_gradient(f, t: Tensor, index: tuple, eps: float = 1e-5) -> float:
    """Central finite difference of scalar ``f()`` w.r.t. ``t.data[index]``."""
    original = t.data[index]
    t.data[index] = original + eps
    plus = float(f().data)
    t.data[index] = original - eps
    minus = float(f().data)
    t.data[index] = original
    return (plus - minus) / (2.0 * eps)


def relative_error(analytic: float, numeric: float) -> float:
    return abs(analytic - numeric) / max(abs(numeric), 1.0)


def check_gradients(
    f,
    tensors,
    eps: float = 1e-5,
    samples_per_tensor: int | None = None,
    rng: Rng | None = None,
) -> float:
    """Compare tape gradients of ``f()`` against central differences.

    ``f`` must rebuild the forward pass from the (float64) ``tensors`` on
    every call. Checks every coordinate unless ``samples_per_tensor`` caps
    the number of sampled coordinates per tensor. Returns the worst
    relative error over all checked coordinates.
    """
    tensors = list(tensors)
    zero_grads(tensors)
    with Tape() as tape:
        loss = f()
    backward(loss, tape)
    analytic = [np.zeros_like(t.data) if t.grad is None else t.grad.copy() for t in tensors]
    zero_grads(tensors)

    worst = 0.0
    for t, grad in zip(tensors, analytic):
        coords = list(np.ndindex(*t.shape)) if t.shape else [()]
        if samples_per_tensor is not None and len(coords) > samples_per_tensor:
            if rng is None:
                rng = Rng(0)
            picks = rng.choice(len(coords), size=samples_per_tensor, replace=False)
            coords = [coords[int(i)] for i in picks]
        for index in coords:
            num = numeric_gradient(f, t, index, eps=eps)
            worst = max(worst, relative_error(float(grad[index]), num))
    return worst
