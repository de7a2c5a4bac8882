"""Central-difference gradient verification."""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .tensor import GradkitError, Tensor, backward, graph, no_grad

STEP = 1e-5
KINK_FLOOR = 1e-10


def grad_check(build_loss: Callable[[], Tensor], params: Sequence[Tensor],
               step: float = STEP, entries: int | None = None,
               seed: int = 0, dtype=None) -> float:
    """Max relative error between reverse-mode and central-difference gradients.

    ``build_loss`` is called with no arguments and must rebuild the loss from
    the current parameter values.  When ``entries`` is given, that many entries
    per parameter are sampled (without replacement) instead of all of them.

    ``dtype=np.longdouble`` promotes the parameters for the duration of the
    check.  Losses of magnitude ~10 quantize float64 central differences at
    about 1e-10, which swamps gradient entries near 1e-9; the wider type
    pushes that floor far below the tolerance.  Parameters are restored
    bit-exactly afterwards.
    """
    params = list(params)
    if dtype is None:
        return _check(build_loss, params, step, entries, seed)
    original = [p.data for p in params]
    try:
        for p in params:
            p.data = p.data.astype(dtype)
        return _check(build_loss, params, step, entries, seed)
    finally:
        for p, data in zip(params, original):
            p.data = data


def _value(loss: Tensor):
    # Tensor.item() rounds to a Python float; keep the array's own precision
    return loss.data.reshape(-1)[0]


def _check(build_loss, params, step, entries, seed) -> float:
    with no_grad():
        first = float(build_loss().item())
        second = float(build_loss().item())
    if first != second:
        raise GradkitError(f"build_loss is not deterministic ({first!r} != {second!r})")

    saved = [p.grad for p in params]
    for p in params:
        p.grad = None
    with graph():
        loss = build_loss()
        backward(loss, wrt=params)
    analytic = [p.grad.reshape(-1).copy() for p in params]
    for p, g in zip(params, saved):
        p.grad = g

    rng = np.random.default_rng(seed)
    worst = 0.0
    with no_grad():
        for p, ana in zip(params, analytic):
            flat = p.data.reshape(-1)
            idx = np.arange(flat.size)
            if entries is not None and entries < flat.size:
                idx = rng.choice(flat.size, size=entries, replace=False)
            for i in idx:
                orig = flat[i]
                flat[i] = orig + step
                up = _value(build_loss())
                flat[i] = orig - step
                down = _value(build_loss())
                flat[i] = orig
                num = (up - down) / (2 * step)
                a = ana[i]
                if abs(a) < KINK_FLOOR and abs(num) < KINK_FLOOR:
                    continue
                err = abs(a - num) / max(1e-8, abs(a) + abs(num))
                worst = max(worst, err)
    return float(worst)
