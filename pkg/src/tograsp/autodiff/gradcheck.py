from __future__ import annotations

from typing import Callable

import numpy as np

from .tensor import Tape, Tensor


def grad_check(
    f: Callable[[Tensor], Tensor],
    x: Tensor,
    step: float = 1e-2,
    coords: int | None = None,
    seed: int = 0,
) -> float:
    """Max relative error between tape gradients and central differences.

    Error per coordinate is ``|a - n| / max(1e-6, |a| + |n|)``. The tape
    gradient is taken at working precision; the central differences are
    evaluated in float64 from the same values (other captured tensors promote),
    so the reference is not limited by f32 rounding of ``f``. ``coords``
    limits the check to a seeded random subset of coordinates.
    """
    had_grad = x.requires_grad
    x.requires_grad = True
    x.grad = None
    with Tape() as tape:
        y = f(x)
        tape.backward(y)
    analytic = np.zeros_like(x.data) if x.grad is None else x.grad.copy()
    x.grad = None
    x.requires_grad = had_grad

    flat = x.data.reshape(-1)
    if coords is None or coords >= flat.size:
        idx = np.arange(flat.size)
    else:
        idx = np.random.default_rng(seed).choice(flat.size, size=coords, replace=False)
    a_flat = analytic.reshape(-1)
    worst = 0.0
    base = x.data
    wide = base.astype(np.float64)
    for i in idx:
        pert = wide.copy()
        orig = float(pert.reshape(-1)[i])
        pert.reshape(-1)[i] = orig + step
        x.data = pert
        fp = float(f(x).data.reshape(-1)[0])
        pert.reshape(-1)[i] = orig - step
        fm = float(f(x).data.reshape(-1)[0])
        num = (fp - fm) / (2 * step)
        a = float(a_flat[i])
        err = abs(a - num) / max(1e-6, abs(a) + abs(num))
        worst = max(worst, err)
    x.data = base
    return worst
