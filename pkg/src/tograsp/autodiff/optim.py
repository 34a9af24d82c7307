from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from ..errors import TrainingError
from .tensor import Tensor


@dataclass
class AdamState:
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(
    params: Mapping[str, Tensor],
    grads: Mapping[str, np.ndarray | None] | None,
    state: AdamState,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
    weight_decay: float = 0.0,
) -> AdamState:
    """One Adam update with bias correction and decoupled weight decay.

    ``grads`` defaults to each parameter's ``.grad``; a missing gradient is
    treated as zero. Parameter arrays are replaced, never written in place,
    so arrays captured earlier (e.g. by a tape) stay valid.
    """
    if state.step < 0:
        raise ValueError("Adam step counter must be >= 0")
    state.step += 1
    t = state.step
    bc1 = 1.0 - beta1**t
    bc2 = 1.0 - beta2**t
    for name, p in params.items():
        g = p.grad if grads is None else grads.get(name)
        dt = p.data.dtype
        if g is None:
            g = np.zeros_like(p.data)
        elif g.shape != p.shape:
            raise TrainingError(f"gradient for {name!r} has shape {g.shape}, parameter {p.shape}")
        if not np.isfinite(g).all():
            raise TrainingError(f"non-finite gradient for parameter {name!r}")
        m = state.m.get(name)
        v = state.v.get(name)
        if m is None:
            m = np.zeros_like(p.data)
            v = np.zeros_like(p.data)
        m = (beta1 * m + (1 - beta1) * g).astype(dt, copy=False)
        v = (beta2 * v + (1 - beta2) * g * g).astype(dt, copy=False)
        state.m[name], state.v[name] = m, v
        new = p.data
        if weight_decay:
            new = new - dt.type(lr * weight_decay) * new
        delta = (m / dt.type(bc1)) / (np.sqrt(v / dt.type(bc2)) + dt.type(eps))
        p.data = (new - dt.type(lr) * delta).astype(dt, copy=False)
    return state
