"""Adam with decoupled weight decay, plus the cosine learning-rate schedule."""

import math
from typing import Dict, Optional

import numpy as np

from .tensor import ShapeError, Tensor

BETA1 = 0.9
BETA2 = 0.999
ADAM_EPS = 1e-8


def cosine_lr(step: int, total_steps: int, lr0: float,
              lr_min: Optional[float] = None) -> float:
    """Anneal from lr0 at step 0 to lr_min at total_steps."""
    if not 0 <= step <= total_steps:
        raise ValueError(f"step must lie in [0, {total_steps}], got {step}")
    if lr_min is None:
        lr_min = lr0 / 100.0
    return lr_min + 0.5 * (lr0 - lr_min) * (1.0 + math.cos(math.pi * step / total_steps))


class AdamState:
    """First/second moment buffers and the shared step counter."""

    def __init__(self, params: Dict[str, Tensor]):
        self.m = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.t = 0


def adam_step(params: Dict[str, Tensor], state: AdamState, lr: float,
              weight_decay: float = 0.0):
    """In-place update; decoupled decay is applied before the Adam move,
    and a missing gradient is treated as zero (decay still applies)."""
    state.t += 1
    bc1 = 1.0 - BETA1**state.t
    bc2 = 1.0 - BETA2**state.t
    for k, p in params.items():
        g = p.grad if p.grad is not None else np.zeros_like(p.data)
        if g.shape != p.data.shape:
            raise ShapeError(f"gradient shape {g.shape} != param shape {p.data.shape} for {k!r}")
        if weight_decay:
            p.data *= 1.0 - lr * weight_decay
        m = state.m[k]
        v = state.v[k]
        m *= BETA1
        m += (1.0 - BETA1) * g
        v *= BETA2
        v += (1.0 - BETA2) * np.square(g)
        p.data -= lr * (m / bc1) / (np.sqrt(v / bc2) + ADAM_EPS)
