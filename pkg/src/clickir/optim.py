"""Adam without weight decay, linear warmup then cosine decay."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .encoder import ParameterSet
from .errors import UsageError


def lr_multiplier(step: int, warmup: int, total: int) -> float:
    """``min(step / warmup, cosine(step))`` with steps counted from 1.

    The cosine term is 1 until warmup ends, then decays to 0 at ``total``.
    """
    warm = 1.0 if warmup <= 0 else step / warmup
    if step <= warmup or total <= warmup:
        cos = 1.0
    else:
        progress = min(1.0, (step - warmup) / (total - warmup))
        cos = 0.5 * (1.0 + math.cos(math.pi * progress))
    return min(warm, cos)


@dataclass
class OptimizerState:
    lr: float = 2e-5
    eps: float = 1e-8
    beta1: float = 0.9
    beta2: float = 0.999
    warmup: int = 0
    total: int = 1
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)

    @classmethod
    def for_params(cls, params: ParameterSet, **kw) -> "OptimizerState":
        state = cls(**kw)
        state.m = {k: np.zeros_like(t) for k, t in params.tensors.items()}
        state.v = {k: np.zeros_like(t) for k, t in params.tensors.items()}
        return state

    def current_lr(self, step: int | None = None) -> float:
        s = self.step if step is None else step
        return self.lr * lr_multiplier(s, self.warmup, self.total)


def adam_step(params: ParameterSet, grads: dict[str, np.ndarray], state: OptimizerState) -> float:
    """Update ``params`` in place; returns the learning rate that was applied."""
    for name, g in grads.items():
        if name not in state.m:
            raise UsageError(f"no optimizer moments for parameter {name!r}")
        if g.shape != state.m[name].shape:
            raise UsageError(f"{name}: gradient shape {g.shape} != {state.m[name].shape}")
    state.step += 1
    t = state.step
    lr = state.current_lr()
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**t
    c2 = 1.0 - b2**t
    for name, g in grads.items():
        m, v = state.m[name], state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        if lr == 0.0:
            continue
        update = (lr * (m / c1)) / (np.sqrt(v / c2) + state.eps)
        p = params.tensors[name]
        p -= update.astype(p.dtype, copy=False)
    return lr
