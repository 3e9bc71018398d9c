"""Adam and learning-rate schedules."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .autodiff import Tensor


class NonFiniteGradient(FloatingPointError):
    pass


@dataclass
class AdamState:
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: list[np.ndarray] = field(default_factory=list)
    v: list[np.ndarray] = field(default_factory=list)


def adam_step(params: Sequence[Tensor], grads: Sequence[np.ndarray], state: AdamState, lr_t: float) -> None:
    """One bias-corrected Adam update, in place on ``params[i].values``."""
    if not state.m:
        state.m = [np.zeros_like(p.values) for p in params]
        state.v = [np.zeros_like(p.values) for p in params]
    if len(state.m) != len(params) or len(grads) != len(params):
        raise ValueError(f"{len(params)} params, {len(grads)} grads, {len(state.m)} state slots")
    for i, (p, g) in enumerate(zip(params, grads)):
        if g.shape != p.shape or state.m[i].shape != p.shape:
            raise ValueError(f"shape mismatch for parameter {p.name or i}: {p.shape} vs grad {g.shape}")
        if not np.all(np.isfinite(g)):
            raise NonFiniteGradient(f"non-finite gradient for parameter {p.name or i}")
    state.t += 1
    c1 = 1.0 - state.beta1**state.t
    c2 = 1.0 - state.beta2**state.t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        p.values -= lr_t * (m / c1) / (np.sqrt(v / c2) + state.eps)


def lr_schedule(config, step: int, total_steps: int) -> float:
    """Learning rate for update ``step`` (0-based) out of ``total_steps``.

    ``cosine``: ``lr * (1 + cos(pi * step / total)) / 2``.
    ``step_half_every_5``: halves every five epochs.
    """
    if not 0 <= step <= total_steps:
        raise ValueError(f"step {step} outside [0, {total_steps}]")
    if config.scheduler == "cosine":
        return config.lr * 0.5 * (1.0 + math.cos(math.pi * step / total_steps))
    if config.scheduler == "step_half_every_5":
        epoch = step * config.epochs // total_steps
        return config.lr * 0.5 ** (epoch // 5)
    raise ValueError(f"unknown scheduler {config.scheduler!r}")
