"""Adam with bias correction and global-norm gradient clipping."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from vxc.exceptions import DimensionError


@dataclass
class AdamState:
    m: list
    v: list
    t: int = 0

    @classmethod
    def zeros_like(cls, params: Sequence[np.ndarray]) -> "AdamState":
        return cls([np.zeros_like(p) for p in params], [np.zeros_like(p) for p in params], 0)


def adam_step(params: Sequence[np.ndarray], grads: Sequence[np.ndarray], state: AdamState, lr: float = 1e-3,
              beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> AdamState:
    """Update ``params`` in place and return the advanced state.

    m ← β₁m + (1-β₁)g,  v ← β₂v + (1-β₂)g²,
    p ← p - lr · m̂ / (√v̂ + ε)  with  m̂ = m / (1-β₁ᵗ),  v̂ = v / (1-β₂ᵗ).
    """
    if not len(params) == len(grads) == len(state.m) == len(state.v):
        raise DimensionError("params, grads and optimizer moments must have equal length")
    t = state.t + 1
    c1 = 1.0 - beta1 ** t
    c2 = 1.0 - beta2 ** t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if p.shape != g.shape or p.shape != m.shape:
            raise DimensionError(f"parameter {p.shape} and gradient {g.shape} differ")
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        p -= (lr / c1) * m / (np.sqrt(v / c2) + eps)
    state.t = t
    return state


def global_norm(grads: Sequence[np.ndarray]) -> float:
    return float(np.sqrt(sum(float(np.sum(np.square(g, dtype=np.float64))) for g in grads)))


def clip_by_global_norm(grads: Sequence[np.ndarray], max_norm: float) -> tuple[list, float]:
    """Scale all gradients by ``min(1, max_norm / ‖g‖)``; returns (grads, pre-clip norm)."""
    norm = global_norm(grads)
    if max_norm is None or norm <= max_norm or norm == 0.0:
        return list(grads), norm
    scale = max_norm / norm
    return [(g * scale).astype(g.dtype) for g in grads], norm


@dataclass
class Adam:
    params: list
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    clip_norm: float | None = 5.0
    state: AdamState = field(default=None)

    def __post_init__(self):
        if self.state is None:
            self.state = AdamState.zeros_like([p.data for p in self.params])

    def step(self) -> float:
        """Apply one update from the accumulated ``.grad`` fields; returns the pre-clip norm."""
        grads = [p.grad if p.grad is not None else np.zeros_like(p.data) for p in self.params]
        grads, norm = clip_by_global_norm(grads, self.clip_norm)
        adam_step([p.data for p in self.params], grads, self.state, self.lr, self.beta1, self.beta2, self.eps)
        return norm

    def zero_grad(self):
        for p in self.params:
            p.grad = None

