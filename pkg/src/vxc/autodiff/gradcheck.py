"""Central finite-difference verification of analytic gradients."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from vxc.autodiff.tensor import Tape, Tensor, backward, no_grad


@dataclass
class GradCheckReport:
    max_rel_err: float
    tol: float
    n_checked: int
    mode: str = "deterministic"
    name: str = ""

    @property
    def passed(self) -> bool:
        return bool(self.max_rel_err <= self.tol)

    def __str__(self):
        status = "PASS" if self.passed else "FAIL"
        label = f"{self.name}: " if self.name else ""
        return (f"{label}{status} max_rel_err={self.max_rel_err:.3e} tol={self.tol:.0e} "
                f"n={self.n_checked} mode={self.mode}")


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-4) -> float:
    """Largest elementwise ``|a - n| / max(|a|, |n|, floor)``.

    Entries whose magnitude is below ``floor`` are compared absolutely, which
    keeps round-off on near-zero gradients from dominating the ratio.
    """
    a = np.asarray(analytic, dtype=np.float64).ravel()
    n = np.asarray(numeric, dtype=np.float64).ravel()
    if a.size == 0:
        return 0.0
    denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
    return float(np.max(np.abs(a - n) / denom))


def grad_check(f: Callable[..., Tensor], inputs, h: float = 1e-5, tol: float = 1e-5,
               indices: Optional[Sequence[Sequence[int]]] = None, name: str = "",
               floor: float = 1e-4) -> GradCheckReport:
    """Compare analytic gradients of scalar ``f(*inputs)`` with central differences.

    ``inputs`` is a tensor or a sequence of tensors; all of them must be
    float64 leaves with ``requires_grad=True``.  ``indices`` optionally limits
    the check to a subset of flat positions per input (for large parameter
    sets).

    When the recorded tape contains a stochastic node (the training-mode
    binarizer), the function is evaluated under frozen noise: the draw from
    the first evaluation is replayed as a fixed offset, so finite differences
    see the straight-through surrogate the analytic gradient describes.
    """
    from vxc.binarizer import frozen_noise

    if isinstance(inputs, Tensor):
        inputs = [inputs]
    inputs = list(inputs)
    for t in inputs:
        if t.dtype != np.float64:
            raise TypeError("grad_check needs float64 inputs")
        if not t.data.flags.c_contiguous:
            t.data = np.ascontiguousarray(t.data)
        t.grad = None

    with frozen_noise() as noise:
        out = f(*inputs)
        stochastic = Tape.of(out).stochastic
        backward(out)
        analytic = [np.zeros(t.shape) if t.grad is None else t.grad.copy() for t in inputs]
        noise.replay()

        def evaluate():
            noise.rewind()
            with no_grad():
                return float(f(*inputs).data)

        worst = 0.0
        count = 0
        for k, t in enumerate(inputs):
            flat = t.data.reshape(-1)
            positions = range(flat.size) if indices is None else indices[k]
            numeric = []
            chosen = []
            for i in positions:
                orig = flat[i]
                flat[i] = orig + h
                fp = evaluate()
                flat[i] = orig - h
                fm = evaluate()
                flat[i] = orig
                numeric.append((fp - fm) / (2.0 * h))
                chosen.append(i)
            if chosen:
                worst = max(worst, relative_error(analytic[k].reshape(-1)[chosen], numeric, floor))
                count += len(chosen)
    mode = "stochastic; compared under frozen noise" if stochastic else "deterministic"
    return GradCheckReport(worst, tol, count, mode, name)
