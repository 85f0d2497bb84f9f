"""Stochastic sign binarizer with a straight-through gradient, and bit packing.

Training mode draws ``+1`` with probability ``(1 + x) / 2`` so that the
expected output equals the input; backpropagation treats the layer as the
identity.  Inference mode is ``sign(x)`` with ``sign(0) = +1``.
"""

from __future__ import annotations

import contextlib
from dataclasses import dataclass
from typing import Optional

import numpy as np

from vxc.autodiff.tensor import Tensor, make_result
from vxc.exceptions import DomainError, FormatError

DOMAIN_SLACK = 1e-6


@dataclass(frozen=True)
class BinaryCode:
    """Flat ``{-1, +1}`` code plus the tensor shape it was flattened from."""

    bits: np.ndarray
    origin_shape: tuple

    def __post_init__(self):
        bits = np.asarray(self.bits, dtype=np.int8).reshape(-1)
        if not np.all((bits == 1) | (bits == -1)):
            raise DomainError("BinaryCode entries must be exactly -1 or +1")
        object.__setattr__(self, "bits", bits)
        object.__setattr__(self, "origin_shape", tuple(int(s) for s in self.origin_shape))
        if int(np.prod(self.origin_shape)) != bits.size:
            raise FormatError(f"origin shape {self.origin_shape} does not hold {bits.size} bits")

    @property
    def m(self) -> int:
        return int(self.bits.size)

    @classmethod
    def from_tensor(cls, t) -> "BinaryCode":
        data = t.data if isinstance(t, Tensor) else np.asarray(t)
        return cls(np.rint(data).astype(np.int8), data.shape)

    def to_array(self, dtype=np.float64) -> np.ndarray:
        return self.bits.astype(dtype).reshape(self.origin_shape)


class _FrozenNoise:
    """Records binarizer draws, then replays them as fixed offsets.

    During replay the binarizer returns ``x + (b_recorded - x_recorded)``, a
    function whose exact derivative is the straight-through identity.
    """

    def __init__(self):
        self.offsets = []
        self.replaying = False
        self.cursor = 0

    def replay(self):
        self.replaying = True
        self.cursor = 0

    def rewind(self):
        self.cursor = 0

    def apply(self, x: np.ndarray, b: Optional[np.ndarray]) -> np.ndarray:
        if not self.replaying:
            self.offsets.append(b - x)
            return b
        offset = self.offsets[self.cursor]
        self.cursor += 1
        return x + offset


_noise: Optional[_FrozenNoise] = None


@contextlib.contextmanager
def frozen_noise():
    global _noise
    previous = _noise
    _noise = _FrozenNoise()
    try:
        yield _noise
    finally:
        _noise = previous


def _check_domain(x: np.ndarray):
    if x.size and (x.min() < -1.0 - DOMAIN_SLACK or x.max() > 1.0 + DOMAIN_SLACK):
        raise DomainError(f"binarizer input must lie in [-1, 1]; got range [{x.min():.6g}, {x.max():.6g}]")


def binarize_backward(upstream: np.ndarray) -> np.ndarray:
    """Straight-through rule: the upstream gradient passes unchanged."""
    return upstream


def binarize_train(x: Tensor, rng: np.random.Generator) -> Tensor:
    """Stochastic binarization; uniforms are drawn from ``rng`` in row-major order."""
    _check_domain(x.data)
    u = rng.random(x.shape)
    b = np.where(u < (1.0 + x.data) / 2.0, 1.0, -1.0).astype(x.dtype)
    if _noise is not None:
        b = _noise.apply(x.data, b)
    return make_result(b, (x,), lambda g: (binarize_backward(g),), "binarize_train", stochastic=True)


def binarize_infer(x: Tensor) -> Tensor:
    """Deterministic ``sign(x)`` with ties resolved to ``+1``."""
    _check_domain(x.data)
    b = np.where(x.data >= 0, 1.0, -1.0).astype(x.dtype)
    return make_result(b, (x,), lambda g: (binarize_backward(g),), "binarize_infer")


def binarize(x: Tensor, rng: Optional[np.random.Generator] = None, train: bool = True) -> Tensor:
    if train:
        if rng is None:
            raise ValueError("training-mode binarization needs an RNG")
        return binarize_train(x, rng)
    return binarize_infer(x)


def pack_bits(code) -> bytes:
    """``-1 -> 0``, ``+1 -> 1``, eight bits per byte MSB first, zero padded."""
    bits = code.bits if isinstance(code, BinaryCode) else np.asarray(code).reshape(-1)
    return np.packbits(bits > 0, bitorder="big").tobytes()


def unpack_bits(data: bytes, m: int, origin_shape: Optional[tuple] = None) -> BinaryCode:
    need = (m + 7) // 8
    if len(data) < need:
        raise FormatError(f"truncated code: need {need} bytes for {m} bits, got {len(data)}")
    raw = np.unpackbits(np.frombuffer(bytes(data[:need]), dtype=np.uint8), bitorder="big")[:m]
    bits = np.where(raw == 1, 1, -1).astype(np.int8)
    return BinaryCode(bits, origin_shape if origin_shape is not None else (m,))
