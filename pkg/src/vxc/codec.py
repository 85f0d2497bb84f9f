"""Variable-rate iterative residual image codec and its bitstream container.

One iteration encodes the current residual with a convolutional-LSTM
encoder (total stride 16), binarizes the result to ``m = (H/16)(W/16)M`` bits
and decodes the bits with a convolutional-LSTM decoder that upsamples by
depth-to-space.  ``gamma = 0`` decodes a full image every iteration,
``gamma = 1`` decodes an increment that is added to the previous estimate.

Images are held internally in [-1, 1] with layout (B, 3, H, W).
"""

from __future__ import annotations

import math
import struct
from collections import Counter
from dataclasses import dataclass, field, fields
from fractions import Fraction
from typing import Optional

import numpy as np

from vxc.autodiff import functional as F
from vxc.autodiff.tensor import Tensor, no_grad
from vxc.binarizer import BinaryCode, binarize, pack_bits, unpack_bits
from vxc.exceptions import ConfigurationError, DimensionError, FormatError
from vxc.layers import Conv2d, Module
from vxc.recurrent import ConvLstm2d, LstmState

VARIANTS = ("original", "small")
CODE_CHANNELS = {"original": 32, "small": 16}
DEFAULT_WIDTHS = {
    # encoder: first conv, then the three conv-LSTM layers
    "small": {"enc": (32, 32, 32, 16), "dec": (64, 64, 64, 32)},
    "original": {"enc": (64, 256, 512, 512), "dec": (512, 512, 512, 256, 128)},
}


@dataclass
class CodecConfig:
    variant: str = "small"
    gamma: int = 0
    n_iter_max: int = 8
    height: int = 32
    width: int = 32
    enc_widths: Optional[tuple] = None
    dec_widths: Optional[tuple] = None

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ConfigurationError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        if self.gamma not in (0, 1):
            raise ConfigurationError(f"gamma must be 0 or 1, got {self.gamma}")
        if self.height % 16 or self.width % 16 or self.height <= 0 or self.width <= 0:
            raise ConfigurationError(f"image extents must be positive multiples of 16, got {self.height}x{self.width}")
        if self.n_iter_max < 1:
            raise ConfigurationError("n_iter_max must be >= 1")
        defaults = DEFAULT_WIDTHS[self.variant]
        self.enc_widths = tuple(self.enc_widths or defaults["enc"])
        self.dec_widths = tuple(self.dec_widths or defaults["dec"])
        n_dec = 3 if self.variant == "small" else 4
        if len(self.enc_widths) != 4:
            raise ConfigurationError("enc_widths needs 4 entries (conv + three conv-LSTMs)")
        if len(self.dec_widths) != n_dec + 1:
            raise ConfigurationError(f"{self.variant} decoder needs {n_dec + 1} widths (conv + {n_dec} conv-LSTMs)")
        if self.variant == "small" and self.enc_widths[-1] != self.M:
            raise ConfigurationError("small variant: last encoder layer must output M=16 maps")
        if any(w % 4 for w in self.dec_widths[1:]):
            raise ConfigurationError("decoder conv-LSTM widths must be divisible by 4 for depth-to-space")
        if self.variant == "small" and self.dec_widths[-1] % 16:
            raise ConfigurationError("small decoder's last width must be divisible by 16 (two depth-to-space steps)")

    @property
    def M(self) -> int:
        return CODE_CHANNELS[self.variant]

    @property
    def code_shape(self) -> tuple:
        return (self.M, self.height // 16, self.width // 16)

    @property
    def m(self) -> int:
        """Bits per iteration: (H/16)(W/16)M."""
        return (self.height // 16) * (self.width // 16) * self.M

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    @classmethod
    def from_dict(cls, d: dict) -> "CodecConfig":
        d = dict(d)
        for key in ("enc_widths", "dec_widths"):
            if d.get(key) is not None:
                d[key] = tuple(d[key])
        return cls(**d)


def compression_ratio(cfg: CodecConfig, n_iter: int, float_code: bool = False) -> Fraction:
    """c = (H·W·3·8) / (N·m), exact.  Float codes spend 32 bits per element."""
    if n_iter < 1:
        raise ConfigurationError("compression ratio needs N >= 1")
    bits = n_iter * cfg.m * (32 if float_code else 1)
    return Fraction(cfg.height * cfg.width * 3 * 8, bits)


def format_ratio(c: Fraction) -> str:
    if c.denominator == 1:
        return f"{c.numerator}:1"
    return f"{float(c):.4g}:1"


def compression_loss(residuals, batch: Optional[int] = None) -> Tensor:
    """Weighted L1 of the residual trace, β = 1 / (B·H·W·3·N)."""
    residuals = list(residuals)
    if not residuals:
        raise ValueError("compression_loss needs a non-empty residual trace")
    B, C, H, W = residuals[0].shape
    if batch is not None and batch != B:
        raise DimensionError(f"batch {batch} does not match residual batch {B}")
    total = F.sum(F.abs(residuals[0]))
    for r in residuals[1:]:
        total = total + F.sum(F.abs(r))
    return total / float(B * H * W * C * len(residuals))


class CompressionEncoder(Module):
    def __init__(self, cfg: CodecConfig, rng: np.random.Generator, dtype=np.float64):
        e0, e1, e2, e3 = cfg.enc_widths
        self.conv = Conv2d(3, e0, 3, rng, stride=2, dtype=dtype)
        self.rnn = [
            ConvLstm2d(e0, e1, rng, kernel=3, hidden_kernel=1, stride=2, dtype=dtype),
            ConvLstm2d(e1, e2, rng, kernel=3, hidden_kernel=1, stride=2, dtype=dtype),
            ConvLstm2d(e2, e3, rng, kernel=3, hidden_kernel=1, stride=2, dtype=dtype),
        ]
        # the small variant emits M maps directly; the original binarizer has its own 1x1 conv
        self.head = Conv2d(e3, cfg.M, 1, rng, dtype=dtype) if cfg.variant == "original" else None
        self.cfg = cfg

    def initial_state(self, batch: int) -> list[LstmState]:
        H, W = self.cfg.height // 2, self.cfg.width // 2
        states = []
        for cell in self.rnn:
            states.append(cell.initial_state(batch, H, W))
            H, W = cell.out_extent(H), cell.out_extent(W)
        return states

    def __call__(self, r: Tensor, states: list[LstmState]):
        x = self.conv(r)
        new_states = []
        for cell, state in zip(self.rnn, states):
            state = cell.step(x, state)
            new_states.append(state)
            x = state.h
        code = F.tanh(self.head(x)) if self.head is not None else x
        return code, new_states


class CompressionDecoder(Module):
    def __init__(self, cfg: CodecConfig, rng: np.random.Generator, dtype=np.float64):
        d0, *lstm_widths = cfg.dec_widths
        self.conv = Conv2d(cfg.M, d0, 1, rng, dtype=dtype)
        self.rnn = []
        c_in = d0
        for width in lstm_widths:
            self.rnn.append(ConvLstm2d(c_in, width, rng, kernel=3, hidden_kernel=1, dtype=dtype))
            c_in = width // 4
        # small variant has one conv-LSTM fewer, so one more shuffle reaches full size
        self.extra_shuffle = cfg.variant == "small"
        if self.extra_shuffle:
            c_in //= 4
        final_kernel = 3 if cfg.variant == "small" else 1
        self.out = Conv2d(c_in, 3, final_kernel, rng, dtype=dtype)
        self.cfg = cfg

    def initial_state(self, batch: int) -> list[LstmState]:
        H, W = self.cfg.height // 16, self.cfg.width // 16
        states = []
        for cell in self.rnn:
            states.append(cell.initial_state(batch, H, W))
            H, W = 2 * H, 2 * W
        return states

    def __call__(self, code: Tensor, states: list[LstmState]):
        x = self.conv(code)
        new_states = []
        for cell, state in zip(self.rnn, states):
            state = cell.step(x, state)
            new_states.append(state)
            x = F.depth_to_space(state.h, 2)
        if self.extra_shuffle:
            x = F.depth_to_space(x, 2)
        return F.tanh(self.out(x)), new_states


@dataclass
class CompressionTrace:
    codes: list = field(default_factory=list)
    reconstructions: list = field(default_factory=list)
    residuals: list = field(default_factory=list)

    @property
    def n_iter(self) -> int:
        return len(self.codes)


class CodecModel(Module):
    """Encoder, binarizer and decoder with the iterative residual loop."""

    def __init__(self, cfg: CodecConfig, rng: np.random.Generator, dtype=np.float64):
        self.encoder = CompressionEncoder(cfg, rng, dtype)
        self.decoder = CompressionDecoder(cfg, rng, dtype)
        self.cfg = cfg
        self.dtype = np.dtype(dtype)
        self._calls = Counter()

    def encode_step(self, r_prev: Tensor, enc_state):
        cfg = self.cfg
        if r_prev.ndim != 4 or r_prev.shape[1:] != (3, cfg.height, cfg.width):
            raise DimensionError(f"encoder expects (B, 3, {cfg.height}, {cfg.width}), got {r_prev.shape}")
        self._calls["encode_step"] += 1
        return self.encoder(r_prev, enc_state)

    def decode_step(self, code: Tensor, dec_state):
        if code.ndim != 4 or code.shape[1:] != self.cfg.code_shape:
            raise FormatError(f"code shape {code.shape[1:]} does not match configured {self.cfg.code_shape} "
                              f"(m={self.cfg.m})")
        self._calls["decode_step"] += 1
        return self.decoder(code, dec_state)

    def run(self, x: Tensor, n_iter: int, rng: Optional[np.random.Generator] = None, train: bool = False,
            float_code: bool = False, decode_last: bool = True) -> CompressionTrace:
        """r0 = x, x̂0 = 0; b_t = B(E(r_{t-1})); x̂_t = D(b_t) + γ x̂_{t-1}; r_t = x - x̂_t."""
        if not 1 <= n_iter <= self.cfg.n_iter_max:
            raise ConfigurationError(f"N must be in [1, {self.cfg.n_iter_max}], got {n_iter}")
        B = x.shape[0]
        enc_state = self.encoder.initial_state(B)
        dec_state = self.decoder.initial_state(B)
        trace = CompressionTrace()
        r = x
        prev = None
        for t in range(n_iter):
            pre, enc_state = self.encode_step(r, enc_state)
            b = pre if float_code else binarize(pre, rng, train)
            trace.codes.append(b)
            if t == n_iter - 1 and not decode_last:
                break
            out, dec_state = self.decode_step(b, dec_state)
            x_hat = out + prev if (self.cfg.gamma == 1 and prev is not None) else out
            r = x - x_hat
            trace.reconstructions.append(x_hat)
            trace.residuals.append(r)
            prev = x_hat
        return trace

    def decode_codes(self, codes) -> Tensor:
        """Decode-only path from fresh zero states."""
        B = codes[0].shape[0]
        dec_state = self.decoder.initial_state(B)
        prev = None
        for b in codes:
            out, dec_state = self.decode_step(b, dec_state)
            prev = out + prev if (self.cfg.gamma == 1 and prev is not None) else out
        return prev


def to_internal(images01: np.ndarray, dtype=np.float64) -> np.ndarray:
    """(..., H, W, 3) in [0, 1] -> (..., 3, H, W) in [-1, 1]."""
    a = np.asarray(images01, dtype=dtype)
    return np.moveaxis(a * 2.0 - 1.0, -1, -3)


def to_external(internal: np.ndarray) -> np.ndarray:
    """(..., 3, H, W) in [-1, 1] -> (..., H, W, 3) in [0, 1]."""
    return np.moveaxis((np.asarray(internal) + 1.0) / 2.0, -3, -1)


# -- bitstream container ---------------------------------------------------

MAGIC = b"VXC1"
VERSION = 1
_HEADER = struct.Struct("<4sBBBHHHH")


@dataclass
class Bitstream:
    """Header plus N packed m-bit codes in iteration order."""

    variant: str
    gamma: int
    height: int
    width: int
    M: int
    codes: list
    version: int = VERSION

    @property
    def N(self) -> int:
        return len(self.codes)

    @property
    def m(self) -> int:
        return (self.height // 16) * (self.width // 16) * self.M

    def to_bytes(self) -> bytes:
        head = _HEADER.pack(MAGIC, self.version, VARIANTS.index(self.variant), self.gamma,
                            self.height, self.width, self.M, self.N)
        return head + b"".join(pack_bits(c) for c in self.codes)

    @classmethod
    def from_bytes(cls, data: bytes) -> "Bitstream":
        if len(data) < _HEADER.size:
            raise FormatError(f"bitstream shorter than its {_HEADER.size}-byte header")
        magic, version, variant, gamma, H, W, M, N = _HEADER.unpack_from(data)
        if magic != MAGIC:
            raise FormatError(f"bad magic {magic!r}, expected {MAGIC!r}")
        if version != VERSION:
            raise FormatError(f"unsupported version {version}")
        if variant >= len(VARIANTS):
            raise FormatError(f"unknown variant code {variant}")
        if gamma not in (0, 1):
            raise FormatError(f"gamma must be 0 or 1, got {gamma}")
        if H == 0 or W == 0 or H % 16 or W % 16:
            raise FormatError(f"image extents {H}x{W} are not positive multiples of 16")
        name = VARIANTS[variant]
        if M != CODE_CHANNELS[name]:
            raise FormatError(f"M={M} inconsistent with variant {name}")
        if N < 1:
            raise FormatError("bitstream holds no codes")
        m = (H // 16) * (W // 16) * M
        per = math.ceil(m / 8)
        payload = data[_HEADER.size:]
        if len(payload) != N * per:
            raise FormatError(f"payload is {len(payload)} bytes, header implies {N} x {per}")
        shape = (M, H // 16, W // 16)
        codes = [unpack_bits(payload[i * per:(i + 1) * per], m, shape) for i in range(N)]
        return cls(name, gamma, H, W, M, codes, version)

    def save(self, path):
        with open(path, "wb") as fh:
            fh.write(self.to_bytes())

    @classmethod
    def load(cls, path) -> "Bitstream":
        with open(path, "rb") as fh:
            return cls.from_bytes(fh.read())

    def check_against(self, cfg: CodecConfig):
        for name, have, want in (("variant", self.variant, cfg.variant), ("gamma", self.gamma, cfg.gamma),
                                 ("height", self.height, cfg.height), ("width", self.width, cfg.width),
                                 ("M", self.M, cfg.M)):
            if have != want:
                raise FormatError(f"bitstream header field {name}={have!r} does not match model ({want!r})")
        if self.N > cfg.n_iter_max:
            raise FormatError(f"bitstream header field N={self.N} exceeds model N_max={cfg.n_iter_max}")


def compress(model: CodecModel, image: np.ndarray, n_iter: int, mode: str = "infer",
             rng: Optional[np.random.Generator] = None):
    """Compress one (H, W, 3) image in [0, 1]; returns (Bitstream, trace)."""
    if mode not in ("train", "infer"):
        raise ValueError(f"mode must be 'train' or 'infer', got {mode!r}")
    cfg = model.cfg
    x = Tensor(to_internal(image, model.dtype)[None])
    with no_grad():
        trace = model.run(x, n_iter, rng=rng, train=(mode == "train"))
    codes = [BinaryCode.from_tensor(Tensor(b.data[0])) for b in trace.codes]
    bs = Bitstream(cfg.variant, cfg.gamma, cfg.height, cfg.width, cfg.M, codes)
    return bs, trace


def decompress(model: CodecModel, bs: Bitstream, n_iter: Optional[int] = None) -> np.ndarray:
    """Decode the first ``n_iter`` codes (all by default) to an (H, W, 3) image in [0, 1]."""
    bs.check_against(model.cfg)
    n = bs.N if n_iter is None else n_iter
    if not 1 <= n <= bs.N:
        raise ConfigurationError(f"can decode 1..{bs.N} iterations, asked for {n}")
    codes = [Tensor(c.to_array(model.dtype)[None]) for c in bs.codes[:n]]
    with no_grad():
        x_hat = model.decode_codes(codes)
    return to_external(x_hat.data[0])
