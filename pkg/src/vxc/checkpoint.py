"""VXCK checkpoint container.

Little-endian layout::

    b"VXCK"  u16 version
    u32 len + UTF-8 JSON config
    u32 n_params, then per parameter:
        u16 len + UTF-8 name, u8 dtype (0 = float32, 1 = float64), u8 ndim,
        u32 dims[ndim], raw values
    u8 has_optimizer; if set: u64 step t, then m and v arrays in parameter order
    u32 len + UTF-8 JSON generator state
    u32 epoch
"""

from __future__ import annotations

import io
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from vxc.exceptions import FormatError

MAGIC = b"VXCK"
VERSION = 1
_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}
_CODES = {np.dtype("float32"): 0, np.dtype("float64"): 1}


@dataclass
class Checkpoint:
    config: dict
    params: dict
    epoch: int = 0
    opt_t: Optional[int] = None
    opt_m: list = field(default_factory=list)
    opt_v: list = field(default_factory=list)
    rng_state: Optional[dict] = None

    def restore(self, model, optimizer=None, rng: Optional[np.random.Generator] = None):
        """Copy stored values into ``model`` (and optimizer / generator) in place."""
        named = dict(model.named_parameters())
        if set(named) != set(self.params):
            missing = sorted(set(named) - set(self.params))
            extra = sorted(set(self.params) - set(named))
            raise FormatError(f"checkpoint parameters do not match model (missing {missing[:3]}, extra {extra[:3]})")
        for name, p in named.items():
            stored = self.params[name]
            if stored.shape != p.shape:
                raise FormatError(f"parameter {name}: checkpoint shape {stored.shape} != model {p.shape}")
            p.data[...] = stored
        if optimizer is not None:
            if self.opt_t is None:
                raise FormatError("checkpoint holds no optimizer state")
            for dst, src in zip(optimizer.state.m + optimizer.state.v, self.opt_m + self.opt_v):
                dst[...] = src
            optimizer.state.t = self.opt_t
        if rng is not None and self.rng_state is not None:
            rng.bit_generator.state = self.rng_state


def _write_str(buf, text: str, width: str = "<I"):
    raw = text.encode("utf-8")
    buf.write(struct.pack(width, len(raw)))
    buf.write(raw)


def _write_array(buf, a: np.ndarray):
    a = np.asarray(a)
    if a.dtype not in _CODES:
        raise FormatError(f"cannot store dtype {a.dtype}")
    code = _CODES[a.dtype]
    buf.write(struct.pack("<BB", code, a.ndim))
    buf.write(struct.pack(f"<{a.ndim}I", *a.shape))
    buf.write(np.ascontiguousarray(a, dtype=_DTYPES[code]).tobytes())


def checkpoint_to_bytes(model, config: dict, optimizer=None, rng: Optional[np.random.Generator] = None,
                        epoch: int = 0) -> bytes:
    buf = io.BytesIO()
    buf.write(MAGIC + struct.pack("<H", VERSION))
    _write_str(buf, json.dumps(config, sort_keys=True))
    named = list(model.named_parameters())
    buf.write(struct.pack("<I", len(named)))
    for name, p in named:
        _write_str(buf, name, "<H")
        _write_array(buf, p.data)
    buf.write(struct.pack("<B", optimizer is not None))
    if optimizer is not None:
        buf.write(struct.pack("<Q", optimizer.state.t))
        for a in optimizer.state.m + optimizer.state.v:
            _write_array(buf, a)
    _write_str(buf, json.dumps(rng.bit_generator.state if rng is not None else None))
    buf.write(struct.pack("<I", epoch))
    return buf.getvalue()


class _Reader:
    def __init__(self, data: bytes):
        self.data, self.pos = data, 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise FormatError(f"checkpoint truncated at byte {self.pos} (needed {n} more)")
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def string(self, width: str = "<I") -> str:
        (n,) = self.unpack(width)
        return self.take(n).decode("utf-8")

    def array(self) -> np.ndarray:
        code, ndim = self.unpack("<BB")
        if code not in _DTYPES:
            raise FormatError(f"unknown dtype code {code}")
        shape = self.unpack(f"<{ndim}I")
        dt = _DTYPES[code]
        n = int(np.prod(shape, dtype=np.int64))
        return np.frombuffer(self.take(n * dt.itemsize), dtype=dt).reshape(shape).astype(dt.newbyteorder("="))


def checkpoint_from_bytes(data: bytes) -> Checkpoint:
    r = _Reader(data)
    if r.take(4) != MAGIC:
        raise FormatError("not a VXCK checkpoint (bad magic)")
    (version,) = r.unpack("<H")
    if version != VERSION:
        raise FormatError(f"unsupported checkpoint version {version}")
    config = json.loads(r.string())
    (n,) = r.unpack("<I")
    params = {}
    for _ in range(n):
        name = r.string("<H")
        params[name] = r.array()
    ck = Checkpoint(config, params)
    (has_opt,) = r.unpack("<B")
    if has_opt:
        (ck.opt_t,) = r.unpack("<Q")
        ck.opt_m = [r.array() for _ in range(n)]
        ck.opt_v = [r.array() for _ in range(n)]
    ck.rng_state = json.loads(r.string())
    (ck.epoch,) = r.unpack("<I")
    if r.pos != len(data):
        raise FormatError(f"{len(data) - r.pos} trailing bytes after checkpoint")
    return ck


def save_checkpoint(path, model, config: dict, optimizer=None, rng=None, epoch: int = 0) -> Path:
    path = Path(path)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_bytes(checkpoint_to_bytes(model, config, optimizer, rng, epoch))
    tmp.replace(path)
    return path


def load_checkpoint(path) -> Checkpoint:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"checkpoint not found: {path}")
    try:
        return checkpoint_from_bytes(path.read_bytes())
    except FormatError as err:
        raise FormatError(f"{path}: {err}") from None
