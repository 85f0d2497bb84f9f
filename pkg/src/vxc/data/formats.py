"""Binary PPM (P6) images and VOX1 voxel grids.

VOX1 layout (little-endian): ``b"VOX1"``, ``u16 D``, ``u8 kind`` then the
payload; kind 0 holds D³ occupancy bits packed MSB-first, kind 1 holds D³
float32 probabilities.  Voxels are in C order over (x, y, z).
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from vxc.exceptions import FormatError

VOX_MAGIC = b"VOX1"
_VOX_HEADER = struct.Struct("<4sHB")
VOX_BITS, VOX_FLOAT = 0, 1


def image_to_bytes(img: np.ndarray) -> np.ndarray:
    """[0, 1] floats → uint8 with round-half-up."""
    return np.floor(np.clip(img, 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)


def write_ppm(path, img: np.ndarray) -> None:
    img = np.asarray(img)
    if img.ndim != 3 or img.shape[2] != 3:
        raise FormatError(f"PPM needs an (H, W, 3) image, got {img.shape}")
    data = img if img.dtype == np.uint8 else image_to_bytes(img)
    h, w, _ = data.shape
    Path(path).write_bytes(f"P6\n{w} {h}\n255\n".encode("ascii") + data.tobytes())


def read_ppm(path) -> np.ndarray:
    """uint8 (H, W, 3) array."""
    raw = Path(path).read_bytes()
    fields, pos = [], 0
    while len(fields) < 4:
        while pos < len(raw) and raw[pos:pos + 1].isspace():
            pos += 1
        if raw[pos:pos + 1] == b"#":
            pos = raw.index(b"\n", pos) + 1
            continue
        end = pos
        while end < len(raw) and not raw[end:end + 1].isspace():
            end += 1
        if end == pos:
            raise FormatError(f"{path}: truncated PPM header")
        fields.append(raw[pos:end])
        pos = end
    if fields[0] != b"P6":
        raise FormatError(f"{path}: not a binary PPM (magic {fields[0]!r})")
    w, h, maxval = (int(f) for f in fields[1:])
    if maxval != 255:
        raise FormatError(f"{path}: only 8-bit PPM is supported")
    body = raw[pos + 1:]
    if len(body) < w * h * 3:
        raise FormatError(f"{path}: expected {w * h * 3} pixel bytes, found {len(body)}")
    return np.frombuffer(body[: w * h * 3], dtype=np.uint8).reshape(h, w, 3).copy()


def vox_to_bytes(grid: np.ndarray) -> bytes:
    grid = np.asarray(grid)
    if grid.ndim != 3 or len(set(grid.shape)) != 1:
        raise FormatError(f"VOX1 needs a cubic grid, got {grid.shape}")
    D = grid.shape[0]
    if grid.dtype == bool:
        return _VOX_HEADER.pack(VOX_MAGIC, D, VOX_BITS) + np.packbits(grid.reshape(-1)).tobytes()
    return _VOX_HEADER.pack(VOX_MAGIC, D, VOX_FLOAT) + grid.astype("<f4").tobytes()


def vox_from_bytes(raw: bytes) -> np.ndarray:
    if len(raw) < _VOX_HEADER.size:
        raise FormatError("VOX1 data shorter than its header")
    magic, D, kind = _VOX_HEADER.unpack_from(raw)
    if magic != VOX_MAGIC:
        raise FormatError(f"bad VOX1 magic {magic!r}")
    body = raw[_VOX_HEADER.size:]
    n = D ** 3
    if kind == VOX_BITS:
        need = (n + 7) // 8
        if len(body) != need:
            raise FormatError(f"VOX1 bit payload should be {need} bytes, got {len(body)}")
        return np.unpackbits(np.frombuffer(body, np.uint8), count=n).astype(bool).reshape(D, D, D)
    if kind == VOX_FLOAT:
        if len(body) != 4 * n:
            raise FormatError(f"VOX1 float payload should be {4 * n} bytes, got {len(body)}")
        return np.frombuffer(body, "<f4").reshape(D, D, D).astype(np.float32)
    raise FormatError(f"unknown VOX1 payload kind {kind}")


def write_vox(path, grid: np.ndarray) -> None:
    Path(path).write_bytes(vox_to_bytes(grid))


def read_vox(path) -> np.ndarray:
    try:
        return vox_from_bytes(Path(path).read_bytes())
    except FormatError as err:
        raise FormatError(f"{path}: {err}") from None
