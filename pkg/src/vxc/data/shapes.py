"""Procedural voxel solids.

Each family interprets a flat tuple of integer parameters in voxel units;
a pose seed then applies an axis permutation and per-axis flips.

=============== ======================================================
family          params
=============== ======================================================
box-union       (x0, y0, z0, a, b, c) repeated once per box
cylinder        (cx, cy, r, z0, h), axis along z
L-bracket       (x0, y0, z0, l1, l2, t, w)
sphere-cluster  (cx, cy, cz, r) repeated once per sphere
table-like      (x0, y0, z0, a, b, h, t, leg)
=============== ======================================================
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from typing import Optional

import numpy as np

from vxc.exceptions import ConfigurationError, DomainError

FAMILIES = ("box-union", "cylinder", "L-bracket", "sphere-cluster", "table-like")


@dataclass(frozen=True)
class ShapeSpec:
    family: str
    params: tuple
    pose_seed: int = 0
    D: int = 32

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ConfigurationError(f"unknown shape family {self.family!r}")
        object.__setattr__(self, "params", tuple(int(p) for p in self.params))
        if self.D < 2:
            raise ConfigurationError(f"grid size must be >= 2, got {self.D}")

    def digest(self) -> str:
        text = f"{self.family}|{','.join(map(str, self.params))}|{self.pose_seed}|{self.D}"
        return hashlib.sha256(text.encode()).hexdigest()


def _check_box(D, lo, ext, family):
    lo, ext = np.asarray(lo), np.asarray(ext)
    if (ext < 1).any() or (lo < 0).any() or (lo + ext > D).any():
        raise DomainError(f"{family}: box at {tuple(lo)} with extents {tuple(ext)} leaves the {D}^3 grid")


def _fill_box(grid, lo, ext):
    grid[lo[0]:lo[0] + ext[0], lo[1]:lo[1] + ext[1], lo[2]:lo[2] + ext[2]] = True


def _boxes(params, D):
    if len(params) == 0 or len(params) % 6:
        raise DomainError("box-union needs 6 parameters per box")
    grid = np.zeros((D, D, D), dtype=bool)
    for i in range(0, len(params), 6):
        lo, ext = params[i:i + 3], params[i + 3:i + 6]
        _check_box(D, lo, ext, "box-union")
        _fill_box(grid, lo, ext)
    return grid


def _cylinder(params, D):
    if len(params) != 5:
        raise DomainError("cylinder needs (cx, cy, r, z0, h)")
    cx, cy, r, z0, h = params
    if r < 1 or h < 1 or cx - r < 0 or cy - r < 0 or cx + r > D or cy + r > D or z0 < 0 or z0 + h > D:
        raise DomainError(f"cylinder {params} leaves the {D}^3 grid")
    c = np.arange(D) + 0.5
    disk = (c[:, None] - cx) ** 2 + (c[None, :] - cy) ** 2 <= r * r
    grid = np.zeros((D, D, D), dtype=bool)
    grid[:, :, z0:z0 + h] = disk[:, :, None]
    return grid


def _bracket(params, D):
    if len(params) != 7:
        raise DomainError("L-bracket needs (x0, y0, z0, l1, l2, t, w)")
    x0, y0, z0, l1, l2, t, w = params
    if t > min(l1, l2):
        raise DomainError("L-bracket thickness exceeds an arm length")
    grid = np.zeros((D, D, D), dtype=bool)
    for lo, ext in (((x0, y0, z0), (l1, t, w)), ((x0, y0, z0), (t, l2, w))):
        _check_box(D, lo, ext, "L-bracket")
        _fill_box(grid, lo, ext)
    return grid


def _spheres(params, D):
    if len(params) == 0 or len(params) % 4:
        raise DomainError("sphere-cluster needs 4 parameters per sphere")
    c = np.arange(D) + 0.5
    X, Y, Z = np.meshgrid(c, c, c, indexing="ij")
    grid = np.zeros((D, D, D), dtype=bool)
    for i in range(0, len(params), 4):
        cx, cy, cz, r = params[i:i + 4]
        if r < 1 or min(cx, cy, cz) - r < 0 or max(cx, cy, cz) + r > D:
            raise DomainError(f"sphere {params[i:i + 4]} leaves the {D}^3 grid")
        grid |= (X - cx) ** 2 + (Y - cy) ** 2 + (Z - cz) ** 2 <= r * r
    return grid


def _table(params, D):
    if len(params) != 8:
        raise DomainError("table-like needs (x0, y0, z0, a, b, h, t, leg)")
    x0, y0, z0, a, b, h, t, leg = params
    if t >= h or 2 * leg > min(a, b):
        raise DomainError(f"table-like proportions {params} are inconsistent")
    grid = np.zeros((D, D, D), dtype=bool)
    _check_box(D, (x0, y0 + h - t, z0), (a, t, b), "table-like")
    _fill_box(grid, (x0, y0 + h - t, z0), (a, t, b))
    for dx in (0, a - leg):
        for dz in (0, b - leg):
            _check_box(D, (x0 + dx, y0, z0 + dz), (leg, h - t, leg), "table-like")
            _fill_box(grid, (x0 + dx, y0, z0 + dz), (leg, h - t, leg))
    return grid


_BUILDERS = {
    "box-union": _boxes,
    "cylinder": _cylinder,
    "L-bracket": _bracket,
    "sphere-cluster": _spheres,
    "table-like": _table,
}


def apply_pose(grid: np.ndarray, seed: int) -> np.ndarray:
    """Axis permutation followed by per-axis flips, both drawn from ``seed``."""
    rng = np.random.default_rng(seed)
    perm = rng.permutation(3)
    flips = rng.random(3) < 0.5
    out = grid.transpose(perm)
    for axis in np.flatnonzero(flips):
        out = np.flip(out, axis=axis)
    return np.ascontiguousarray(out)


def generate_shape(spec: ShapeSpec, seed: Optional[int] = None) -> np.ndarray:
    """Boolean (D, D, D) solid for ``spec``; ``seed`` overrides the pose seed."""
    grid = _BUILDERS[spec.family](spec.params, spec.D)
    grid = apply_pose(grid, spec.pose_seed if seed is None else seed)
    if not grid.any():
        raise DomainError(f"{spec.family} produced an empty solid")
    return grid


def random_spec(rng: np.random.Generator, D: int = 32, family: Optional[str] = None) -> ShapeSpec:
    """Draw a valid spec; sizes scale with D so shapes fill a good part of the grid."""
    family = family or FAMILIES[int(rng.integers(len(FAMILIES)))]
    lo, hi = max(2, D // 4), max(3, (3 * D) // 4)

    def ri(a, b):
        return int(rng.integers(a, b + 1))

    if family == "box-union":
        params = []
        ext = [ri(lo, hi) for _ in range(3)]
        org = [ri(0, D - e) for e in ext]
        params += org + ext
        for _ in range(ri(1, 2)):
            # new box must contain a voxel of the previous one to stay connected
            anchor = [ri(o, o + e - 1) for o, e in zip(params[-6:-3], params[-3:])]
            ext = [ri(max(1, lo // 2), hi) for _ in range(3)]
            org = [min(max(a - ri(0, e - 1), 0), D - e) for a, e in zip(anchor, ext)]
            org = [min(max(o, a - e + 1), a) for o, a, e in zip(org, anchor, ext)]
            params += org + ext
    elif family == "cylinder":
        r = ri(max(1, D // 8), max(2, D // 3))
        h = ri(lo, D - 2)
        params = [ri(r, D - r), ri(r, D - r), r, ri(0, D - h), h]
    elif family == "L-bracket":
        l1, l2, w = ri(lo, D - 2), ri(lo, D - 2), ri(lo, D - 2)
        t = ri(max(1, D // 10), max(2, D // 5))
        params = [ri(0, D - l1), ri(0, D - l2), ri(0, D - w), l1, l2, t, w]
    elif family == "sphere-cluster":
        params = []
        for _ in range(ri(2, 4)):
            r = ri(max(1, D // 10), max(2, D // 4))
            params += [ri(r, D - r), ri(r, D - r), ri(r, D - r), r]
    else:
        a, b = ri(lo + 2, D - 2), ri(lo + 2, D - 2)
        h = ri(lo + 2, D - 2)
        t = ri(1, max(1, D // 10))
        leg = ri(1, max(1, min(a, b) // 5))
        params = [ri(0, D - a), ri(0, D - h), ri(0, D - b), a, b, h, t, leg]
    return ShapeSpec(family, tuple(params), pose_seed=int(rng.integers(2 ** 31)), D=D)
