"""Orthographic ray-marching of voxel solids.

The solid occupies the cube [-0.5, 0.5]^3.  The image plane is a square of
half-extent ``R = sqrt(3)/2`` centred on the origin and perpendicular to the
view direction, so every view contains the whole cube.
"""

from __future__ import annotations

import numpy as np

RADIUS = np.sqrt(3.0) / 2.0
BACKGROUND = 1.0
_LIGHT = np.array([0.4, 0.8, 0.45]) / np.linalg.norm([0.4, 0.8, 0.45])
_TINT = np.array([0.85, 0.55, 0.35])


def view_basis(direction) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Unit view direction d plus image axes (right, up) spanning the plane ⟂ d."""
    d = np.asarray(direction, dtype=np.float64)
    d = d / np.linalg.norm(d)
    helper = np.array([0.0, 1.0, 0.0]) if abs(d[1]) < 0.9 else np.array([1.0, 0.0, 0.0])
    right = np.cross(helper, d)
    right /= np.linalg.norm(right)
    up = np.cross(d, right)
    return d, right, up


def pixel_coords(height: int, width: int) -> tuple[np.ndarray, np.ndarray]:
    """Plane coordinates (u, v) of pixel centres; row 0 is the top."""
    u = (np.arange(width) + 0.5) / width * 2 * RADIUS - RADIUS
    v = RADIUS - (np.arange(height) + 0.5) / height * 2 * RADIUS
    return np.meshgrid(u, v)


def render_view(grid: np.ndarray, direction, height: int = 32, width: int = 32,
                samples: int | None = None) -> np.ndarray:
    """Render one (H, W, 3) image in [0, 1] looking along ``direction``."""
    grid = np.asarray(grid, dtype=bool)
    D = grid.shape[0]
    samples = samples or 4 * D
    d, right, up = view_basis(direction)
    U, Vp = pixel_coords(height, width)
    origins = U[..., None] * right + Vp[..., None] * up - RADIUS * d  # (H, W, 3)
    ts = np.linspace(0.0, 2 * RADIUS, samples)
    pts = origins[:, :, None, :] + ts[None, None, :, None] * d  # (H, W, S, 3)
    idx = np.floor((pts + 0.5) * D).astype(np.int64)
    inside = ((idx >= 0) & (idx < D)).all(axis=-1)
    np.clip(idx, 0, D - 1, out=idx)
    occ = inside & grid[idx[..., 0], idx[..., 1], idx[..., 2]]
    hit = occ.any(axis=-1)
    first = occ.argmax(axis=-1)

    # normal proxy: the axis whose voxel index changed entering the hit voxel
    prev = np.maximum(first - 1, 0)
    rows, cols = np.indices((height, width))
    cur_idx = idx[rows, cols, first]
    prev_idx = idx[rows, cols, prev]
    changed = cur_idx != prev_idx
    axis = np.where(changed.any(axis=-1), changed.argmax(axis=-1), np.abs(d).argmax())
    normal = np.zeros((height, width, 3))
    np.put_along_axis(normal, axis[..., None], -np.sign(d[axis])[..., None], axis=-1)
    lambert = np.abs(normal @ _LIGHT)
    depth = ts[first] / (2 * RADIUS)
    shade = (0.35 + 0.65 * lambert) * (1.0 - 0.35 * depth)
    img = np.full((height, width, 3), BACKGROUND)
    img[hit] = shade[hit, None] * _TINT
    return np.clip(img, 0.0, 1.0)


def view_directions(V: int, seed: int) -> np.ndarray:
    """V seeded pseudo-random unit directions."""
    if V < 1:
        raise ValueError(f"need at least one view, got V={V}")
    rng = np.random.default_rng(seed)
    dirs = rng.standard_normal((V, 3))
    return dirs / np.linalg.norm(dirs, axis=1, keepdims=True)


def render_views(grid: np.ndarray, V: int, seed: int, height: int = 32, width: int = 32) -> np.ndarray:
    """(V, H, W, 3) renders from seeded directions."""
    return np.stack([render_view(grid, d, height, width) for d in view_directions(V, seed)])
