"""Input checks shared by the estimator API and the CLI."""

from __future__ import annotations

import numbers

import numpy as np
from sklearn.exceptions import NotFittedError

from vxc.exceptions import DimensionError, DomainError


def check_random_state(seed) -> np.random.Generator:
    """None, an int or a Generator → Generator."""
    if seed is None or isinstance(seed, numbers.Integral):
        return np.random.default_rng(seed)
    if isinstance(seed, np.random.Generator):
        return seed
    raise TypeError(f"cannot build a Generator from {type(seed).__name__}")


def _finite_unit(a: np.ndarray, what: str) -> None:
    if not np.all(np.isfinite(a)):
        raise DomainError(f"{what} contain NaN or infinite values")
    if a.size and (a.min() < 0.0 or a.max() > 1.0):
        raise DomainError(f"{what} must lie in [0, 1], got range [{a.min():.3g}, {a.max():.3g}]")


def check_images(X, height=None, width=None) -> np.ndarray:
    """(n, H, W, 3) or a single (H, W, 3) image, values in [0, 1]; returns a float array with a batch axis."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 3:
        X = X[None]
    if X.ndim != 4 or X.shape[-1] != 3:
        raise DimensionError(f"expected images shaped (n, H, W, 3), got {X.shape}")
    if height is not None and X.shape[1:3] != (height, width):
        raise DimensionError(f"expected {height}x{width} images, got {X.shape[1]}x{X.shape[2]}")
    _finite_unit(X, "images")
    return X


def check_views(X, height=None, width=None, max_views=None) -> np.ndarray:
    """(n, V, H, W, 3) view stacks in [0, 1]."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 5 or X.shape[-1] != 3:
        raise DimensionError(f"expected views shaped (n, V, H, W, 3), got {X.shape}")
    if X.shape[1] < 1:
        raise DimensionError("need at least one view per example")
    if max_views is not None and X.shape[1] > max_views:
        raise DimensionError(f"at most {max_views} views per example, got {X.shape[1]}")
    if height is not None and X.shape[2:4] != (height, width):
        raise DimensionError(f"expected {height}x{width} views, got {X.shape[2]}x{X.shape[3]}")
    _finite_unit(X, "views")
    return X


def check_grids(y, n=None, D=None) -> np.ndarray:
    """(n, D, D, D) occupancy grids → bool."""
    y = np.asarray(y)
    if y.ndim != 4 or len(set(y.shape[1:])) != 1:
        raise DimensionError(f"expected cubic grids shaped (n, D, D, D), got {y.shape}")
    if n is not None and len(y) != n:
        raise DimensionError(f"{len(y)} grids for {n} examples")
    if D is not None and y.shape[1] != D:
        raise DimensionError(f"expected {D}^3 grids, got {y.shape[1]}^3")
    if y.dtype != bool:
        if not np.isin(y, (0, 1)).all():
            raise DomainError("occupancy grids must be binary")
        y = y.astype(bool)
    return y


def check_is_fitted(estimator, attr: str = "model_") -> None:
    if getattr(estimator, attr, None) is None:
        raise NotFittedError(f"{type(estimator).__name__} is not fitted yet; call fit first")
