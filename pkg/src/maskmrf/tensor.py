"""Dense image tensors and the sampling primitives built on them.

A tensor is a numpy float64 array of shape (height, width, channels),
row-major. Every module in the package passes these around; this module
owns validation, elementwise arithmetic, and bilinear sampling so that the
geometric conventions (half-pixel centers, edge clamping) live in exactly
one place.
"""

from __future__ import annotations

import numpy as np

DTYPE = np.float64


def as_tensor(data, copy: bool = False) -> np.ndarray:
    """Validate and convert array-like data to a (H, W, C) float tensor.

    2-D input is promoted to a single channel. Raises ValueError for
    other ranks, for empty axes, and for non-finite values.
    """
    arr = np.array(data, dtype=DTYPE, copy=copy) if copy else np.asarray(data, dtype=DTYPE)
    if arr.ndim == 2:
        arr = arr[:, :, np.newaxis]
    if arr.ndim != 3:
        raise ValueError(f"tensor must be 2-D or 3-D, got shape {arr.shape}")
    if min(arr.shape) < 1:
        raise ValueError(f"tensor axes must be non-empty, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError("tensor contains non-finite values")
    return arr


def elementwise(a, b, op) -> np.ndarray:
    """Apply a binary numpy ufunc to two tensors of identical shape."""
    a = as_tensor(a)
    b = as_tensor(b)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    return op(a, b)


def add(a, b) -> np.ndarray:
    return elementwise(a, b, np.add)


def sub(a, b) -> np.ndarray:
    return elementwise(a, b, np.subtract)


def mul(a, b) -> np.ndarray:
    return elementwise(a, b, np.multiply)


def sum_squares(t) -> float:
    """Sum of squared entries, as a python float."""
    t = as_tensor(t)
    flat = t.ravel()
    return float(np.dot(flat, flat))


def sample_bilinear(t, ys, xs) -> np.ndarray:
    """Sample a tensor at fractional (y, x) coordinates.

    Coordinates are in pixel units where integer values land exactly on
    pixel centers. Samples outside the support clamp to the nearest edge
    pixel. `ys` and `xs` must have the same shape; the result has that
    shape plus the channel axis.
    """
    t = as_tensor(t)
    h, w = t.shape[:2]
    ys = np.clip(np.asarray(ys, dtype=DTYPE), 0.0, float(h - 1))
    xs = np.clip(np.asarray(xs, dtype=DTYPE), 0.0, float(w - 1))
    y0 = np.floor(ys).astype(np.int64)
    x0 = np.floor(xs).astype(np.int64)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    fy = (ys - y0)[..., np.newaxis]
    fx = (xs - x0)[..., np.newaxis]
    top = t[y0, x0] * (1.0 - fx) + t[y0, x1] * fx
    bot = t[y1, x0] * (1.0 - fx) + t[y1, x1] * fx
    return top * (1.0 - fy) + bot * fy


def resample_bilinear(t, new_height: int, new_width: int) -> np.ndarray:
    """Resize a tensor with bilinear interpolation, half-pixel centers.

    Output pixel (i, j) samples the source at
    ((i + 0.5) * H/new_height - 0.5, (j + 0.5) * W/new_width - 0.5),
    clamped to the source support. Resampling to the original size
    reproduces the input exactly.
    """
    t = as_tensor(t)
    if new_height < 1 or new_width < 1:
        raise ValueError(f"target size must be positive, got {new_height}x{new_width}")
    h, w = t.shape[:2]
    ys = (np.arange(new_height, dtype=DTYPE) + 0.5) * (h / new_height) - 0.5
    xs = (np.arange(new_width, dtype=DTYPE) + 0.5) * (w / new_width) - 0.5
    grid_y, grid_x = np.meshgrid(ys, xs, indexing="ij")
    return sample_bilinear(t, grid_y, grid_x)
