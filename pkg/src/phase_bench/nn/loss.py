"""Negative Pearson correlation coefficient (NPCC) loss and its exact gradient.

For a batch, the loss is the sum of per-example NPCC values; statistics are
taken over the last two (spatial) axes of each example.
"""

from __future__ import annotations

import numpy as np

from ..errors import ShapeMismatchError, ZeroVarianceError


def _centered(f, fhat):
    f = np.asarray(f, dtype=np.result_type(f, fhat, np.float32))
    fhat = np.asarray(fhat, dtype=f.dtype)
    if f.shape != fhat.shape:
        raise ShapeMismatchError(f"npcc arguments differ in shape: {f.shape} vs {fhat.shape}")
    axes = (-2, -1)
    x = f - f.mean(axis=axes, keepdims=True)
    y = fhat - fhat.mean(axis=axes, keepdims=True)
    sx = np.sqrt((x * x).sum(axis=axes, keepdims=True))
    sy = np.sqrt((y * y).sum(axis=axes, keepdims=True))
    if np.any(sx == 0):
        raise ZeroVarianceError("NPCC undefined: ground truth has zero variance")
    if np.any(sy == 0):
        raise ZeroVarianceError("NPCC undefined: estimate has zero variance")
    return x, y, sx, sy


def npcc_per_example(f, fhat) -> np.ndarray:
    x, y, sx, sy = _centered(f, fhat)
    return -(x * y).sum(axis=(-2, -1)) / (sx * sy)[..., 0, 0]


def npcc(f, fhat) -> float:
    """Sum of per-example NPCC values (a single value for one 2D image)."""
    return float(npcc_per_example(f, fhat).sum())


def npcc_grad(f, fhat) -> np.ndarray:
    """``d npcc(f, fhat) / d fhat``, same shape as ``fhat``."""
    x, y, sx, sy = _centered(f, fhat)
    r = (x * y).sum(axis=(-2, -1), keepdims=True) / (sx * sy)
    return -(x / (sx * sy) - r * y / (sy * sy))


def npcc_with_grad(f, fhat):
    x, y, sx, sy = _centered(f, fhat)
    r = (x * y).sum(axis=(-2, -1), keepdims=True) / (sx * sy)
    grad = -(x / (sx * sy) - r * y / (sy * sy))
    return -r[..., 0, 0], grad
