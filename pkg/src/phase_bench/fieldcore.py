"""Grid conventions shared by every module.

Images and complex fields are plain 2D numpy arrays indexed ``[row, col]``.
Physical sampling is carried separately as a ``pitch`` in meters; ``None``
means a dimensionless grid where frequencies are in cycles per pixel.

The DFT convention is the unnormalized forward sum with a ``1/(H*W)``
factor on the inverse, frequencies in standard FFT order (zero at [0, 0]).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import NonFiniteError, ShapeMismatchError


def _check_finite(x, name="input"):
    if not np.all(np.isfinite(x)):
        raise NonFiniteError(f"{name} contains non-finite samples")


def dft2(x: np.ndarray) -> np.ndarray:
    """Unnormalized 2D DFT over the last two axes."""
    x = np.asarray(x)
    if x.ndim < 2 or min(x.shape[-2:]) < 1:
        raise ShapeMismatchError(f"dft2 needs a 2D grid, got shape {x.shape}")
    _check_finite(x)
    return np.fft.fft2(x)


def idft2(X: np.ndarray) -> np.ndarray:
    """Inverse of :func:`dft2` (carries the ``1/(H*W)`` factor)."""
    X = np.asarray(X)
    if X.ndim < 2 or min(X.shape[-2:]) < 1:
        raise ShapeMismatchError(f"idft2 needs a 2D grid, got shape {X.shape}")
    _check_finite(X)
    return np.fft.ifft2(X)


def frequency_axes(shape, pitch=None):
    """Return the 1D frequency axes ``(v, u)`` for a grid of ``shape = (H, W)``.

    ``v`` runs along rows, ``u`` along columns. Units are cycles/meter when
    ``pitch`` is given, cycles/pixel otherwise.
    """
    height, width = shape
    d = 1.0 if pitch is None else float(pitch)
    return np.fft.fftfreq(height, d=d), np.fft.fftfreq(width, d=d)


def frequency_grid(shape, pitch=None):
    """Per-pixel spatial frequencies ``(u, v)``, each of shape ``(H, W)``."""
    fv, fu = frequency_axes(shape, pitch)
    v, u = np.meshgrid(fv, fu, indexing="ij")
    return u, v


def frequency_spacing(shape, pitch=None):
    """Return ``(du, dv)``, the sample spacing of the frequency grid."""
    height, width = shape
    d = 1.0 if pitch is None else float(pitch)
    return 1.0 / (width * d), 1.0 / (height * d)


def radial_frequency(shape, pitch=None):
    u, v = frequency_grid(shape, pitch)
    return np.hypot(u, v)


def nyquist(pitch=None):
    return 0.5 if pitch is None else 0.5 / float(pitch)


@dataclass(frozen=True)
class RadialProfile:
    """Azimuthally binned statistic of a frequency-domain grid.

    Only non-empty bins are kept, so ``centers`` may skip values on
    anisotropic grids.
    """

    centers: np.ndarray
    values: np.ndarray
    counts: np.ndarray

    def __len__(self):
        return len(self.centers)

    def to_csv(self, path):
        with open(path, "w") as fh:
            fh.write("bin_center,value,count\n")
            for c, v, n in zip(self.centers, self.values, self.counts):
                fh.write(f"{c!r},{v!r},{int(n)}\n")


def radial_average(grid: np.ndarray, pitch=None) -> RadialProfile:
    """Average ``grid`` (laid out in FFT order) over rings of constant ``sqrt(u^2+v^2)``.

    Bin ``k`` collects radii in ``[(k - 1/2) dr, (k + 1/2) dr)`` with ``dr`` the
    frequency sample spacing (the coarser axis for non-square grids), and is
    reported at center ``k * dr``.
    """
    grid = np.asarray(grid, dtype=float)
    if grid.ndim != 2:
        raise ShapeMismatchError("radial_average expects a 2D grid")
    dr = max(frequency_spacing(grid.shape, pitch))
    r = radial_frequency(grid.shape, pitch)
    idx = np.floor(r / dr + 0.5).astype(np.int64).ravel()
    counts = np.bincount(idx)
    sums = np.bincount(idx, weights=grid.ravel())
    keep = counts > 0
    bins = np.nonzero(keep)[0]
    return RadialProfile(
        centers=bins * dr, values=sums[keep] / counts[keep], counts=counts[keep]
    )


def cross_section_u(grid: np.ndarray, pitch=None) -> RadialProfile:
    """Slice of ``grid`` along ``v = 0`` for nonnegative ``u`` (one sample per bin)."""
    grid = np.asarray(grid, dtype=float)
    _, fu = frequency_axes(grid.shape, pitch)
    pos = fu >= 0
    order = np.argsort(fu[pos])
    return RadialProfile(
        centers=fu[pos][order],
        values=grid[0, pos][order],
        counts=np.ones(int(pos.sum()), dtype=np.int64),
    )


def minmax_rescale(x: np.ndarray, reference_scale=None, rtol=1e-10) -> np.ndarray:
    """Map ``x`` affinely onto ``[0, 1]``.

    Degenerate (numerically constant) inputs map to all zeros. Constancy is
    judged against ``reference_scale`` when given, e.g. the magnitude of the
    data before a filter that may leave only round-off behind.
    """
    x = np.asarray(x, dtype=float)
    lo, hi = x.min(), x.max()
    span = hi - lo
    scale = np.max(np.abs(x)) if reference_scale is None else reference_scale
    if span <= rtol * scale or span == 0.0:
        return np.zeros_like(x)
    return (x - lo) / span


def center_crop(x: np.ndarray, shape) -> np.ndarray:
    h, w = shape
    top = (x.shape[-2] - h) // 2
    left = (x.shape[-1] - w) // 2
    return x[..., top : top + h, left : left + w]


def center_pad(x: np.ndarray, shape, value=0.0) -> np.ndarray:
    h, w = x.shape[-2:]
    top = (shape[0] - h) // 2
    left = (shape[1] - w) // 2
    out = np.full(x.shape[:-2] + tuple(shape), value, dtype=x.dtype)
    out[..., top : top + h, left : left + w] = x
    return out
