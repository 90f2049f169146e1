"""Affine calibration of correlation-trained network outputs by histogram matching.

A network trained with a correlation loss reproduces the truth only up to
``output = a * truth + b``. Matching equal-CDF-level values of a truth
population and an output population and fitting a line recovers ``(a, b)``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .errors import CalibrationError

log = logging.getLogger(__name__)

DEFAULT_LEVELS = 100
DEFAULT_TAIL = 0.01


class EmpiricalCDF:
    """Piecewise-linear CDF through the order statistics of a sample.

    The k-th smallest of n samples sits at level ``k / (n - 1)``; tied
    samples take the highest level of the tie (right-continuous at atoms).
    """

    def __init__(self, values):
        values = np.sort(np.asarray(values, dtype=float).ravel())
        if values.size == 0:
            raise CalibrationError("empirical CDF of an empty sample")
        if values.size < 2:
            raise CalibrationError("empirical CDF needs at least 2 samples")
        self.sorted = values
        levels = np.arange(values.size) / (values.size - 1)
        uniq, last = np.unique(values[::-1], return_index=True)
        self._atoms = uniq
        self._atom_levels = levels[::-1][last]

    def __call__(self, x):
        return np.interp(x, self._atoms, self._atom_levels, left=0.0, right=1.0)

    def quantile(self, level):
        level = np.asarray(level, dtype=float)
        if np.any((level < 0) | (level > 1)):
            raise ValueError("quantile levels must lie in [0, 1]")
        n = self.sorted.size
        pos = level * (n - 1)
        lo = np.floor(pos).astype(np.int64)
        hi = np.minimum(lo + 1, n - 1)
        frac = pos - lo
        return self.sorted[lo] + frac * (self.sorted[hi] - self.sorted[lo])


def empirical_cdf(values) -> EmpiricalCDF:
    return EmpiricalCDF(values)


def match_levels(count: int, tail: float = DEFAULT_TAIL) -> np.ndarray:
    """Mid-bin levels of ``count`` equal bins spanning ``[tail, 1 - tail]``."""
    if count < 2:
        raise CalibrationError("need at least 2 quantile levels")
    return tail + (1 - 2 * tail) * (np.arange(count) + 0.5) / count


def quantile_match(truth, output, levels: int = DEFAULT_LEVELS, tail: float = DEFAULT_TAIL):
    """Return an ``(L, 2)`` array of ``(truth value, output value)`` at equal CDF levels."""
    truth = np.asarray(truth, dtype=float).ravel()
    output = np.asarray(output, dtype=float).ravel()
    if truth.size < levels or output.size < levels:
        raise CalibrationError(f"populations must hold at least {levels} samples")
    if np.ptp(truth) == 0 or np.ptp(output) == 0:
        raise CalibrationError("cannot histogram-match a constant population")
    ell = match_levels(levels, tail)
    return np.stack([empirical_cdf(truth).quantile(ell), empirical_cdf(output).quantile(ell)],
                    axis=1)


@dataclass(frozen=True)
class AffineCalibration:
    a: float
    b: float
    residual: float
    sample_pairs: np.ndarray | None = None

    @property
    def levels(self):
        return 0 if self.sample_pairs is None else len(self.sample_pairs)

    def record(self) -> str:
        return f"a={self.a!r} b={self.b!r} residual={self.residual!r} levels={self.levels}"

    @classmethod
    def parse(cls, text: str) -> "AffineCalibration":
        fields = dict(tok.split("=", 1) for tok in text.split())
        return cls(float(fields["a"]), float(fields["b"]), float(fields["residual"]))


IDENTITY = AffineCalibration(1.0, 0.0, 0.0)


def fit_affine(sample_pairs) -> AffineCalibration:
    """Least-squares fit of ``output = a * truth + b`` through the pairs."""
    pairs = np.asarray(sample_pairs, dtype=float)
    x, y = pairs[:, 0], pairs[:, 1]
    if x.size < 2 or np.all(x == x[0]):
        raise CalibrationError("affine fit needs at least 2 distinct abscissae")
    xm, ym = x.mean(), y.mean()
    dx = x - xm
    a = float(np.dot(dx, y - ym) / np.dot(dx, dx))
    b = float(ym - a * xm)
    residual = float(np.sqrt(np.mean((y - (a * x + b)) ** 2)))
    if a < 0:
        log.warning("negative calibration slope a=%g (contrast inversion)", a)
    return AffineCalibration(a, b, residual, pairs)


def apply_calibration(image, cal: AffineCalibration) -> np.ndarray:
    if abs(cal.a) <= 1e-9:
        raise CalibrationError(f"calibration slope {cal.a!r} is too close to zero to invert")
    return (np.asarray(image, dtype=float) - cal.b) / cal.a


def calibrate(truth, output, levels: int = DEFAULT_LEVELS, tail: float = DEFAULT_TAIL):
    return fit_affine(quantile_match(truth, output, levels, tail))
