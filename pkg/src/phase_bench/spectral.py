"""Corpus power spectra, power-law fitting and radial spectral filters."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import FilterSymmetryError, PowerLawFitError, ShapeMismatchError
from .fieldcore import (
    RadialProfile,
    cross_section_u,
    dft2,
    frequency_spacing,
    idft2,
    minmax_rescale,
    nyquist,
    radial_average,
    radial_frequency,
)

IMAG_RTOL = 1e-10


@dataclass(frozen=True)
class PSDEstimate:
    psd2d: np.ndarray
    radial: RadialProfile
    cross_section: RadialProfile
    exponent: float
    fit_band: tuple
    pitch: float | None = None


@dataclass(frozen=True)
class SpectralFilter:
    """Real, nonnegative frequency-domain gain laid out in FFT order."""

    gain: np.ndarray
    dc_gain: float
    pitch: float | None = None

    @property
    def shape(self):
        return self.gain.shape


def default_fit_band(shape, pitch=None):
    """Radial band ``[3 * dr, nyquist / 2]`` used for power-law fits."""
    dr = max(frequency_spacing(shape, pitch))
    return (3 * dr, nyquist(pitch) / 2)


def fit_power_law(radial: RadialProfile, band) -> float:
    """Least-squares slope of ``log(value)`` against ``log(radius)`` inside ``band``.

    Bin centers are selected with a small tolerance so band edges that sit
    exactly on a bin are included despite round-off.
    """
    r_min, r_max = band
    tol = 1e-9 * max(abs(r_max), 1e-300)
    sel = (radial.centers >= r_min - tol) & (radial.centers <= r_max + tol) & (radial.centers > 0)
    if sel.sum() < 4:
        raise PowerLawFitError(f"fit band {band} holds {int(sel.sum())} bins, need >= 4")
    values = radial.values[sel]
    if np.any(values <= 0):
        raise PowerLawFitError("power-law fit needs strictly positive values in the band")
    x = np.log(radial.centers[sel])
    y = np.log(values)
    design = np.stack([x, np.ones_like(x)], axis=1)
    (slope, _), *_ = np.linalg.lstsq(design, y, rcond=None)
    return float(slope)


def _pairwise_sum(terms):
    """Deterministic tree reduction of a list of equal-shape arrays."""
    terms = list(terms)
    while len(terms) > 1:
        nxt = [terms[i] + terms[i + 1] for i in range(0, len(terms) - 1, 2)]
        if len(terms) % 2:
            nxt.append(terms[-1])
        terms = nxt
    return terms[0]


def estimate_psd(corpus, pitch=None, band=None) -> PSDEstimate:
    """Mean power spectrum of mean-subtracted images, peak-normalized, plus its power-law fit."""
    images = [np.asarray(im, dtype=float) for im in corpus]
    if not images:
        raise ValueError("estimate_psd needs a nonempty corpus")
    shape = images[0].shape
    if any(im.shape != shape for im in images):
        raise ShapeMismatchError("corpus images have mixed dimensions")
    powers = [np.abs(dft2(im - im.mean())) ** 2 for im in images]
    # sort so the result does not depend on corpus order
    order = sorted(range(len(powers)), key=lambda i: powers[i].tobytes())
    psd = _pairwise_sum([powers[i] for i in order]) / len(powers)
    peak = psd.max()
    if peak > 0:
        psd = psd / peak
    radial = radial_average(psd, pitch)
    band = default_fit_band(shape, pitch) if band is None else tuple(band)
    exponent = fit_power_law(radial, band)
    return PSDEstimate(
        psd2d=psd,
        radial=radial,
        cross_section=cross_section_u(psd, pitch),
        exponent=exponent,
        fit_band=band,
        pitch=pitch,
    )


def flattening_filter(shape, pitch=None) -> SpectralFilter:
    """Gain ``sqrt(u^2 + v^2)``: the inverse of an inverse-square PSD's amplitude."""
    if min(shape) < 2:
        raise ValueError("flattening_filter needs at least 2 samples per axis")
    gain = radial_frequency(shape, pitch)
    gain[0, 0] = 0.0
    gain.setflags(write=False)
    return SpectralFilter(gain=gain, dc_gain=0.0, pitch=pitch)


def apply_filter(image: np.ndarray, filt: SpectralFilter) -> np.ndarray:
    """Multiply the spectrum of a real image by ``filt.gain`` and return the real result."""
    image = np.asarray(image, dtype=float)
    if image.shape[-2:] != filt.shape:
        raise ShapeMismatchError(f"image {image.shape} does not match filter {filt.shape}")
    out = idft2(filt.gain * dft2(image))
    scale = np.max(np.abs(out.real), initial=0.0)
    residue = np.max(np.abs(out.imag), initial=0.0)
    reference = max(scale, np.max(np.abs(image), initial=0.0) * np.max(filt.gain, initial=0.0))
    if residue > IMAG_RTOL * max(reference, 1e-300):
        raise FilterSymmetryError(
            f"imaginary residue {residue:.3e} exceeds {IMAG_RTOL:g} of signal scale {reference:.3e}"
        )
    return out.real


def premodulate(image: np.ndarray, filt: SpectralFilter) -> np.ndarray:
    """Filter then min-max rescale to ``[0, 1]``; constant results map to zeros."""
    image = np.asarray(image, dtype=float)
    out = apply_filter(image, filt)
    reference = np.max(np.abs(image), initial=0.0) * np.max(filt.gain, initial=0.0)
    return minmax_rescale(out, reference_scale=max(reference, np.max(np.abs(out), initial=0.0)))
