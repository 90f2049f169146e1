"""Numerical stand-in for the lensless phase-imaging bench.

Path: SLM phase encoding -> 4f telescope with an iris in the pupil plane ->
free-space defocus -> camera intensity. The telescope is modeled as an ideal
low-pass filter plus a relabeling of the sample pitch; its image inversion
is dropped.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import asdict, dataclass

import numpy as np

from .errors import ConfigError, ShapeMismatchError
from .fieldcore import center_crop, center_pad, dft2, frequency_grid, idft2


@dataclass(frozen=True)
class OpticalConfig:
    """Bench parameters. Lengths in meters, phase in radians.

    ``camera_grid`` switches the camera-side grid to ``camera_pitch`` after
    the telescope; otherwise one grid at ``slm_pitch`` is used throughout.
    """

    wavelength: float = 633e-9
    slm_pitch: float = 36e-6
    camera_pitch: float = 12e-6
    f1: float = 0.150
    f2: float = 0.050
    iris_diameter: float = 5e-3
    lens_aperture: float = 25.4e-3
    defocus: float = 0.050
    phase_max: float = math.pi
    grid_size: int = 64
    pad_factor: int = 2
    use_pupil: bool = True
    camera_grid: bool = False

    def __post_init__(self):
        for name in ("wavelength", "slm_pitch", "camera_pitch", "f1", "f2",
                     "iris_diameter", "lens_aperture"):
            if not getattr(self, name) > 0:
                raise ConfigError("must be > 0", field=f"optics.{name}")
        if self.defocus < 0:
            raise ConfigError("must be >= 0", field="optics.defocus")
        if not 0 < self.phase_max <= 2 * math.pi:
            raise ConfigError("must lie in (0, 2*pi]", field="optics.phase_max")
        if self.grid_size < 2:
            raise ConfigError("must be >= 2", field="optics.grid_size")
        if self.pad_factor < 1:
            raise ConfigError("must be >= 1", field="optics.pad_factor")
        if self.camera_grid:
            ratio = self.slm_pitch / self.camera_pitch
            if not math.isclose(self.demagnification, ratio, rel_tol=1e-9):
                raise ConfigError(
                    f"f1/f2 = {self.demagnification:g} must equal "
                    f"slm_pitch/camera_pitch = {ratio:g} when camera_grid is set",
                    field="optics.f2",
                )

    @property
    def demagnification(self) -> float:
        return self.f1 / self.f2

    @property
    def pupil_cutoff(self) -> float:
        """Iris cutoff frequency on the SLM side, cycles/meter."""
        return (self.iris_diameter / 2) / (self.wavelength * self.f1)

    @property
    def numerical_aperture(self) -> float:
        """NA set by the first telescope lens aperture."""
        return (self.lens_aperture / 2) / self.f1

    @property
    def iris_numerical_aperture(self) -> float:
        return (self.iris_diameter / 2) / self.f1

    @property
    def diffraction_limit(self) -> float:
        """Nominal two-point resolution ``lambda / (2 NA)`` in meters."""
        return self.wavelength / (2 * self.numerical_aperture)

    @property
    def slm_nyquist(self) -> float:
        """Highest spatial frequency the SLM can display, cycles/meter."""
        return 0.5 / self.slm_pitch

    @property
    def detector_pitch(self) -> float:
        """Sample pitch of the camera-side grid."""
        return self.slm_pitch / self.demagnification if self.camera_grid else self.slm_pitch

    def fingerprint(self) -> str:
        items = sorted(asdict(self).items())
        text = ";".join(f"{k}={v!r}" for k, v in items)
        return hashlib.sha256(text.encode()).hexdigest()[:16]


def encode_phase(obj: np.ndarray, phase_max: float = math.pi) -> np.ndarray:
    """Map object values in ``[0, 1]`` to a unit-modulus field ``exp(i*phase_max*obj)``."""
    obj = np.asarray(obj, dtype=float)
    if obj.size and (obj.min() < 0.0 or obj.max() > 1.0):
        raise ValueError(
            f"phase object samples must lie in [0, 1], got [{obj.min():g}, {obj.max():g}]"
        )
    return np.exp(1j * phase_max * obj)


def pupil_mask(shape, pitch: float, cutoff: float) -> np.ndarray:
    u, v = frequency_grid(shape, pitch)
    return np.hypot(u, v) <= cutoff


def pupil_filter(field: np.ndarray, config: OpticalConfig, pitch=None) -> np.ndarray:
    """Zero every Fourier component beyond the iris cutoff.

    ``pitch`` is the SLM-side sample pitch of ``field`` (defaults to
    ``config.slm_pitch``). The returned samples lie on the camera-side grid
    whose pitch is ``config.detector_pitch``.
    """
    pitch = config.slm_pitch if pitch is None else pitch
    if pitch is None or not pitch > 0:
        raise ValueError("pupil_filter needs a positive pitch")
    mask = pupil_mask(field.shape, pitch, config.pupil_cutoff)
    return idft2(dft2(field) * mask)


def transfer_function(shape, pitch: float, distance: float, wavelength: float) -> np.ndarray:
    """Angular-spectrum transfer function; evanescent components are zeroed."""
    if distance < 0:
        raise ValueError("propagation distance must be >= 0 (back-propagation is unsupported)")
    u, v = frequency_grid(shape, pitch)
    rho2 = u * u + v * v
    k2 = 1.0 / wavelength**2
    propagating = rho2 <= k2
    root = np.sqrt(np.where(propagating, k2 - rho2, 0.0))
    # kz = 1/lambda - rho^2 / (1/lambda + root); the plane-wave phase is reduced
    # modulo one cycle first so long distances keep full precision.
    carrier = (distance / wavelength) % 1.0
    excess = distance * rho2 / (1.0 / wavelength + root)
    h = np.exp(2j * np.pi * (carrier - excess))
    return np.where(propagating, h, 0.0)


def propagate(field: np.ndarray, distance: float, wavelength: float, pitch: float) -> np.ndarray:
    """Propagate a sampled scalar field by ``distance`` with the angular spectrum method."""
    if distance < 0:
        raise ValueError("propagation distance must be >= 0 (back-propagation is unsupported)")
    if pitch is None or not pitch > 0:
        raise ValueError("propagate needs a positive pitch")
    field = np.asarray(field, dtype=complex)
    if distance == 0:
        return field.copy()
    return idft2(dft2(field) * transfer_function(field.shape, pitch, distance, wavelength))


def capture_intensity(field: np.ndarray) -> np.ndarray:
    field = np.asarray(field)
    return field.real**2 + field.imag**2


class ForwardModel:
    """Precomputed object -> raw intensity map for one :class:`OpticalConfig`."""

    def __init__(self, config: OpticalConfig | None = None):
        self.config = config or OpticalConfig()
        c = self.config
        n = c.grid_size * c.pad_factor
        self.padded_shape = (n, n)
        self.mask = pupil_mask(self.padded_shape, c.slm_pitch, c.pupil_cutoff)
        self.transfer = transfer_function(
            self.padded_shape, c.detector_pitch, c.defocus, c.wavelength
        )
        if not c.use_pupil:
            self.mask = np.ones(self.padded_shape, dtype=bool)
        # pupil and defocus are both diagonal in frequency: fuse them
        self._kernel = self.transfer * self.mask
        self.mask.setflags(write=False)
        self.transfer.setflags(write=False)
        self._kernel.setflags(write=False)

    @property
    def shape(self):
        n = self.config.grid_size
        return (n, n)

    def simulate(self, obj: np.ndarray) -> np.ndarray:
        """Raw camera intensity for a phase object with values in ``[0, 1]``."""
        obj = np.asarray(obj, dtype=float)
        if obj.shape != self.shape:
            raise ShapeMismatchError(f"object shape {obj.shape} != model grid {self.shape}")
        field = encode_phase(center_pad(obj, self.padded_shape), self.config.phase_max)
        out = idft2(dft2(field) * self._kernel)
        return capture_intensity(center_crop(out, self.shape))

    def background(self) -> np.ndarray:
        return self.simulate(np.zeros(self.shape))


def simulate_measurement(obj: np.ndarray, model: ForwardModel) -> np.ndarray:
    return model.simulate(obj)


def preprocess(raw: np.ndarray, background: np.ndarray) -> np.ndarray:
    """Subtract the background, clamp negatives to zero and scale the peak to 1."""
    raw = np.asarray(raw, dtype=float)
    background = np.asarray(background, dtype=float)
    if raw.shape != background.shape:
        raise ShapeMismatchError(f"raw {raw.shape} and background {background.shape} differ")
    diff = np.maximum(raw - background, 0.0)
    peak = diff.max() if diff.size else 0.0
    if peak <= 0.0:
        return np.zeros_like(diff)
    return diff / peak
