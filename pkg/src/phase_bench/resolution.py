"""Two-point resolution test with single-pixel dot pairs."""

from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np

from .calibration import AffineCalibration, apply_calibration
from .imageio import write_pfm, write_pgm
from .optics import ForwardModel, preprocess
from .spectral import SpectralFilter, apply_filter

DEFAULT_DIP_THRESHOLD = 0.8


@dataclass(frozen=True)
class DotPatternSpec:
    spacing: int
    grid_size: int = 64
    amplitude: float = 1.0
    margin: int | None = None  # defaults to 4 * spacing

    def __post_init__(self):
        if self.spacing < 2:
            raise ValueError("dot spacing must be >= 2 pixels")
        if not self.spacing < self.grid_size / 4:
            raise ValueError(
                f"dot spacing {self.spacing} must be < grid_size/4 = {self.grid_size / 4:g}"
            )
        if not 0 < self.amplitude <= 1:
            raise ValueError("dot amplitude must lie in (0, 1]")
        if self.pair_margin < 1:
            raise ValueError("pair margin must be >= 1")

    @property
    def pair_margin(self) -> int:
        return 4 * self.spacing if self.margin is None else int(self.margin)


def dot_pair_layout(spec: DotPatternSpec):
    """Return ``(row, left_col)`` of every pair; the right dot sits at ``left_col + D``.

    Pairs tile a block centered on the grid; a border of ``D`` pixels is kept
    so every cross-section window fits inside the image.
    """
    n, d, m = spec.grid_size, spec.spacing, spec.pair_margin
    avail = n - 2 * d
    nx = max(1, (avail + m) // (d + 1 + m))
    ny = max(1, (avail + m) // (1 + m))
    width = nx * (d + 1) + (nx - 1) * m
    height = ny + (ny - 1) * m
    left0 = (n - width) // 2
    top0 = (n - height) // 2
    return [(top0 + j * (m + 1), left0 + i * (d + 1 + m)) for j in range(ny) for i in range(nx)]


def generate_dot_pattern(spec: DotPatternSpec) -> np.ndarray:
    img = np.zeros((spec.grid_size, spec.grid_size))
    for row, col in dot_pair_layout(spec):
        img[row, col] = spec.amplitude
        img[row, col + spec.spacing] = spec.amplitude
    return img


def cross_section(image: np.ndarray, location, spacing: int) -> np.ndarray:
    """Row through a dot pair, windowed to ``[left - D, right + D]`` (``3D + 1`` samples)."""
    row, col = location
    lo, hi = col - spacing, col + 2 * spacing + 1
    if not (0 <= row < image.shape[0] and lo >= 0 and hi <= image.shape[1]):
        raise IndexError(f"pair window at {location} with D={spacing} leaves the image")
    return np.asarray(image[row, lo:hi], dtype=float).copy()


@dataclass(frozen=True)
class Decision:
    resolved: bool
    dip_ratio: float
    peaks: tuple
    peak_values: tuple
    reason: str = ""


def _local_peak(profile, expected):
    lo = max(expected - 1, 0)
    hi = min(expected + 2, len(profile))
    idx = lo + int(np.argmax(profile[lo:hi]))
    left = profile[idx - 1] if idx > 0 else -np.inf
    right = profile[idx + 1] if idx + 1 < len(profile) else -np.inf
    return idx, profile[idx] >= left and profile[idx] >= right


def is_resolved(profile, spacing: int, threshold: float = DEFAULT_DIP_THRESHOLD) -> Decision:
    """Two-point dip test on a profile whose dot pair is centered in the window.

    Resolved iff local maxima sit within one pixel of both expected dot
    positions and the deepest sample between them, measured above the
    window minimum, is below ``threshold`` times the smaller peak.
    """
    p = np.asarray(profile, dtype=float)
    if len(p) < spacing + 3:
        raise ValueError(f"profile of length {len(p)} is too short for D={spacing}")
    nan = float("nan")
    if not np.all(np.isfinite(p)):
        return Decision(False, nan, (), (), "non-finite profile")
    left_expected = (len(p) - 1 - spacing) // 2
    i1, ok1 = _local_peak(p, left_expected)
    i2, ok2 = _local_peak(p, left_expected + spacing)
    peaks, values = (i1, i2), (float(p[i1]), float(p[i2]))
    if not (ok1 and ok2):
        return Decision(False, nan, peaks, values, "no local maximum near an expected dot")
    if i2 - i1 < 2:
        return Decision(False, nan, peaks, values, "peaks merged")
    base = p.min()
    height = min(p[i1], p[i2]) - base
    if height <= 0:
        return Decision(False, nan, peaks, values, "flat profile")
    ratio = float((p[i1 + 1 : i2].min() - base) / height)
    return Decision(ratio < threshold, ratio, peaks, values, "" if ratio < threshold else "shallow dip")


@dataclass
class SpacingResult:
    spacing: int
    resolved: bool
    fraction: float
    dip_ratio: float
    peak1: float
    peak2: float
    profiles: list = field(default_factory=list, repr=False)
    reconstruction: np.ndarray | None = field(default=None, repr=False)


@dataclass
class ResolutionReport:
    label: str
    threshold: float
    rows: list
    limit: int | None
    non_monotone: bool

    def limit_or(self, fallback: int) -> int:
        """Numeric limit for comparisons; an unresolved sweep ranks as ``fallback``."""
        return fallback if self.limit is None else self.limit

    def to_csv(self, path):
        with open(path, "w") as fh:
            fh.write(f"# label={self.label} threshold={self.threshold!r} "
                     f"limit={self.limit} non_monotone={int(self.non_monotone)}\n")
            fh.write("D,resolved,dip_ratio,peak1,peak2\n")
            for r in self.rows:
                fh.write(f"{r.spacing},{int(r.resolved)},{r.dip_ratio!r},{r.peak1!r},{r.peak2!r}\n")

    def summary(self) -> str:
        lim = "unresolved at all D" if self.limit is None else str(self.limit)
        flag = " (non-monotone)" if self.non_monotone else ""
        return f"{self.label}: limit={lim}{flag}"


def resolution_frontier(resolved_by_spacing: dict):
    """Smallest D such that D and every larger swept spacing are resolved."""
    spacings = sorted(resolved_by_spacing)
    limit = None
    for d in reversed(spacings):
        if not resolved_by_spacing[d]:
            break
        limit = d
    non_monotone = any(resolved_by_spacing[d] for d in spacings if limit is None or d < limit)
    return limit, non_monotone


def evaluate_spacing(reconstruction, spec: DotPatternSpec, threshold=DEFAULT_DIP_THRESHOLD):
    decisions, profiles = [], []
    for loc in dot_pair_layout(spec):
        prof = cross_section(reconstruction, loc, spec.spacing)
        profiles.append(prof)
        decisions.append(is_resolved(prof, spec.spacing, threshold))
    votes = sum(d.resolved for d in decisions)
    ratios = [d.dip_ratio for d in decisions if np.isfinite(d.dip_ratio)]
    return SpacingResult(
        spacing=spec.spacing,
        resolved=votes * 2 > len(decisions),
        fraction=votes / len(decisions),
        dip_ratio=float(np.median(ratios)) if ratios else float("nan"),
        peak1=float(np.mean([d.peak_values[0] for d in decisions])),
        peak2=float(np.mean([d.peak_values[1] for d in decisions])),
        profiles=profiles,
        reconstruction=reconstruction,
    )


def measure_resolution_limit(reconstruct, cal: AffineCalibration, model: ForwardModel,
                             spacings=range(2, 16), post_filter: SpectralFilter | None = None,
                             threshold=DEFAULT_DIP_THRESHOLD, label="baseline",
                             amplitude=1.0, margin=None) -> ResolutionReport:
    """Sweep dot spacings through measurement, inference, calibration and an optional post-filter.

    ``reconstruct`` maps a preprocessed intensity image to a phase estimate.
    """
    background = model.background()
    n = model.config.grid_size
    rows = []
    for d in spacings:
        spec = DotPatternSpec(d, n, amplitude, margin)
        g = preprocess(model.simulate(generate_dot_pattern(spec)), background)
        est = apply_calibration(reconstruct(g), cal)
        if post_filter is not None:
            est = apply_filter(est, post_filter)
        rows.append(evaluate_spacing(est, spec, threshold))
    limit, non_monotone = resolution_frontier({r.spacing: r.resolved for r in rows})
    return ResolutionReport(label, threshold, rows, limit, non_monotone)


def write_report_artifacts(report: ResolutionReport, out_dir):
    """CSV summary, per-D reconstructions (PFM + PGM preview) and cross-section CSVs."""
    os.makedirs(out_dir, exist_ok=True)
    report.to_csv(os.path.join(out_dir, "resolution.csv"))
    for r in report.rows:
        if r.reconstruction is not None:
            write_pfm(r.reconstruction, os.path.join(out_dir, f"recon_D{r.spacing:02d}.pfm"))
            rec = r.reconstruction
            span = np.ptp(rec)
            preview = (rec - rec.min()) / span if span > 0 else np.zeros_like(rec)
            write_pgm(preview, os.path.join(out_dir, f"recon_D{r.spacing:02d}.pgm"))
        with open(os.path.join(out_dir, f"xsec_D{r.spacing:02d}.csv"), "w") as fh:
            fh.write("pair,offset,value\n")
            for k, prof in enumerate(r.profiles):
                for i, v in enumerate(prof):
                    fh.write(f"{k},{i - r.spacing},{v!r}\n")
