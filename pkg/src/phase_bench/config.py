"""Experiment configuration files.

The format is one ``section.key = value`` assignment per line; ``#`` starts a
comment and blank lines are ignored. Every key has a default, so an empty
file is a valid configuration. Unknown keys and malformed values raise
:class:`ConfigError` carrying the ``section.key`` path.

Sections
--------
experiment
    ``seed`` (drives data synthesis, splitting, initialization and shuffling).
optics
    Fields of :class:`OpticalConfig` except ``grid_size``, which follows ``dataset.n``.
dataset
    ``n``, ``train_count``, ``test_count``, ``calibration_count``, ``exponent``, ``ingest_path``.
network
    Architecture fields of :class:`NetworkConfig` except ``input_size`` and ``seed``.
training
    ``learning_rate``, ``batch_size``, ``epochs``, ``validation_fraction``.
spectral
    ``premodulate``, ``fit_band_low``, ``fit_band_high`` (cycles per sample; 0 means default).
calibration
    ``levels``, ``tail``.
resolution
    ``d_min``, ``d_max``, ``threshold``, ``amplitude``.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, field, fields, replace

from .errors import ConfigError
from .nn.model import NetworkConfig
from .nn.train import TrainHyper
from .optics import OpticalConfig

_TRUE = {"1", "true", "yes", "on"}
_FALSE = {"0", "false", "no", "off"}


@dataclass(frozen=True)
class ExperimentSection:
    seed: int = 0


@dataclass(frozen=True)
class DatasetSection:
    n: int = 64
    train_count: int = 1000
    test_count: int = 100
    calibration_count: int = 100
    exponent: float = -2.0
    ingest_path: str = ""

    @property
    def total(self):
        return self.train_count + self.test_count + self.calibration_count


@dataclass(frozen=True)
class NetworkSection:
    n_down: int = 3
    n_up: int = 3
    n_res: int = 1
    widths: tuple = (16, 32, 64)
    decoder_width: int = 16
    kernel: int = 3
    dtype: str = "float64"


@dataclass(frozen=True)
class TrainingSection:
    learning_rate: float = 1e-3
    batch_size: int = 16
    epochs: int = 200
    validation_fraction: float = 0.1


@dataclass(frozen=True)
class SpectralSection:
    premodulate: bool = False
    fit_band_low: float = 0.0
    fit_band_high: float = 0.0


@dataclass(frozen=True)
class CalibrationSection:
    levels: int = 100
    tail: float = 0.01


@dataclass(frozen=True)
class ResolutionSection:
    d_min: int = 2
    d_max: int = 15
    threshold: float = 0.8
    amplitude: float = 1.0


_OPTICS_KEYS = tuple(f.name for f in fields(OpticalConfig) if f.name != "grid_size")


def _optics_defaults() -> dict:
    defaults = OpticalConfig()
    return {key: getattr(defaults, key) for key in _OPTICS_KEYS}


@dataclass(frozen=True)
class ExperimentConfig:
    experiment: ExperimentSection = field(default_factory=ExperimentSection)
    optics: dict = field(default_factory=_optics_defaults)
    dataset: DatasetSection = field(default_factory=DatasetSection)
    network: NetworkSection = field(default_factory=NetworkSection)
    training: TrainingSection = field(default_factory=TrainingSection)
    spectral: SpectralSection = field(default_factory=SpectralSection)
    calibration: CalibrationSection = field(default_factory=CalibrationSection)
    resolution: ResolutionSection = field(default_factory=ResolutionSection)

    # -- derived objects ------------------------------------------------------
    @property
    def seed(self) -> int:
        return self.experiment.seed

    def optical_config(self) -> OpticalConfig:
        return OpticalConfig(grid_size=self.dataset.n, **self.optics)

    def network_config(self) -> NetworkConfig:
        net = self.network
        return NetworkConfig(input_size=self.dataset.n, n_down=net.n_down, n_up=net.n_up,
                             n_res=net.n_res, widths=net.widths,
                             decoder_width=net.decoder_width, kernel=net.kernel,
                             seed=self.seed, dtype=net.dtype)

    def train_hyper(self) -> TrainHyper:
        t = self.training
        return TrainHyper(learning_rate=t.learning_rate, batch_size=t.batch_size,
                          epochs=t.epochs, validation_fraction=t.validation_fraction,
                          seed=self.seed)

    @property
    def spacings(self):
        return range(self.resolution.d_min, self.resolution.d_max + 1)

    def fit_band(self):
        """Explicit PSD fit band in cycles per sample, or ``None`` for the default."""
        s = self.spectral
        if s.fit_band_low == 0 and s.fit_band_high == 0:
            return None
        return (s.fit_band_low, s.fit_band_high)

    def with_seed(self, seed: int) -> "ExperimentConfig":
        cfg = replace(self, experiment=replace(self.experiment, seed=int(seed)))
        cfg.validate()
        return cfg

    # -- text form ------------------------------------------------------------
    def to_text(self) -> str:
        """Canonical ``section.key = value`` listing of every field (defaults included)."""
        lines = [f"experiment.seed = {self.seed}"]
        for key in _OPTICS_KEYS:
            lines.append(f"optics.{key} = {_format(self.optics[key])}")
        for name in ("dataset", "network", "training", "spectral", "calibration", "resolution"):
            section = getattr(self, name)
            for f in fields(section):
                lines.append(f"{name}.{f.name} = {_format(getattr(section, f.name))}")
        return "\n".join(lines) + "\n"

    # -- validation -----------------------------------------------------------
    def validate(self) -> None:
        d = self.dataset
        if d.n < 8:
            raise ConfigError("must be >= 8", field="dataset.n")
        for key in ("train_count", "test_count", "calibration_count"):
            if getattr(d, key) < 1:
                raise ConfigError("must be >= 1", field=f"dataset.{key}")
        if not math.isfinite(d.exponent):
            raise ConfigError("must be finite", field="dataset.exponent")
        if d.ingest_path and not os.path.isdir(d.ingest_path):
            raise ConfigError(f"directory {d.ingest_path!r} does not exist",
                              field="dataset.ingest_path")
        self.optical_config()
        self.network_config()
        t = self.training
        if not t.learning_rate >= 0:
            raise ConfigError("must be >= 0", field="training.learning_rate")
        if t.batch_size < 1:
            raise ConfigError("must be >= 1", field="training.batch_size")
        if t.epochs < 0:
            raise ConfigError("must be >= 0", field="training.epochs")
        if not 0 <= t.validation_fraction < 1:
            raise ConfigError("must lie in [0, 1)", field="training.validation_fraction")
        s = self.spectral
        if self.fit_band() is not None and not 0 <= s.fit_band_low < s.fit_band_high <= 0.5:
            raise ConfigError("need 0 <= fit_band_low < fit_band_high <= 0.5",
                              field="spectral.fit_band_high")
        c = self.calibration
        if c.levels < 2:
            raise ConfigError("must be >= 2", field="calibration.levels")
        if not 0 <= c.tail < 0.5:
            raise ConfigError("must lie in [0, 0.5)", field="calibration.tail")
        r = self.resolution
        if r.d_min < 2:
            raise ConfigError("must be >= 2", field="resolution.d_min")
        if r.d_max < r.d_min:
            raise ConfigError("must be >= resolution.d_min", field="resolution.d_max")
        if 4 * r.d_max >= d.n:
            raise ConfigError(f"dot spacing must stay below n/4 = {d.n / 4:g}",
                              field="resolution.d_max")
        if not 0 < r.threshold < 1:
            raise ConfigError("must lie in (0, 1)", field="resolution.threshold")
        if not 0 < r.amplitude <= 1:
            raise ConfigError("must lie in (0, 1]", field="resolution.amplitude")


def _format(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ",".join(str(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _convert(raw: str, default, path: str):
    try:
        if isinstance(default, bool):
            low = raw.lower()
            if low in _TRUE:
                return True
            if low in _FALSE:
                return False
            raise ValueError(raw)
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            value = float(raw)
            if not math.isfinite(value):
                raise ValueError(raw)
            return value
        if isinstance(default, tuple):
            return tuple(int(v) for v in raw.split(",") if v.strip())
        return raw
    except ValueError:
        kind = type(default).__name__
        raise ConfigError(f"cannot parse {raw!r} as {kind}", field=path) from None


def parse_config(text: str) -> ExperimentConfig:
    """Parse configuration text; see the module docstring for the format."""
    sections = {"experiment": {}, "optics": {}, "dataset": {}, "network": {}, "training": {},
                "spectral": {}, "calibration": {}, "resolution": {}}
    defaults = ExperimentConfig()
    optics_defaults = OpticalConfig()
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'section.key = value'")
        path, raw = (s.strip() for s in line.split("=", 1))
        if "." not in path:
            raise ConfigError(f"line {lineno}: key must be 'section.key'", field=path)
        section, key = path.split(".", 1)
        if section not in sections:
            raise ConfigError("unknown section", field=path)
        if section == "optics":
            if key not in _OPTICS_KEYS:
                raise ConfigError("unknown key", field=path)
            default = getattr(optics_defaults, key)
        else:
            sec_default = getattr(defaults, section)
            if key not in {f.name for f in fields(sec_default)}:
                raise ConfigError("unknown key", field=path)
            default = getattr(sec_default, key)
        if key in sections[section]:
            raise ConfigError(f"line {lineno}: duplicate assignment", field=path)
        sections[section][key] = _convert(raw, default, path)
    cfg = ExperimentConfig(
        experiment=ExperimentSection(**sections["experiment"]),
        optics={**_optics_defaults(), **sections["optics"]},
        dataset=DatasetSection(**sections["dataset"]),
        network=NetworkSection(**sections["network"]),
        training=TrainingSection(**sections["training"]),
        spectral=SpectralSection(**sections["spectral"]),
        calibration=CalibrationSection(**sections["calibration"]),
        resolution=ResolutionSection(**sections["resolution"]),
    )
    cfg.validate()
    return cfg


def load_config(path) -> ExperimentConfig:
    if not os.path.isfile(path):
        raise ConfigError(f"config file {path!r} not found", field="--config")
    with open(path) as fh:
        return parse_config(fh.read())


def bundled_config_path(name: str = "desk.cfg") -> str:
    return os.path.join(os.path.dirname(__file__), "configs", name)
