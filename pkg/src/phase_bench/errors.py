"""Exception hierarchy shared across phase_bench."""


class PhaseBenchError(Exception):
    """Base class for all errors raised by phase_bench."""


class NonFiniteError(PhaseBenchError, ValueError):
    """Input or intermediate samples contain NaN or inf."""


class ShapeMismatchError(PhaseBenchError, ValueError):
    pass


class ImageFormatError(PhaseBenchError):
    """Base for PFM/PGM decoding failures."""


class MalformedHeaderError(ImageFormatError):
    pass


class TruncatedPayloadError(ImageFormatError):
    pass


class UnsupportedFormatError(ImageFormatError):
    pass


class FilterSymmetryError(PhaseBenchError):
    """A spectral filter produced a non-negligible imaginary part from a real image."""


class PowerLawFitError(PhaseBenchError, ValueError):
    pass


class ZeroVarianceError(PhaseBenchError, ValueError):
    """NPCC is undefined when either argument is constant."""


class DivergenceError(PhaseBenchError):
    def __init__(self, message, epoch=None, batch=None, layer=None):
        super().__init__(message)
        self.epoch = epoch
        self.batch = batch
        self.layer = layer


class CheckpointError(PhaseBenchError):
    pass


class CheckpointVersionError(CheckpointError):
    pass


class CheckpointChecksumError(CheckpointError):
    pass


class ConfigMismatchError(CheckpointError):
    pass


class CalibrationError(PhaseBenchError, ValueError):
    pass


class ConfigError(PhaseBenchError, ValueError):
    """Invalid experiment configuration; ``field`` names the offending key path."""

    def __init__(self, message, field=None):
        super().__init__(f"{field}: {message}" if field else message)
        self.field = field


class MissingArtifactError(PhaseBenchError, FileNotFoundError):
    pass
