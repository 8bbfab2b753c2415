"""Exception and warning types shared across the package."""


class BsannError(Exception):
    """Base class for all package errors."""


class ConfigurationError(BsannError):
    """A config value violates its contract (bad FFT size, malformed schema, ...)."""


class GeometryError(BsannError):
    """A position or layout violates a geometric precondition."""


class EmptyBandError(BsannError):
    """The requested frequency band contains no grid bins."""


class InvalidSpectrumError(BsannError):
    """A one-sided spectrum cannot represent a real signal (imag at DC/Nyquist)."""


class SeriesConvergenceError(BsannError):
    """Spherical-scattering series did not converge at the configured order."""

    def __init__(self, message: str, tail_estimate: float):
        super().__init__(message)
        self.tail_estimate = tail_estimate


class PropagationError(BsannError):
    """Non-finite values encountered while assembling transfer functions."""


class DegeneratePlantError(BsannError):
    """Ear responses carry no energy anywhere in the band."""


class NonFiniteLossError(BsannError):
    """A loss evaluated to NaN/inf; the message names the offending term."""


class TrainingDivergedError(BsannError):
    """Training loss went non-finite; carries the last finite parameter state."""

    def __init__(self, message: str, last_good_params=None):
        super().__init__(message)
        self.last_good_params = last_good_params


class DatasetFormatError(BsannError):
    """Dataset or checkpoint file is malformed or has an unsupported version."""


class ChecksumError(DatasetFormatError):
    """Stored payload digest does not match the file contents."""


class TruncationWarning(UserWarning):
    """Simulated impulse response was longer than the FFT buffer and was cut."""


class OverlapWarning(UserWarning):
    """Direct-path gate window overlaps the earliest reflection."""
