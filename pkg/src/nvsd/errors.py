"""Exception types shared across the package."""


class NvsdError(Exception):
    """Base class for all package errors."""


class AudioFormatError(NvsdError):
    """Audio does not match the required format (mono, 16-bit PCM, 16 kHz)."""


class TooShortError(NvsdError):
    """Audio shorter than one analysis window."""


class ShapeError(NvsdError):
    """A tensor or matrix has the wrong shape; message names the tensor."""


class WeightFormatError(NvsdError):
    """Weight or feature file is corrupt, truncated, or wrong version."""


class SessionClosedError(NvsdError):
    """Streaming session used after close."""


class EnrollmentError(NvsdError):
    """Enrollment recording unusable (no segments found, too few shots)."""
