"""Exception types shared across the package."""


class EcgnetError(Exception):
    """Base class for all package errors."""


class ShapeError(EcgnetError):
    """Tensor shapes are incompatible for the requested operation."""


class GradientError(EcgnetError):
    """Backward pass requested on a tensor the tape did not produce."""


class ConfigError(EcgnetError):
    """Invalid model, training, or run configuration."""


class LabelError(EcgnetError):
    """Labels violate the binary or vocabulary contract."""


class MixError(EcgnetError):
    """Impossible synthetic class mix (exclusive classes forced together)."""


class GenerationError(EcgnetError):
    """Synthetic record could not be produced within constraints."""


class NoBeatsError(EcgnetError):
    """Heart-rate estimation found no detectable beats."""


class FormatError(EcgnetError):
    """On-disk file does not carry the expected magic bytes."""


class VersionError(EcgnetError):
    """On-disk file carries an unsupported format version."""


class TruncatedFileError(EcgnetError):
    """On-disk file ended before the declared payload."""


class IntegrityError(EcgnetError):
    """Stored counts or checksums disagree with the payload."""


class TrainingError(EcgnetError):
    """Training aborted (non-finite loss or invalid inputs)."""
