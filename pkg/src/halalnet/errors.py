"""Exception hierarchy shared by all halalnet modules."""


class HalalNetError(Exception):
    """Base class for every error raised by this package."""


class InvalidInputError(HalalNetError, ValueError):
    """An argument violates an operation's preconditions."""


class ShapeMismatchError(InvalidInputError):
    """Tensor or image shapes are incompatible."""


class ConfigError(HalalNetError, ValueError):
    """A config file or config value is malformed."""


class DegenerateHistogramError(HalalNetError):
    """Thresholding is undefined: the image holds a single gray level."""


class DataError(HalalNetError):
    """A data file (image, manifest, checkpoint) cannot be used."""


class FormatError(DataError):
    """A file header or payload is malformed or unsupported."""


class BadMagicError(FormatError):
    """A checkpoint file does not start with the expected magic bytes."""


class TruncatedFileError(DataError):
    """A file ended before its declared payload was complete."""


class ManifestError(DataError):
    """A dataset manifest record is invalid."""


class SamplingError(HalalNetError):
    """A pair sampler needs a pool that is empty."""


class StratificationError(HalalNetError):
    """A class has too few items to split into train/val/test."""


class NumericalError(HalalNetError):
    """Training produced a non-finite value."""
