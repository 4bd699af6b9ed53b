"""Exception types shared across the pipeline."""


class MzirisError(Exception):
    """Base class for all library errors."""


class GeometryNotFound(MzirisError):
    """No plausible pupil/iris circle pair could be located in an image."""


class MissingQuality(MzirisError):
    """A manifest entry was used where a quality score is required but absent."""


class InsufficientNegatives(MzirisError):
    """The cross-subject pool is too small to balance the positive pairs."""


class NoTwinGroups(MzirisError):
    """Test pairing was requested on a manifest without twin group labels."""


class DecodeError(MzirisError):
    """An image file is missing or cannot be decoded."""


class SizeMismatch(MzirisError):
    """An image does not have the expected 640x480 resolution."""


class MissingMask(MzirisError):
    """A masked input variant was requested without a segmentation mask."""


class DimensionMismatch(MzirisError):
    """Image and mask shapes differ."""


class LengthMismatch(MzirisError):
    """Two embedding vectors have different lengths."""


class ShapeMismatch(MzirisError):
    """A model input does not match the encoder's configured shape."""


class EmptyBatch(MzirisError):
    """A batch reduction was requested on zero pairs."""


class EmptyResults(MzirisError):
    """Metrics were requested on an empty result list."""


class MissingGeometry(MzirisError):
    """Pupil-iris ratios are required but absent from a pair result."""


class Divergence(MzirisError):
    """Training produced a non-finite loss."""


class ConfigError(MzirisError):
    """A config file or checkpoint sidecar is malformed or inconsistent."""
