"""Exception types shared across the package.

Each class name matches the error name used in the module contracts, with
an ``Error`` suffix.
"""


class Vlm3dError(Exception):
    """Base class for all package errors."""


# volume core
class EmptyMaskError(Vlm3dError):
    """Operation requires a mask with at least one set voxel."""


class ShapeMismatchError(Vlm3dError):
    """Array shapes do not agree with the operation's contract."""


class BadMagicError(Vlm3dError):
    """File does not start with the expected magic bytes."""


class TruncatedPayloadError(Vlm3dError):
    """File payload is shorter (or longer) than the header promises."""


class UnknownDtypeError(Vlm3dError):
    """File header carries an unrecognized dtype code."""


# encoders / perceiver
class NonDivisibleShapeError(Vlm3dError):
    """Volume dims are not divisible by the patch dims."""


class GridMismatchError(Vlm3dError):
    """Token count does not match the configured 3D grid."""


class WidthMismatchError(Vlm3dError):
    """Embedding width does not match the configured width."""


# language model
class ContextOverflowError(Vlm3dError):
    """Vision plus instruction tokens alone exceed the context length."""


class UnparseableError(Vlm3dError):
    """Text does not contain the structure being extracted."""


class InvalidBoxError(Vlm3dError):
    """Box coordinates violate the 0 <= lo < hi <= 1 ordering."""


# training / bench
class BatchTooSmallError(Vlm3dError):
    """Contrastive loss needs at least two pairs."""


class PoolTooSmallError(Vlm3dError):
    """Retrieval pool is below the minimum size."""


class LengthMismatchError(Vlm3dError):
    """Candidate and reference lists differ in length."""


class ParseFailureError(Vlm3dError):
    """A structured response could not be parsed."""


# gateway
class TransportError(Vlm3dError):
    """The chat endpoint could not be reached."""


class RateLimitedError(Vlm3dError):
    """The chat endpoint kept rate-limiting after all retries."""


class OfflineMissError(Vlm3dError):
    """Offline transcript has no entry for this request fingerprint."""


class ConfigError(Vlm3dError):
    """Invalid configuration (bad flags, schema violations, illegal combos)."""
