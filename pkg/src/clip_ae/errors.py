"""Exception hierarchy shared by all clip_ae modules.

Every named failure mode raises a dedicated subclass of ClipAeError so
callers (and the CLI) can match on the class name. Messages carry the
offending byte offset / index / identifier where the contract names one.
"""


class ClipAeError(Exception):
    """Base class for all errors raised by this package."""


# --- feature file / manifest I/O ---------------------------------------------

class MagicMismatch(ClipAeError):
    """File does not start with the expected 4-byte magic."""


class TruncatedFile(ClipAeError):
    """File ends before the header-declared payload is complete."""


class DimensionZero(ClipAeError):
    """Header declares a zero segment count or feature dimension."""


class NonFiniteValue(ClipAeError):
    """A stored feature value is NaN or infinite."""


class IoFailure(ClipAeError):
    """Underlying filesystem write failed."""


class SchemaError(ClipAeError):
    """Manifest JSON does not match the documented schema."""


class LengthMismatch(ClipAeError):
    """Modalities of one video disagree on segment count."""


class MissingFile(ClipAeError):
    """Manifest references a feature file that does not exist."""


class InvalidArgument(ClipAeError):
    """An argument violates its documented range."""


# --- numerics ----------------------------------------------------------------

class DimensionMismatch(ClipAeError):
    """Operand shapes are incompatible."""


class ZeroNormColumn(ClipAeError):
    """A column has zero L2 norm where normalization is required."""


class ZeroNormRow(ClipAeError):
    """A row has zero L2 norm where normalization is required."""


class NonFiniteGradient(ClipAeError):
    """An analytic gradient came out NaN or infinite; names the parameter."""


# --- memory bank -------------------------------------------------------------

class IndexOutOfRange(ClipAeError):
    """Video index exceeds the memory bank size."""


class EmptyBank(ClipAeError):
    """Memory bank holds no entries."""


class DegenerateUpdate(ClipAeError):
    """Momentum update produced a vector too short to renormalize."""


# --- training / evaluation ---------------------------------------------------

class TooFewVideos(ClipAeError):
    """Fewer videos than requested clusters."""


class DivergenceDetected(ClipAeError):
    """Training loss exceeded the divergence guard."""


class InvalidInterval(ClipAeError):
    """Temporal interval has start >= end."""
