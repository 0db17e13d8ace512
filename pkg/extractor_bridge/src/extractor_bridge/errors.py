"""Bridge error hierarchy."""


class BridgeError(Exception):
    """Base class for extraction failures."""


class ModelUnavailable(BridgeError):
    """Requested model identifier is not registered or cached locally."""


class DecodeFailure(BridgeError):
    """A video file could not be opened or yielded no frames."""


class AlignmentFailure(BridgeError):
    """Modality outputs could not be aligned to a common segment grid."""
