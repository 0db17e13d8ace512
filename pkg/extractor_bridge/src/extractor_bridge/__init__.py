"""Feature extraction bridge: videos in, CAFE files plus manifest out."""

from .cafe import MAGIC, VERSION, write_cafe
from .errors import (AlignmentFailure, BridgeError, DecodeFailure,
                     ModelUnavailable)
from .extract import (ExtractionJob, align_to_coarsest, decode_video, extract,
                      find_videos, main)
from .featurizers import DEFAULT_MODELS, Featurizer

__all__ = [
    "AlignmentFailure",
    "BridgeError",
    "DecodeFailure",
    "DEFAULT_MODELS",
    "ExtractionJob",
    "Featurizer",
    "MAGIC",
    "ModelUnavailable",
    "VERSION",
    "align_to_coarsest",
    "decode_video",
    "extract",
    "find_videos",
    "main",
    "write_cafe",
]
