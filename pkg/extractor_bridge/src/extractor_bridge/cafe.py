"""Writer for the CAFE per-video-per-modality feature file format.

Layout: 4-byte magic b"CAFE", then three little-endian u32 fields (format
version, segment count T, feature dimension d), then T*d float32 values in
row-major order. This mirrors the consumer's published format byte for byte;
the bridge deliberately carries its own writer so it depends only on the
format, not on the consumer package.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .errors import BridgeError

MAGIC = b"CAFE"
VERSION = 1
_HEADER = struct.Struct("<4sIII")


def write_cafe(path: str | Path, features: np.ndarray) -> None:
    """Write one (T, d) feature matrix, enforcing the format invariants."""
    arr = np.asarray(features, dtype=np.float64)
    if arr.ndim != 2:
        raise BridgeError(f"{path}: features must be 2-d, got shape {arr.shape}")
    if arr.shape[0] < 1 or arr.shape[1] < 1:
        raise BridgeError(f"{path}: zero-sized feature matrix {arr.shape}")
    if not np.isfinite(arr).all():
        raise BridgeError(f"{path}: non-finite feature values")
    payload = arr.astype("<f4").tobytes(order="C")
    header = _HEADER.pack(MAGIC, VERSION, arr.shape[0], arr.shape[1])
    Path(path).write_bytes(header + payload)
