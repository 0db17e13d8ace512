"""Affine maps (weight matrix + bias) used for modality encoders and the
classification head. All arrays are float64; shapes follow the convention
weight: (d_out, d_in), bias: (d_out,)."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatch


@dataclass
class AffineMap:
    """y = weight @ x + bias applied to each input vector."""

    weight: np.ndarray  # (d_out, d_in)
    bias: np.ndarray    # (d_out,)

    @property
    def d_in(self) -> int:
        return self.weight.shape[1]

    @property
    def d_out(self) -> int:
        return self.weight.shape[0]

    def copy(self) -> "AffineMap":
        return AffineMap(self.weight.copy(), self.bias.copy())


def init_affine(rng: np.random.Generator, d_in: int, d_out: int) -> AffineMap:
    """Fan-in scaled init: weights uniform in [-1/sqrt(d_in), 1/sqrt(d_in)], bias 0."""
    bound = 1.0 / np.sqrt(d_in)
    weight = rng.uniform(-bound, bound, size=(d_out, d_in))
    return AffineMap(weight, np.zeros(d_out))


def apply_affine_rows(rows: np.ndarray, affine: AffineMap) -> np.ndarray:
    """Apply the map to each row of a (n, d_in) matrix, giving (n, d_out)."""
    if rows.ndim != 2 or rows.shape[1] != affine.d_in:
        raise DimensionMismatch(
            f"affine map expects rows of length {affine.d_in}, got shape {rows.shape}"
        )
    return rows @ affine.weight.T + affine.bias
