"""Self-supervised objectives: feature decorrelation, memory-bank instance
discrimination, and their combination, each with an analytic backward.

The decorrelation term penalizes the squared Frobenius distance between each
view's feature gram matrix and the identity, pushing feature dimensions
toward orthogonality. Rows are L2-normalized first by default so the loss
measures correlation structure rather than scale; the raw unnormalized form
stays available behind a flag.

The instance-discrimination term treats every video as its own class: the
pooled, normalized video vector of each view is scored against a per-view
memory bank of momentum-averaged unit vectors, and the loss is the negative
log-probability of the video's own bank entry under a temperature softmax.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import (
    DegenerateUpdate,
    EmptyBank,
    IndexOutOfRange,
    InvalidArgument,
    ZeroNormRow,
)

_NORM_EPS = 1e-12


# --- feature decorrelation ---------------------------------------------------

def decorrelation_loss(feats_audio: np.ndarray, feats_cbp: np.ndarray,
                       row_normalize: bool = False) -> float:
    """|| G_a - I ||_F^2 + || G_c - I ||_F^2 with G the dimension gram.

    With row_normalize, rows are unit-normalized first so G is a correlation
    matrix and the loss is feature-scale-free; by default the raw gram is
    penalized, which also regularizes row norms toward one."""
    return (_decorrelation_term(feats_audio, "audio", row_normalize)
            + _decorrelation_term(feats_cbp, "cbp", row_normalize))


def _normalize_rows(x: np.ndarray, modality: str) -> tuple[np.ndarray, np.ndarray]:
    norms = np.linalg.norm(x, axis=1)
    bad = np.nonzero(norms < _NORM_EPS)[0]
    if bad.size:
        raise ZeroNormRow(f"{modality}: row {int(bad[0])} has zero norm")
    return x / norms[:, None], norms


def _decorrelation_term(feats: np.ndarray, modality: str, row_normalize: bool) -> float:
    if row_normalize:
        feats, _ = _normalize_rows(feats, modality)
    residual = feats @ feats.T - np.eye(feats.shape[0])
    return float((residual ** 2).sum())


def decorrelation_backward(feats: np.ndarray, modality: str = "",
                           row_normalize: bool = False) -> np.ndarray:
    """Gradient of one view's decorrelation term w.r.t. its features.

    For G = X X^T: d/dX ||G - I||_F^2 = 4 (G - I) X, composed with the
    row-normalization backward when enabled.
    """
    if not row_normalize:
        residual = feats @ feats.T - np.eye(feats.shape[0])
        return 4.0 * residual @ feats
    normed, norms = _normalize_rows(feats, modality)
    residual = normed @ normed.T - np.eye(feats.shape[0])
    d_normed = 4.0 * residual @ normed
    return (d_normed - normed * (normed * d_normed).sum(axis=1, keepdims=True)) / norms[:, None]


# --- pooling -----------------------------------------------------------------

def avg_pool(z: np.ndarray) -> np.ndarray:
    """Mean over rows of a (T, d_v) matrix."""
    return z.mean(axis=0)


# --- memory bank -------------------------------------------------------------

@dataclass
class MemoryBank:
    """Per-view table of momentum-averaged unit vectors, one per video."""

    vectors: np.ndarray  # (N, d_v), rows unit-norm
    momentum: float
    view: str

    @property
    def size(self) -> int:
        return self.vectors.shape[0]

    def copy(self) -> "MemoryBank":
        return MemoryBank(self.vectors.copy(), self.momentum, self.view)


def init_memory_bank(rng: np.random.Generator, size: int, dim: int,
                     momentum: float, view: str) -> MemoryBank:
    """Seeded random unit vectors."""
    if size < 1:
        raise EmptyBank(f"{view}: bank size must be >= 1, got {size}")
    if not 0.0 <= momentum <= 1.0:
        raise InvalidArgument(f"momentum must be in [0, 1], got {momentum}")
    vectors = rng.normal(size=(size, dim))
    vectors /= np.linalg.norm(vectors, axis=1, keepdims=True)
    return MemoryBank(vectors, momentum, view)


def update_memory_bank(bank: MemoryBank, index: int, z: np.ndarray) -> MemoryBank:
    """m_index <- normalize(momentum * m_index + (1 - momentum) * normalize(z)).

    Mutates the bank in place (single writer per training step) and returns
    it. Other entries are untouched; the updated row is unit norm again.
    """
    if not 0 <= index < bank.size:
        raise IndexOutOfRange(f"{bank.view}: index {index} not in [0, {bank.size})")
    z_norm = np.linalg.norm(z)
    if z_norm < _NORM_EPS:
        raise DegenerateUpdate(f"{bank.view}: update vector for index {index} has zero norm")
    blended = bank.momentum * bank.vectors[index] + (1.0 - bank.momentum) * (z / z_norm)
    blended_norm = np.linalg.norm(blended)
    if blended_norm < _NORM_EPS:
        raise DegenerateUpdate(
            f"{bank.view}: blended vector for index {index} has norm {blended_norm:.2e}"
        )
    bank.vectors[index] = blended / blended_norm
    return bank


# --- instance discrimination -------------------------------------------------

def _log_softmax_probability(logits: np.ndarray, index: int) -> tuple[float, np.ndarray]:
    shifted = logits - logits.max()
    exp = np.exp(shifted)
    probs = exp / exp.sum()
    return float(np.log(probs[index])), probs


def instance_discrimination_loss(z_vlp: np.ndarray, z_cbp: np.ndarray, index: int,
                                 bank_vlp: MemoryBank, bank_cbp: MemoryBank,
                                 tau: float = 1.0) -> float:
    """Sum over views of -log softmax_i(z_hat . m_i / tau) at the video's index.

    z vectors are L2-normalized here before scoring; bank entries are already
    unit norm. Always >= 0.
    """
    return (_instance_term(z_vlp, index, bank_vlp, tau)[0]
            + _instance_term(z_cbp, index, bank_cbp, tau)[0])


def _instance_term(z: np.ndarray, index: int, bank: MemoryBank,
                   tau: float) -> tuple[float, np.ndarray]:
    """One view's loss and its gradient w.r.t. the unpooled z vector."""
    if bank.size == 0:
        raise EmptyBank(f"{bank.view}: empty memory bank")
    if not 0 <= index < bank.size:
        raise IndexOutOfRange(f"{bank.view}: index {index} not in [0, {bank.size})")
    if tau <= 0:
        raise InvalidArgument(f"temperature must be > 0, got {tau}")
    z_norm = np.linalg.norm(z)
    if z_norm < _NORM_EPS:
        raise DegenerateUpdate(f"{bank.view}: pooled vector for index {index} has zero norm")
    z_hat = z / z_norm
    logits = bank.vectors @ z_hat / tau
    log_prob, probs = _log_softmax_probability(logits, index)
    d_logits = probs.copy()
    d_logits[index] -= 1.0
    d_z_hat = bank.vectors.T @ d_logits / tau
    d_z = (d_z_hat - z_hat * float(z_hat @ d_z_hat)) / z_norm
    return -log_prob, d_z


def instance_discrimination_backward(z_vlp: np.ndarray, z_cbp: np.ndarray, index: int,
                                     bank_vlp: MemoryBank, bank_cbp: MemoryBank,
                                     tau: float = 1.0) -> tuple[np.ndarray, np.ndarray]:
    """Gradients of the instance-discrimination loss w.r.t. the pooled vectors."""
    _, d_z_vlp = _instance_term(z_vlp, index, bank_vlp, tau)
    _, d_z_cbp = _instance_term(z_cbp, index, bank_cbp, tau)
    return d_z_vlp, d_z_cbp


# --- combination -------------------------------------------------------------

@dataclass
class LossBreakdown:
    """Components of the self-supervised objective; total is their plain sum."""

    de_cor: float
    ins_dis: float
    total: float


def total_loss(de_cor: float, ins_dis: float) -> LossBreakdown:
    """Combine the two components; summation order is fixed (de_cor + ins_dis)."""
    return LossBreakdown(de_cor=de_cor, ins_dis=ins_dis, total=de_cor + ins_dis)
