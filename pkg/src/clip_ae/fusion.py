"""Audio-visual cross-attention fusion.

Works in the d_x-by-L orientation (feature rows, segment columns); callers
holding segment-major (T, d) matrices transpose on the way in via
encode_modality. One fusion stage computes a cross-correlation between the
column-normalized views through a learnable square weight, turns its columns
(and the columns of its transpose) into attention weights, re-mixes each view
with the other view's guidance, and accumulates stages through dense skip
connections squashed by tanh:

    stage t:  corr   = norm(Xa_{t-1})^T  W  norm(Xc_{t-1})
              Aa, Ac = colsoftmax(corr), colsoftmax(corr^T)
              Xa_t   = tanh(sum_{i<t} Xa_i + Xa_{t-1} Aa)   (and symmetrically)

Every function is pure; the returned FusionState caches all intermediates so
fusion_backward can run the analytic reverse pass without recomputation.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .affine import AffineMap, apply_affine_rows, init_affine
from .errors import DimensionMismatch, ZeroNormColumn
from .feature_io import FeatureSequence

_NORM_EPS = 1e-12


@dataclass
class FusionParams:
    """Learnable state of the fusion module.

    One shared cross-correlation weight by default; with
    share_stage_weights=False each stage owns an independent copy.
    """

    enc_audio: AffineMap
    enc_cbp: AffineMap
    weight: np.ndarray              # (d_x, d_x), shared across stages
    num_stages: int = 2
    share_stage_weights: bool = True
    stage_weights: list[np.ndarray] | None = None  # used when not shared
    encoder_tanh: bool = False

    @property
    def d_x(self) -> int:
        return self.weight.shape[0]

    def weight_for_stage(self, stage: int) -> np.ndarray:
        if self.share_stage_weights:
            return self.weight
        return self.stage_weights[stage]

    def copy(self) -> "FusionParams":
        return FusionParams(
            enc_audio=self.enc_audio.copy(),
            enc_cbp=self.enc_cbp.copy(),
            weight=self.weight.copy(),
            num_stages=self.num_stages,
            share_stage_weights=self.share_stage_weights,
            stage_weights=None if self.stage_weights is None
            else [w.copy() for w in self.stage_weights],
            encoder_tanh=self.encoder_tanh,
        )


def init_fusion_params(rng: np.random.Generator, d_in_audio: int, d_in_cbp: int,
                       d_x: int, num_stages: int = 2, share_stage_weights: bool = True,
                       encoder_tanh: bool = False) -> FusionParams:
    bound = 1.0 / np.sqrt(d_x)
    params = FusionParams(
        enc_audio=init_affine(rng, d_in_audio, d_x),
        enc_cbp=init_affine(rng, d_in_cbp, d_x),
        weight=rng.uniform(-bound, bound, size=(d_x, d_x)),
        num_stages=num_stages,
        share_stage_weights=share_stage_weights,
        encoder_tanh=encoder_tanh,
    )
    if not share_stage_weights:
        params.stage_weights = [
            rng.uniform(-bound, bound, size=(d_x, d_x)) for _ in range(num_stages)
        ]
    return params


@dataclass
class StageCache:
    """Everything one fusion stage produced, kept for the backward pass."""

    norm_audio: np.ndarray   # column-normalized previous accumulated audio
    norm_cbp: np.ndarray
    col_norms_audio: np.ndarray  # (L,)
    col_norms_cbp: np.ndarray
    corr: np.ndarray         # (L, L)
    attn_audio: np.ndarray   # colsoftmax(corr)
    attn_cbp: np.ndarray     # colsoftmax(corr^T)
    attended_audio: np.ndarray
    attended_cbp: np.ndarray
    out_audio: np.ndarray    # post-tanh accumulated features
    out_cbp: np.ndarray


@dataclass
class FusionState:
    """Per-stage attended and accumulated features for both modalities.

    features_audio[0] / features_cbp[0] are the stage-0 inputs; entry t >= 1
    is the post-tanh output of stage t (all entries strictly inside (-1, 1)).
    """

    stages: list[StageCache] = field(default_factory=list)

    @property
    def features_audio(self) -> list[np.ndarray]:
        return [self._input_audio] + [s.out_audio for s in self.stages]

    @property
    def features_cbp(self) -> list[np.ndarray]:
        return [self._input_cbp] + [s.out_cbp for s in self.stages]

    _input_audio: np.ndarray = None  # type: ignore[assignment]
    _input_cbp: np.ndarray = None    # type: ignore[assignment]


def encode_modality(raw: FeatureSequence, enc: AffineMap, use_tanh: bool = False) -> np.ndarray:
    """Encode a (T, d_in) feature sequence into a (d_x, L) matrix, L = T.

    Column l is the encoder applied to segment l; the transpose from
    segment-major to feature-major happens here and only here.
    """
    encoded = apply_affine_rows(raw.data, enc)
    if use_tanh:
        encoded = np.tanh(encoded)
    return encoded.T.copy()


def _normalize_columns(x: np.ndarray, modality: str) -> tuple[np.ndarray, np.ndarray]:
    norms = np.linalg.norm(x, axis=0)
    bad = np.nonzero(norms < _NORM_EPS)[0]
    if bad.size:
        raise ZeroNormColumn(f"{modality}: column {int(bad[0])} has zero norm")
    return x / norms, norms


def cross_correlation(x_audio: np.ndarray, x_cbp: np.ndarray, weight: np.ndarray) -> np.ndarray:
    """corr = norm(x_audio)^T @ weight @ norm(x_cbp), columns L2-normalized first.

    corr[i, j] is the correlation between audio segment i and cbp segment j.
    """
    if x_audio.shape != x_cbp.shape:
        raise DimensionMismatch(f"views differ in shape: {x_audio.shape} vs {x_cbp.shape}")
    if weight.shape != (x_audio.shape[0], x_audio.shape[0]):
        raise DimensionMismatch(
            f"weight must be ({x_audio.shape[0]}, {x_audio.shape[0]}), got {weight.shape}"
        )
    norm_audio, _ = _normalize_columns(x_audio, "audio")
    norm_cbp, _ = _normalize_columns(x_cbp, "cbp")
    return norm_audio.T @ weight @ norm_cbp


def _colsoftmax(scores: np.ndarray) -> np.ndarray:
    shifted = scores - scores.max(axis=0, keepdims=True)
    exp = np.exp(shifted)
    return exp / exp.sum(axis=0, keepdims=True)


def attention_weights(corr: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Column softmaxes of corr and corr^T.

    Column l of the first output mixes audio segments under guidance of cbp
    segment l; column l of the second mixes cbp segments under audio guidance.
    Each column sums to 1.
    """
    return _colsoftmax(corr), _colsoftmax(corr.T)


def apply_attention(x: np.ndarray, attn: np.ndarray) -> np.ndarray:
    """x @ attn: column l of the result is a convex combination of columns of x."""
    if x.shape[1] != attn.shape[0]:
        raise DimensionMismatch(f"cannot multiply {x.shape} by {attn.shape}")
    return x @ attn


def caf_forward(x_audio: np.ndarray, x_cbp: np.ndarray,
                params: FusionParams) -> tuple[np.ndarray, np.ndarray, FusionState]:
    """Run all fusion stages; returns the final accumulated features per modality.

    Stage t recomputes attention from the previous stage's accumulated
    features, attends those same features, adds the dense skip sum of all
    earlier accumulated features and squashes with tanh.
    """
    state = FusionState()
    state._input_audio = x_audio
    state._input_cbp = x_cbp
    acc_audio = [x_audio]
    acc_cbp = [x_cbp]
    for stage in range(params.num_stages):
        prev_audio = acc_audio[-1]
        prev_cbp = acc_cbp[-1]
        norm_audio, norms_a = _normalize_columns(prev_audio, "audio")
        norm_cbp, norms_c = _normalize_columns(prev_cbp, "cbp")
        weight = params.weight_for_stage(stage)
        corr = norm_audio.T @ weight @ norm_cbp
        attn_audio, attn_cbp = attention_weights(corr)
        attended_audio = prev_audio @ attn_audio
        attended_cbp = prev_cbp @ attn_cbp
        out_audio = np.tanh(sum(acc_audio) + attended_audio)
        out_cbp = np.tanh(sum(acc_cbp) + attended_cbp)
        state.stages.append(StageCache(
            norm_audio, norm_cbp, norms_a, norms_c, corr,
            attn_audio, attn_cbp, attended_audio, attended_cbp, out_audio, out_cbp,
        ))
        acc_audio.append(out_audio)
        acc_cbp.append(out_cbp)
    return acc_audio[-1], acc_cbp[-1], state


@dataclass
class FusionGrads:
    """Gradients of a scalar loss w.r.t. fusion inputs and weights."""

    d_x_audio: np.ndarray
    d_x_cbp: np.ndarray
    d_weight: np.ndarray
    d_stage_weights: list[np.ndarray] | None = None


def _colsoftmax_backward(attn: np.ndarray, d_attn: np.ndarray) -> np.ndarray:
    return attn * (d_attn - (attn * d_attn).sum(axis=0, keepdims=True))


def _colnorm_backward(normed: np.ndarray, norms: np.ndarray, d_normed: np.ndarray) -> np.ndarray:
    return (d_normed - normed * (normed * d_normed).sum(axis=0, keepdims=True)) / norms


def fusion_backward(params: FusionParams, state: FusionState,
                    d_out_audio: np.ndarray, d_out_cbp: np.ndarray) -> FusionGrads:
    """Reverse pass through all fusion stages.

    Takes gradients w.r.t. the final accumulated features and returns
    gradients w.r.t. the stage-0 inputs and the cross-correlation weight(s).
    Dense skips mean every stage's pre-tanh gradient feeds all earlier stages.
    """
    num_stages = params.num_stages
    feats_audio = state.features_audio
    feats_cbp = state.features_cbp
    d_feats_audio = [np.zeros_like(f) for f in feats_audio]
    d_feats_cbp = [np.zeros_like(f) for f in feats_cbp]
    d_feats_audio[num_stages] = d_out_audio
    d_feats_cbp[num_stages] = d_out_cbp
    d_weight = np.zeros_like(params.weight)
    d_stage_weights = (
        None if params.share_stage_weights
        else [np.zeros_like(w) for w in params.stage_weights]
    )

    for stage in range(num_stages - 1, -1, -1):
        cache = state.stages[stage]
        pre_audio = d_feats_audio[stage + 1] * (1.0 - cache.out_audio ** 2)
        pre_cbp = d_feats_cbp[stage + 1] * (1.0 - cache.out_cbp ** 2)
        # dense skip sum over all earlier accumulated features
        for i in range(stage + 1):
            d_feats_audio[i] += pre_audio
            d_feats_cbp[i] += pre_cbp
        prev_audio = feats_audio[stage]
        prev_cbp = feats_cbp[stage]
        # attended = prev @ attn
        d_feats_audio[stage] += pre_audio @ cache.attn_audio.T
        d_feats_cbp[stage] += pre_cbp @ cache.attn_cbp.T
        d_attn_audio = prev_audio.T @ pre_audio
        d_attn_cbp = prev_cbp.T @ pre_cbp
        d_corr = _colsoftmax_backward(cache.attn_audio, d_attn_audio)
        d_corr += _colsoftmax_backward(cache.attn_cbp, d_attn_cbp).T
        weight = params.weight_for_stage(stage)
        d_w = cache.norm_audio @ d_corr @ cache.norm_cbp.T
        if params.share_stage_weights:
            d_weight += d_w
        else:
            d_stage_weights[stage] += d_w
        d_norm_audio = weight @ cache.norm_cbp @ d_corr.T
        d_norm_cbp = weight.T @ cache.norm_audio @ d_corr
        d_feats_audio[stage] += _colnorm_backward(
            cache.norm_audio, cache.col_norms_audio, d_norm_audio)
        d_feats_cbp[stage] += _colnorm_backward(
            cache.norm_cbp, cache.col_norms_cbp, d_norm_cbp)

    return FusionGrads(
        d_x_audio=d_feats_audio[0],
        d_x_cbp=d_feats_cbp[0],
        d_weight=d_weight,
        d_stage_weights=d_stage_weights,
    )
