"""Full-model forward and analytic backward for one video or a mini-batch.

The differentiated graph is fixed: modality encoders, cross-attention fusion,
cross-view collaborative attention, the decorrelation and instance
discrimination objectives, and an affine classification head trained with
cross-entropy against pseudo-labels. No general autodiff: every gradient is
hand-derived and validated against central finite differences.

Module toggles prune the graph exactly. With fusion disabled the encoders
still run (so downstream shapes are stable) but receive no gradient and the
decorrelation term is dropped; with cross-view attention disabled the
collaborative features, instance discrimination term, and bank all drop out.
Disabled parameters keep exactly-zero gradients.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .affine import AffineMap, init_affine
from .crossview import CcpParams, CcpState, ccp_backward, collaborative_attention, init_ccp_params
from .errors import DimensionMismatch, NonFiniteGradient
from .feature_io import VideoEntry
from .fusion import (
    FusionParams,
    FusionState,
    caf_forward,
    encode_modality,
    fusion_backward,
    init_fusion_params,
)
from .losses import (
    LossBreakdown,
    MemoryBank,
    avg_pool,
    decorrelation_backward,
    decorrelation_loss,
    instance_discrimination_backward,
    instance_discrimination_loss,
    total_loss,
)


@dataclass
class ModelParams:
    """Every learnable matrix of the pipeline plus the module toggles."""

    fusion: FusionParams
    crossview: CcpParams
    head: AffineMap
    caf_enabled: bool = True
    ccp_enabled: bool = True
    tau: float = 1.0
    decor_row_normalize: bool = False

    @property
    def num_classes(self) -> int:
        return self.head.d_out

    def copy(self) -> "ModelParams":
        return ModelParams(
            fusion=self.fusion.copy(),
            crossview=self.crossview.copy(),
            head=self.head.copy(),
            caf_enabled=self.caf_enabled,
            ccp_enabled=self.ccp_enabled,
            tau=self.tau,
            decor_row_normalize=self.decor_row_normalize,
        )


def init_model_params(rng: np.random.Generator, d_audio: int, d_cbp: int, d_vlp: int,
                      num_classes: int, d_x: int | None = None, num_stages: int = 2,
                      share_stage_weights: bool = True, encoder_tanh: bool = False,
                      d_k: int | None = None, d_v: int | None = None,
                      caf_enabled: bool = True, ccp_enabled: bool = True,
                      tau: float = 1.0, decor_row_normalize: bool = False) -> ModelParams:
    """Seeded initialization of all parameters.

    Cross-view attention requires the cbp and vlp views to share a dimension.
    The head consumes the fused cbp stream (d_x) plus, when cross-view
    attention is on, both collaborative streams (2 * d_v).
    """
    d_x = d_cbp if d_x is None else d_x
    if ccp_enabled and d_cbp != d_vlp:
        raise DimensionMismatch(
            f"cross-view attention needs matching view dims, got cbp={d_cbp}, vlp={d_vlp}"
        )
    fusion = init_fusion_params(rng, d_audio, d_cbp, d_x, num_stages,
                                share_stage_weights, encoder_tanh)
    crossview = init_ccp_params(rng, d_cbp, d_k, d_v)
    head_dim = d_x + (2 * crossview.d_v if ccp_enabled else 0)
    head = init_affine(rng, head_dim, num_classes)
    return ModelParams(fusion, crossview, head, caf_enabled, ccp_enabled,
                       tau, decor_row_normalize)


def named_params(params: ModelParams) -> list[tuple[str, np.ndarray]]:
    """Stable (name, array) listing of every learnable matrix, for SGD and
    finite-difference sweeps. Arrays are live views, not copies."""
    out = [
        ("enc_audio.weight", params.fusion.enc_audio.weight),
        ("enc_audio.bias", params.fusion.enc_audio.bias),
        ("enc_cbp.weight", params.fusion.enc_cbp.weight),
        ("enc_cbp.bias", params.fusion.enc_cbp.bias),
    ]
    if params.fusion.share_stage_weights:
        out.append(("fusion.weight", params.fusion.weight))
    else:
        out.extend(
            (f"fusion.stage_weights[{i}]", w)
            for i, w in enumerate(params.fusion.stage_weights)
        )
    out.extend([
        ("ccp.w_query", params.crossview.w_query),
        ("ccp.w_key", params.crossview.w_key),
        ("ccp.w_value_cbp", params.crossview.w_value_cbp),
        ("ccp.w_value_vlp", params.crossview.w_value_vlp),
        ("head.weight", params.head.weight),
        ("head.bias", params.head.bias),
    ])
    return out


def frozen_param_names(params: ModelParams) -> set[str]:
    """Parameters excluded from training by the module toggles.

    With fusion off the encoders still produce the head's input features, but
    they are frozen: a stop-gradient, not a true zero derivative. Updates and
    finite-difference scoring both skip these names.
    """
    frozen: set[str] = set()
    if not params.caf_enabled:
        frozen.update(name for name, _ in named_params(params)
                      if name.startswith(("enc_", "fusion.")))
    if not params.ccp_enabled:
        frozen.update(name for name, _ in named_params(params)
                      if name.startswith("ccp."))
    return frozen


@dataclass
class ParamGrads:
    """Gradient arrays in the same order and shapes as named_params."""

    by_name: dict[str, np.ndarray]

    def __getitem__(self, name: str) -> np.ndarray:
        return self.by_name[name]

    def __setitem__(self, name: str, value: np.ndarray) -> None:
        self.by_name[name] = value

    def scale(self, factor: float) -> None:
        for grad in self.by_name.values():
            grad *= factor

    def add(self, other: "ParamGrads") -> None:
        for name, grad in other.by_name.items():
            self.by_name[name] += grad


def zero_grads(params: ModelParams) -> ParamGrads:
    return ParamGrads({name: np.zeros_like(arr) for name, arr in named_params(params)})


@dataclass
class VideoForward:
    """Cached forward pass of one video."""

    enc_audio: np.ndarray          # (d_x, L)
    enc_cbp: np.ndarray
    fused_audio: np.ndarray        # (d_x, L); equals enc output with fusion off
    fused_cbp: np.ndarray
    fusion_state: FusionState | None
    z_cbp: np.ndarray | None       # (T, d_v)
    z_vlp: np.ndarray | None
    ccp_state: CcpState | None
    pooled_cbp: np.ndarray | None  # (d_v,)
    pooled_vlp: np.ndarray | None
    head_input: np.ndarray         # (L, d_head)
    video_logits: np.ndarray       # (K,)
    losses: LossBreakdown = field(default=None)  # type: ignore[assignment]
    ce: float = 0.0


def head_features(video: VideoEntry, params: ModelParams) -> np.ndarray:
    """Per-segment features the classification head consumes, shape (T, d_head)."""
    return forward_video(video, params, banks=None, index=None).head_input


def forward_video(video: VideoEntry, params: ModelParams,
                  banks: tuple[MemoryBank, MemoryBank] | None,
                  index: int | None, label: int | None = None) -> VideoForward:
    """Run the pipeline on one video.

    banks is the (vlp, cbp) pair; pass None to skip the instance
    discrimination term (e.g. at inference). label triggers the
    cross-entropy term against the classification head.
    """
    feats = video.features
    enc_audio = encode_modality(feats["audio"], params.fusion.enc_audio,
                                params.fusion.encoder_tanh)
    enc_cbp = encode_modality(feats["cbp"], params.fusion.enc_cbp,
                              params.fusion.encoder_tanh)

    fusion_state = None
    if params.caf_enabled:
        fused_audio, fused_cbp, fusion_state = caf_forward(enc_audio, enc_cbp, params.fusion)
        de_cor = decorrelation_loss(fused_audio, fused_cbp, params.decor_row_normalize)
    else:
        fused_audio, fused_cbp = enc_audio, enc_cbp
        de_cor = 0.0

    z_cbp = z_vlp = ccp_state = pooled_cbp = pooled_vlp = None
    ins_dis = 0.0
    if params.ccp_enabled:
        z_cbp, z_vlp, ccp_state = collaborative_attention(
            feats["cbp"].data, feats["vlp"].data, params.crossview)
        pooled_cbp = avg_pool(z_cbp)
        pooled_vlp = avg_pool(z_vlp)
        if banks is not None:
            bank_vlp, bank_cbp = banks
            ins_dis = instance_discrimination_loss(
                pooled_vlp, pooled_cbp, index, bank_vlp, bank_cbp, params.tau)
        head_input = np.concatenate([fused_cbp.T, z_cbp, z_vlp], axis=1)
    else:
        head_input = fused_cbp.T.copy()

    pooled_head = head_input.mean(axis=0)
    video_logits = params.head.weight @ pooled_head + params.head.bias

    ce = 0.0
    if label is not None:
        shifted = video_logits - video_logits.max()
        log_norm = np.log(np.exp(shifted).sum())
        ce = float(log_norm - shifted[label])

    return VideoForward(
        enc_audio=enc_audio, enc_cbp=enc_cbp,
        fused_audio=fused_audio, fused_cbp=fused_cbp, fusion_state=fusion_state,
        z_cbp=z_cbp, z_vlp=z_vlp, ccp_state=ccp_state,
        pooled_cbp=pooled_cbp, pooled_vlp=pooled_vlp,
        head_input=head_input, video_logits=video_logits,
        losses=total_loss(de_cor, ins_dis), ce=ce,
    )


def _encoder_backward(video_rows: np.ndarray, encoded: np.ndarray, d_encoded: np.ndarray,
                      use_tanh: bool) -> tuple[np.ndarray, np.ndarray]:
    """Gradients for one affine encoder given d(encoded), encoded being (d_x, L)."""
    if use_tanh:
        d_encoded = d_encoded * (1.0 - encoded ** 2)
    return d_encoded @ video_rows, d_encoded.sum(axis=1)


def backward_video(video: VideoEntry, params: ModelParams,
                   banks: tuple[MemoryBank, MemoryBank] | None, index: int | None,
                   fwd: VideoForward, grads: ParamGrads,
                   label: int | None = None, lambda_ce: float = 1.0) -> None:
    """Accumulate this video's gradient of de_cor + ins_dis + lambda_ce * ce
    into grads. Mirrors forward_video's toggle pruning exactly."""
    d_fused_audio = np.zeros_like(fwd.fused_audio)
    d_fused_cbp = np.zeros_like(fwd.fused_cbp)
    d_z_cbp = None if fwd.z_cbp is None else np.zeros_like(fwd.z_cbp)
    d_z_vlp = None if fwd.z_vlp is None else np.zeros_like(fwd.z_vlp)

    if params.caf_enabled:
        d_fused_audio += decorrelation_backward(
            fwd.fused_audio, "audio", params.decor_row_normalize)
        d_fused_cbp += decorrelation_backward(
            fwd.fused_cbp, "cbp", params.decor_row_normalize)

    if params.ccp_enabled and banks is not None:
        bank_vlp, bank_cbp = banks
        d_pooled_vlp, d_pooled_cbp = instance_discrimination_backward(
            fwd.pooled_vlp, fwd.pooled_cbp, index, bank_vlp, bank_cbp, params.tau)
        num_segments = fwd.z_cbp.shape[0]
        d_z_vlp += d_pooled_vlp[None, :] / num_segments
        d_z_cbp += d_pooled_cbp[None, :] / num_segments

    if label is not None and lambda_ce != 0.0:
        shifted = fwd.video_logits - fwd.video_logits.max()
        probs = np.exp(shifted) / np.exp(shifted).sum()
        d_logits = lambda_ce * probs
        d_logits[label] -= lambda_ce
        pooled_head = fwd.head_input.mean(axis=0)
        grads["head.weight"] += np.outer(d_logits, pooled_head)
        grads["head.bias"] += d_logits
        d_head_input_row = params.head.weight.T @ d_logits / fwd.head_input.shape[0]
        d_x = fwd.fused_cbp.shape[0]
        d_fused_cbp += np.tile(d_head_input_row[:d_x, None], (1, fwd.fused_cbp.shape[1]))
        if params.ccp_enabled:
            d_v = params.crossview.d_v
            d_z_cbp += d_head_input_row[None, d_x:d_x + d_v]
            d_z_vlp += d_head_input_row[None, d_x + d_v:]

    if params.ccp_enabled:
        ccp_grads = ccp_backward(
            video.features["cbp"].data, video.features["vlp"].data,
            params.crossview, fwd.ccp_state, d_z_cbp, d_z_vlp)
        grads["ccp.w_query"] += ccp_grads.d_w_query
        grads["ccp.w_key"] += ccp_grads.d_w_key
        grads["ccp.w_value_cbp"] += ccp_grads.d_w_value_cbp
        grads["ccp.w_value_vlp"] += ccp_grads.d_w_value_vlp

    if params.caf_enabled:
        fusion_grads = fusion_backward(params.fusion, fwd.fusion_state,
                                       d_fused_audio, d_fused_cbp)
        if params.fusion.share_stage_weights:
            grads["fusion.weight"] += fusion_grads.d_weight
        else:
            for i, d_w in enumerate(fusion_grads.d_stage_weights):
                grads[f"fusion.stage_weights[{i}]"] += d_w
        d_w, d_b = _encoder_backward(video.features["audio"].data, fwd.enc_audio,
                                     fusion_grads.d_x_audio, params.fusion.encoder_tanh)
        grads["enc_audio.weight"] += d_w
        grads["enc_audio.bias"] += d_b
        d_w, d_b = _encoder_backward(video.features["cbp"].data, fwd.enc_cbp,
                                     fusion_grads.d_x_cbp, params.fusion.encoder_tanh)
        grads["enc_cbp.weight"] += d_w
        grads["enc_cbp.bias"] += d_b


@dataclass
class BatchResult:
    losses: LossBreakdown          # batch means
    ce: float                      # batch mean cross-entropy
    objective: float               # de_cor + ins_dis + lambda_ce * ce, batch mean
    grads: ParamGrads
    forwards: list[VideoForward]


def loss_gradients(videos: list[VideoEntry], indices: list[int], params: ModelParams,
                   banks: tuple[MemoryBank, MemoryBank] | None,
                   labels: list[int] | None = None,
                   lambda_ce: float = 0.0) -> BatchResult:
    """Batch-mean losses and analytic gradients for every learnable matrix.

    With labels=None (or lambda_ce=0) the objective is the pure
    self-supervised loss; passing pseudo-labels adds the classification term
    so the head is exercised too. Gradients of toggled-off modules are exactly
    zero. Raises NonFiniteGradient naming the first bad parameter.
    """
    grads = zero_grads(params)
    forwards = []
    de_cor_sum = ins_dis_sum = ce_sum = 0.0
    for position, (video, index) in enumerate(zip(videos, indices)):
        label = None if labels is None else labels[position]
        fwd = forward_video(video, params, banks, index, label)
        backward_video(video, params, banks, index, fwd, grads, label, lambda_ce)
        de_cor_sum += fwd.losses.de_cor
        ins_dis_sum += fwd.losses.ins_dis
        ce_sum += fwd.ce
        forwards.append(fwd)
    count = len(videos)
    grads.scale(1.0 / count)
    for name, grad in grads.by_name.items():
        if not np.isfinite(grad).all():
            raise NonFiniteGradient(name)
    losses = total_loss(de_cor_sum / count, ins_dis_sum / count)
    ce_mean = ce_sum / count
    return BatchResult(
        losses=losses, ce=ce_mean,
        objective=losses.total + lambda_ce * ce_mean,
        grads=grads, forwards=forwards,
    )


def batch_objective(videos: list[VideoEntry], indices: list[int], params: ModelParams,
                    banks: tuple[MemoryBank, MemoryBank] | None,
                    labels: list[int] | None, lambda_ce: float) -> float:
    """Scalar batch objective only; used by the finite-difference oracle."""
    de_cor_sum = ins_dis_sum = ce_sum = 0.0
    for position, (video, index) in enumerate(zip(videos, indices)):
        label = None if labels is None else labels[position]
        fwd = forward_video(video, params, banks, index, label)
        de_cor_sum += fwd.losses.de_cor
        ins_dis_sum += fwd.losses.ins_dis
        ce_sum += fwd.ce
    count = len(videos)
    return (de_cor_sum + ins_dis_sum) / count + lambda_ce * ce_sum / count


@dataclass
class GradCheckEntry:
    name: str
    max_rel_err: float
    max_abs_err: float


@dataclass
class GradCheckReport:
    max_rel_err: float
    entries: list[GradCheckEntry]
    checked: int
    skipped_small: int


def finite_difference_check(videos: list[VideoEntry], indices: list[int],
                            params: ModelParams,
                            banks: tuple[MemoryBank, MemoryBank] | None,
                            labels: list[int] | None = None, lambda_ce: float = 1.0,
                            step: float = 1e-5,
                            small_grad: float = 1e-8) -> GradCheckReport:
    """Compare every analytic gradient entry against central differences.

    Relative error uses max(|analytic|, |numeric|) as the scale and is only
    scored where the numeric gradient exceeds small_grad; 64-bit throughout.
    """
    result = loss_gradients(videos, indices, params, banks, labels, lambda_ce)
    frozen = frozen_param_names(params)
    entries = []
    overall = 0.0
    checked = skipped = 0
    for name, array in named_params(params):
        if name in frozen:
            continue
        analytic = result.grads[name]
        worst_rel = worst_abs = 0.0
        flat = array.reshape(-1)
        flat_grad = analytic.reshape(-1)
        for i in range(flat.size):
            original = flat[i]
            flat[i] = original + step
            upper = batch_objective(videos, indices, params, banks, labels, lambda_ce)
            flat[i] = original - step
            lower = batch_objective(videos, indices, params, banks, labels, lambda_ce)
            flat[i] = original
            numeric = (upper - lower) / (2.0 * step)
            abs_err = abs(flat_grad[i] - numeric)
            worst_abs = max(worst_abs, abs_err)
            if abs(numeric) > small_grad:
                checked += 1
                rel = abs_err / max(abs(flat_grad[i]), abs(numeric))
                worst_rel = max(worst_rel, rel)
            else:
                skipped += 1
        entries.append(GradCheckEntry(name, worst_rel, worst_abs))
        overall = max(overall, worst_rel)
    return GradCheckReport(max_rel_err=overall, entries=entries,
                           checked=checked, skipped_small=skipped)
