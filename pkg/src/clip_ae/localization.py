"""Temporal proposals from class activation maps.

Per-segment logits from the classification head become a row-stochastic
activation map; thresholding it at several levels yields candidate intervals,
scored by outer-inner contrast (in-run mean activation minus the mean over
flanking margins) so long flat responses do not dominate, then pruned by
greedy class-wise temporal non-maximum suppression.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .affine import AffineMap, apply_affine_rows
from .errors import DimensionMismatch, InvalidArgument
from .feature_io import Dataset
from .pipeline import head_features

DEFAULT_THRESHOLDS = tuple(round(0.1 * i, 1) for i in range(1, 10))


@dataclass
class Tcam:
    """Row-stochastic per-segment class scores for one video."""

    video_id: str
    scores: np.ndarray  # (T, K), each row sums to 1
    segment_duration_s: float

    @property
    def num_segments(self) -> int:
        return self.scores.shape[0]

    @property
    def num_classes(self) -> int:
        return self.scores.shape[1]


@dataclass
class Proposal:
    """One scored candidate action interval, in seconds."""

    video_id: str
    class_index: int
    start_s: float
    end_s: float
    score: float

    @property
    def length_s(self) -> float:
        return self.end_s - self.start_s


def compute_tcam(features: np.ndarray, head: AffineMap, video_id: str = "",
                 segment_duration_s: float = 1.0) -> Tcam:
    """Row-wise softmax of per-segment head logits."""
    features = np.asarray(features, dtype=np.float64)
    if features.ndim != 2:
        raise DimensionMismatch(f"features must be 2-d, got shape {features.shape}")
    logits = apply_affine_rows(features, head)
    shifted = logits - logits.max(axis=1, keepdims=True)
    exp = np.exp(shifted)
    return Tcam(video_id, exp / exp.sum(axis=1, keepdims=True), segment_duration_s)


def _runs_at_threshold(column: np.ndarray, threshold: float) -> list[tuple[int, int]]:
    """Maximal [start, end) runs of consecutive entries >= threshold."""
    mask = column >= threshold
    runs = []
    start = None
    for t, hit in enumerate(mask):
        if hit and start is None:
            start = t
        elif not hit and start is not None:
            runs.append((start, t))
            start = None
    if start is not None:
        runs.append((start, mask.size))
    return runs


def _contrast_score(column: np.ndarray, start: int, end: int, margin: float) -> float:
    """In-run mean minus flanking mean over margins of margin * run length,
    clamped to the segment axis. A run spanning the whole axis has no flanks;
    its background estimate falls back to the column mean, so a flat
    full-video response scores exactly zero instead of its own height."""
    inner = float(column[start:end].mean())
    width = max(1, int(margin * (end - start) + 0.5))
    left = column[max(0, start - width):start]
    right = column[end:end + width]
    flank = np.concatenate([left, right])
    outer = float(flank.mean()) if flank.size else float(column.mean())
    return inner - outer


def extract_proposals(tcam: Tcam, class_index: int,
                      thresholds: tuple[float, ...] = DEFAULT_THRESHOLDS,
                      margin: float = 0.25, min_segments: int = 1) -> list[Proposal]:
    """Multi-threshold run extraction for one class.

    Identical intervals found at several thresholds are emitted once; runs
    shorter than min_segments are discarded (single-segment activation spikes
    otherwise earn the sharpest contrast scores). Output is sorted by
    (start, end); empty when nothing clears any threshold.
    """
    thresholds = tuple(thresholds)
    if not thresholds or any(not 0.0 < t < 1.0 for t in thresholds):
        raise InvalidArgument("thresholds must be nonempty and inside (0, 1)")
    if list(thresholds) != sorted(thresholds):
        raise InvalidArgument("thresholds must be ascending")
    if not 0 <= class_index < tcam.num_classes:
        raise InvalidArgument(
            f"class_index {class_index} out of range for {tcam.num_classes} classes")
    if min_segments < 1:
        raise InvalidArgument(f"min_segments must be >= 1, got {min_segments}")
    column = tcam.scores[:, class_index]
    intervals: set[tuple[int, int]] = set()
    for threshold in thresholds:
        intervals.update(run for run in _runs_at_threshold(column, threshold)
                         if run[1] - run[0] >= min_segments)
    duration = tcam.segment_duration_s
    return [
        Proposal(tcam.video_id, class_index,
                 start * duration, end * duration,
                 _contrast_score(column, start, end, margin))
        for start, end in sorted(intervals)
    ]


def _priority(proposal: Proposal) -> tuple:
    # score descending, then earlier start, then shorter length
    return (-proposal.score, proposal.start_s, proposal.length_s, proposal.video_id)


def _interval_iou(a: Proposal, b: Proposal) -> float:
    inter = min(a.end_s, b.end_s) - max(a.start_s, b.start_s)
    if inter <= 0.0:
        return 0.0
    union = (a.end_s - a.start_s) + (b.end_s - b.start_s) - inter
    return inter / union


def temporal_nms(proposals: list[Proposal], iou_threshold: float) -> list[Proposal]:
    """Greedy suppression within each (video, class) group.

    A proposal survives iff its IoU with every higher-priority survivor of
    the same group is below the threshold. Output keeps a fixed global order:
    by video, class, then priority.
    """
    if not 0.0 <= iou_threshold <= 1.0:
        raise InvalidArgument(f"iou_threshold must be in [0, 1], got {iou_threshold}")
    groups: dict[tuple[str, int], list[Proposal]] = {}
    for proposal in proposals:
        groups.setdefault((proposal.video_id, proposal.class_index), []).append(proposal)
    kept: list[Proposal] = []
    for key in sorted(groups):
        survivors: list[Proposal] = []
        for candidate in sorted(groups[key], key=_priority):
            if all(_interval_iou(candidate, other) < iou_threshold
                   for other in survivors):
                survivors.append(candidate)
        kept.extend(survivors)
    return kept


def localize_dataset(dataset: Dataset, result) -> list[Proposal]:
    """Proposals for every video of a trained model (a trainer TrainResult).

    Each video is localized under its pseudo-label class only; the video-level
    label is what guides unsupervised localization. Videos absent from the
    training set fall back to the activation map's strongest mean class.
    Threshold set, contrast margin, and the suppression threshold come from
    the training config.
    """
    config = result.config
    labels = dict(zip(result.video_ids, (int(x) for x in result.pseudo_labels)))
    proposals: list[Proposal] = []
    for video in dataset.videos:
        features = head_features(video, result.params)
        tcam = compute_tcam(features, result.params.head, video.video_id,
                            video.segment_duration_s)
        class_index = labels.get(video.video_id)
        if class_index is None:
            class_index = int(tcam.scores.mean(axis=0).argmax())
        proposals.extend(extract_proposals(
            tcam, class_index, tuple(config.proposal_thresholds),
            config.contrast_margin, config.min_proposal_segments))
    return temporal_nms(proposals, config.nms_iou)
