"""Scoring proposals against ground truth.

Average precision is the interpolation-free form: proposals are ranked by
score, each is greedily matched to the best-overlapping unmatched ground
truth of its own video, and AP sums precision at the true-positive ranks
divided by the ground-truth count. Mean AP averages over classes that have
at least one ground-truth segment. The ablation runner trains the four
module-toggle configurations at one seed and reports mAP at 0.5 / 0.75 /
0.95 plus their 0.5:0.95 average.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .errors import InvalidArgument, InvalidInterval
from .feature_io import Dataset, GroundTruthSegment
from .localization import Proposal, localize_dataset, temporal_nms
from .trainer import TrainConfig, TrainResult, align_clusters, train

_COARSE = tuple(round(0.1 * i, 2) for i in range(1, 8))        # 0.1 .. 0.7
_FINE = tuple(round(0.5 + 0.05 * i, 2) for i in range(0, 10))  # 0.5 .. 0.95
DEFAULT_IOU_GRID = tuple(sorted(set(_COARSE) | set(_FINE)))

_AVERAGE_WINDOWS = {
    "0.1:0.5": tuple(round(0.1 * i, 2) for i in range(1, 6)),
    "0.3:0.7": tuple(round(0.1 * i, 2) for i in range(3, 8)),
    "0.1:0.7": _COARSE,
    "0.5:0.95": _FINE,
}


def temporal_iou(a: tuple[float, float], b: tuple[float, float]) -> float:
    """Intersection over union of two [start, end) intervals in seconds."""
    for interval in (a, b):
        start, end = interval
        if not start < end:
            raise InvalidInterval(f"interval must satisfy start < end, got {interval}")
    inter = min(a[1], b[1]) - max(a[0], b[0])
    if inter <= 0.0:
        return 0.0
    union = (a[1] - a[0]) + (b[1] - b[0]) - inter
    return inter / union


def _rank_key(proposal: Proposal) -> tuple:
    # score descending, then earlier start, then shorter length
    return (-proposal.score, proposal.start_s, proposal.length_s, proposal.video_id)


def average_precision(proposals: list[Proposal], gts: list[GroundTruthSegment],
                      iou_threshold: float) -> float:
    """Interpolation-free AP for one class at one IoU threshold.

    Empty ground truth scores 1.0 with no predictions and 0.0 otherwise
    (documented convention). A proposal matches the unmatched same-video
    ground truth of highest IoU >= threshold, ties broken by earliest ground
    truth start.
    """
    if not gts:
        return 1.0 if not proposals else 0.0
    matched = [False] * len(gts)
    true_positive = []
    for proposal in sorted(proposals, key=_rank_key):
        best = -1
        best_iou = 0.0
        for gt_index, gt in enumerate(gts):
            if matched[gt_index] or gt.video_id != proposal.video_id:
                continue
            iou = temporal_iou((proposal.start_s, proposal.end_s),
                               (gt.start_s, gt.end_s))
            if iou < iou_threshold:
                continue
            better = iou > best_iou
            tied_earlier = (best >= 0 and iou == best_iou
                            and gt.start_s < gts[best].start_s)
            if best < 0 or better or tied_earlier:
                best, best_iou = gt_index, iou
        if best >= 0:
            matched[best] = True
            true_positive.append(True)
        else:
            true_positive.append(False)
    hits = 0
    ap = 0.0
    for rank, is_tp in enumerate(true_positive, start=1):
        if is_tp:
            hits += 1
            ap += hits / rank
    return ap / len(gts)


@dataclass
class EvalReport:
    """mAP per IoU threshold plus the standard averaging windows.

    All values are fractions in [0, 1]; to_json also emits percentages.
    Averages appear only when every constituent threshold was evaluated.
    """

    map_at: dict[float, float]
    averages: dict[str, float]
    per_class: dict[float, dict[int, float]]

    def to_json(self) -> dict:
        return {
            "map_at": {f"{t:g}": v for t, v in self.map_at.items()},
            "map_at_pct": {f"{t:g}": 100.0 * v for t, v in self.map_at.items()},
            "averages": dict(self.averages),
            "averages_pct": {k: 100.0 * v for k, v in self.averages.items()},
            "per_class_ap": {
                f"{t:g}": {str(c): v for c, v in table.items()}
                for t, table in self.per_class.items()
            },
        }


def evaluate(proposals: list[Proposal], gts: list[GroundTruthSegment],
             thresholds: tuple[float, ...] = DEFAULT_IOU_GRID) -> EvalReport:
    """Score proposals at every threshold; classes without ground truth are
    excluded from the mean (their AP rows are still reported)."""
    thresholds = tuple(thresholds)
    if not thresholds or any(not 0.0 < t <= 1.0 for t in thresholds):
        raise InvalidArgument("IoU thresholds must be nonempty and inside (0, 1]")
    gt_classes = sorted({gt.class_index for gt in gts})
    all_classes = sorted(set(gt_classes) | {p.class_index for p in proposals})
    by_class_proposals = {
        c: [p for p in proposals if p.class_index == c] for c in all_classes}
    by_class_gts = {c: [g for g in gts if g.class_index == c] for c in all_classes}
    map_at: dict[float, float] = {}
    per_class: dict[float, dict[int, float]] = {}
    for threshold in thresholds:
        table = {
            c: average_precision(by_class_proposals[c], by_class_gts[c], threshold)
            for c in all_classes
        }
        per_class[threshold] = table
        map_at[threshold] = (
            float(np.mean([table[c] for c in gt_classes])) if gt_classes else 0.0)
    averages = {
        window: float(np.mean([map_at[t] for t in members]))
        for window, members in _AVERAGE_WINDOWS.items()
        if all(t in map_at for t in members)
    }
    return EvalReport(map_at=map_at, averages=averages, per_class=per_class)


def _video_reference_classes(dataset: Dataset) -> dict[str, int]:
    """Majority ground-truth class per video, ties to the smallest index."""
    references = {}
    for video in dataset.videos:
        if not video.ground_truth:
            continue
        counts: dict[int, int] = {}
        for gt in video.ground_truth:
            counts[gt.class_index] = counts.get(gt.class_index, 0) + 1
        references[video.video_id] = min(
            counts, key=lambda c: (-counts[c], c))
    return references


def align_proposals(proposals: list[Proposal], dataset: Dataset,
                    nms_iou: float = 0.5) -> list[Proposal]:
    """Relabel cluster indices as ground-truth classes.

    Cluster ids are arbitrary, so proposals are scored after the best
    one-to-one cluster-to-class assignment (maximum label agreement over
    videos that have ground truth). Each video's cluster is read off its own
    proposals; videos without proposals or ground truth do not vote.
    Suppression is re-run afterwards in case the caller's labels were not
    one proposal class per video.
    """
    references = _video_reference_classes(dataset)
    votes: dict[str, int] = {}
    for proposal in proposals:
        votes.setdefault(proposal.video_id, proposal.class_index)
    pairs = [(votes[vid], cls) for vid, cls in references.items() if vid in votes]
    if not pairs:
        return list(proposals)
    clusters, classes = (np.array(x) for x in zip(*pairs))
    mapping = align_clusters(clusters, classes, dataset.num_classes)
    relabeled = [replace(p, class_index=int(mapping[p.class_index]))
                 for p in proposals]
    return temporal_nms(relabeled, nms_iou)


def aligned_proposals(dataset: Dataset, result: TrainResult) -> list[Proposal]:
    """Localize the dataset and relabel cluster indices as ground-truth
    classes via the best one-to-one alignment of pseudo-labels."""
    proposals = localize_dataset(dataset, result)
    return align_proposals(proposals, dataset, result.config.nms_iou)


ABLATION_ROWS = (
    ("none", False, False),
    ("caf", True, False),
    ("ccp", False, True),
    ("caf+ccp", True, True),
)

ABLATION_COLUMNS = (0.5, 0.75, 0.95)


@dataclass
class AblationRow:
    name: str
    caf_enabled: bool
    ccp_enabled: bool
    map_at: dict[float, float]  # keys exactly 0.5, 0.75, 0.95
    avg: float                  # mean mAP over 0.5:0.95 step 0.05


def run_ablation(dataset: Dataset, base_config: TrainConfig) -> list[AblationRow]:
    """Train and evaluate the four toggle configurations at one seed."""
    rows = []
    for name, caf_enabled, ccp_enabled in ABLATION_ROWS:
        config = replace(base_config, caf_enabled=caf_enabled, ccp_enabled=ccp_enabled)
        result = train(dataset, config)
        report = evaluate(aligned_proposals(dataset, result),
                          dataset.ground_truth(), thresholds=_FINE)
        rows.append(AblationRow(
            name=name, caf_enabled=caf_enabled, ccp_enabled=ccp_enabled,
            map_at={t: report.map_at[t] for t in ABLATION_COLUMNS},
            avg=report.averages["0.5:0.95"]))
    return rows


def ablation_table_json(rows: list[AblationRow]) -> dict:
    return {
        "columns": [f"{t:g}" for t in ABLATION_COLUMNS] + ["AVG"],
        "rows": [
            {
                "name": row.name,
                "caf_enabled": row.caf_enabled,
                "ccp_enabled": row.ccp_enabled,
                "map_at": {f"{t:g}": row.map_at[t] for t in ABLATION_COLUMNS},
                "map_at_pct": {f"{t:g}": 100.0 * row.map_at[t]
                               for t in ABLATION_COLUMNS},
                "avg": row.avg,
                "avg_pct": 100.0 * row.avg,
            }
            for row in rows
        ],
    }


def ablation_table_text(rows: list[AblationRow]) -> str:
    """Fixed-width table, mAP as percentages."""
    header = f"{'config':<10}" + "".join(
        f"{f'{t:g}':>8}" for t in ABLATION_COLUMNS) + f"{'AVG':>8}"
    lines = [header, "-" * len(header)]
    for row in rows:
        cells = "".join(f"{100.0 * row.map_at[t]:>8.2f}" for t in ABLATION_COLUMNS)
        lines.append(f"{row.name:<10}{cells}{100.0 * row.avg:>8.2f}")
    return "\n".join(lines)
