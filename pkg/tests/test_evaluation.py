"""Detection-metric and ablation-report tests."""

import numpy as np
import pytest

from clip_ae.errors import InvalidArgument, InvalidInterval
from clip_ae.evaluation import (
    ABLATION_COLUMNS,
    DEFAULT_IOU_GRID,
    ablation_table_json,
    ablation_table_text,
    align_proposals,
    average_precision,
    evaluate,
    run_ablation,
    temporal_iou,
)
from clip_ae.feature_io import Dataset, GroundTruthSegment, synth_dataset
from clip_ae.localization import Proposal
from clip_ae.trainer import TrainConfig

from conftest import random_video
from oracles import oracle_average_precision, oracle_iou


def random_interval(rng, horizon=20.0):
    start = float(rng.uniform(0.0, horizon))
    return start, start + float(rng.uniform(1e-3, horizon / 2))


class TestTemporalIou:
    def test_thousand_random_intervals(self):
        rng = np.random.default_rng(17)
        for _ in range(1000):
            a = random_interval(rng)
            b = random_interval(rng)
            iou = temporal_iou(a, b)
            assert iou == oracle_iou(a, b)
            assert iou == temporal_iou(b, a)
            assert 0.0 <= iou <= 1.0
            assert temporal_iou(a, a) == 1.0
            shifted = (a[0] + (a[1] - a[0]) + 1.0, a[1] + (a[1] - a[0]) + 1.0)
            assert temporal_iou(a, shifted) == 0.0

    def test_hand_values(self):
        assert temporal_iou((0.0, 4.0), (1.0, 3.0)) == 0.5
        assert temporal_iou((0.0, 2.0), (1.0, 3.0)) == pytest.approx(1.0 / 3.0)
        assert temporal_iou((0.0, 1.0), (1.0, 2.0)) == 0.0

    @pytest.mark.parametrize("bad", [(1.0, 1.0), (2.0, 1.0)])
    def test_degenerate_interval_rejected(self, bad):
        with pytest.raises(InvalidInterval):
            temporal_iou(bad, (0.0, 1.0))
        with pytest.raises(InvalidInterval):
            temporal_iou((0.0, 1.0), bad)


def random_ap_instance(rng):
    """At most 5 proposals and 3 ground truths across two videos, with
    quantized scores so rank ties actually occur."""
    gts = [
        GroundTruthSegment(f"v{rng.integers(2)}", 0, *random_interval(rng))
        for _ in range(rng.integers(0, 4))
    ]
    proposals = [
        Proposal(f"v{rng.integers(2)}", 0, *random_interval(rng),
                 score=round(float(rng.uniform(0.0, 1.0)), 1))
        for _ in range(rng.integers(0, 6))
    ]
    return proposals, gts


class TestAveragePrecision:
    def test_matches_oracle_on_random_instances(self):
        rng = np.random.default_rng(23)
        for _ in range(200):
            proposals, gts = random_ap_instance(rng)
            threshold = float(rng.choice([0.3, 0.5, 0.7]))
            assert average_precision(proposals, gts, threshold) == \
                oracle_average_precision(proposals, gts, threshold)

    def test_perfect_single_detection(self):
        gts = [GroundTruthSegment("v", 0, 1.0, 3.0)]
        proposals = [Proposal("v", 0, 1.0, 3.0, 0.9)]
        assert average_precision(proposals, gts, 0.5) == 1.0

    def test_true_positive_at_second_rank(self):
        gts = [GroundTruthSegment("v", 0, 10.0, 12.0)]
        proposals = [
            Proposal("v", 0, 0.0, 2.0, 0.9),    # misses
            Proposal("v", 0, 10.0, 12.0, 0.5),  # hits at rank 2
        ]
        assert average_precision(proposals, gts, 0.5) == 0.5

    def test_each_ground_truth_matched_once(self):
        gts = [GroundTruthSegment("v", 0, 0.0, 4.0)]
        proposals = [
            Proposal("v", 0, 0.0, 4.0, 0.9),
            Proposal("v", 0, 0.0, 4.0, 0.8),  # duplicate becomes a miss
        ]
        assert average_precision(proposals, gts, 0.5) == 1.0

    def test_empty_ground_truth_conventions(self):
        assert average_precision([], [], 0.5) == 1.0
        assert average_precision([Proposal("v", 0, 0.0, 1.0, 0.5)], [], 0.5) == 0.0

    def test_no_proposals_scores_zero(self):
        gts = [GroundTruthSegment("v", 0, 0.0, 1.0)]
        assert average_precision([], gts, 0.5) == 0.0

    def test_invariant_under_monotone_score_rescaling(self):
        rng = np.random.default_rng(29)
        for _ in range(50):
            proposals, gts = random_ap_instance(rng)
            rescaled = [Proposal(p.video_id, p.class_index, p.start_s, p.end_s,
                                 2.0 * p.score + 1.0) for p in proposals]
            assert average_precision(proposals, gts, 0.5) == \
                average_precision(rescaled, gts, 0.5)

    def test_videos_do_not_cross_match(self):
        gts = [GroundTruthSegment("a", 0, 0.0, 2.0)]
        proposals = [Proposal("b", 0, 0.0, 2.0, 0.9)]
        assert average_precision(proposals, gts, 0.5) == 0.0


class TestEvaluate:
    def hand_report(self):
        gts = [
            GroundTruthSegment("v", 0, 0.0, 2.0),
            GroundTruthSegment("v", 1, 4.0, 6.0),
        ]
        proposals = [
            Proposal("v", 0, 0.0, 2.0, 0.9),    # class 0 perfect
            Proposal("v", 1, 10.0, 12.0, 0.9),  # class 1 miss
            Proposal("v", 2, 0.0, 1.0, 0.9),    # class without ground truth
        ]
        return evaluate(proposals, gts, thresholds=(0.5,))

    def test_mean_over_ground_truth_classes_only(self):
        report = self.hand_report()
        assert report.per_class[0.5] == {0: 1.0, 1: 0.0, 2: 0.0}
        assert report.map_at[0.5] == 0.5

    def test_averages_equal_window_means(self):
        dataset = synth_dataset(seed=19, num_videos=4, num_classes=2,
                                num_segments=10, dim=4)
        gts = dataset.ground_truth()
        proposals = [Proposal(g.video_id, g.class_index, g.start_s,
                              g.end_s + 0.5, 0.7) for g in gts]
        report = evaluate(proposals, gts)
        assert set(report.averages) == {"0.1:0.5", "0.3:0.7", "0.1:0.7", "0.5:0.95"}
        fine = [round(0.5 + 0.05 * i, 2) for i in range(10)]
        expected = np.mean([report.map_at[t] for t in fine])
        assert report.averages["0.5:0.95"] == pytest.approx(expected, abs=1e-12)

    def test_partial_grid_drops_incomplete_windows(self):
        report = evaluate([], [GroundTruthSegment("v", 0, 0.0, 1.0)],
                          thresholds=(0.5,))
        assert report.averages == {}
        assert list(report.map_at) == [0.5]

    def test_to_json_pct_consistency(self):
        doc = self.hand_report().to_json()
        assert doc["map_at"]["0.5"] == 0.5
        assert doc["map_at_pct"]["0.5"] == 50.0
        assert doc["per_class_ap"]["0.5"] == {"0": 1.0, "1": 0.0, "2": 0.0}
        for window, value in doc["averages"].items():
            assert doc["averages_pct"][window] == pytest.approx(100.0 * value)

    def test_default_grid_covers_both_conventions(self):
        assert DEFAULT_IOU_GRID[0] == 0.1
        assert DEFAULT_IOU_GRID[-1] == 0.95
        assert 0.75 in DEFAULT_IOU_GRID

    @pytest.mark.parametrize("thresholds", [(), (0.0,), (1.2,), (-0.5, 0.5)])
    def test_invalid_thresholds(self, thresholds):
        with pytest.raises(InvalidArgument):
            evaluate([], [], thresholds=thresholds)

    def test_exact_one_threshold_allowed(self):
        report = evaluate([], [], thresholds=(1.0,))
        assert report.map_at[1.0] == 0.0


class TestAlignProposals:
    def aligned_fixture(self, rng):
        videos = []
        gt_classes = [0, 1, 0, 1]
        for i, cls in enumerate(gt_classes):
            video = random_video(rng, f"v{i}", 8, 4)
            video.ground_truth.append(
                GroundTruthSegment(f"v{i}", cls, 1.0, 4.0))
            videos.append(video)
        dataset = Dataset(2, videos)
        proposals = [Proposal(f"v{i}", 1 - cls, 1.0, 4.0, 0.9)
                     for i, cls in enumerate(gt_classes)]
        return dataset, proposals

    def test_relabels_clusters_to_reference_classes(self, rng):
        dataset, proposals = self.aligned_fixture(rng)
        aligned = align_proposals(proposals, dataset)
        assert [p.class_index for p in aligned] == [0, 1, 0, 1]
        report = evaluate(aligned, dataset.ground_truth(), thresholds=(0.5,))
        assert report.map_at[0.5] == 1.0

    def test_unaligned_labels_score_zero(self, rng):
        dataset, proposals = self.aligned_fixture(rng)
        report = evaluate(proposals, dataset.ground_truth(), thresholds=(0.5,))
        assert report.map_at[0.5] == 0.0

    def test_empty_proposals(self, rng):
        dataset, _ = self.aligned_fixture(rng)
        assert align_proposals([], dataset) == []


class TestAblation:
    def test_four_rows_with_expected_shape(self):
        dataset = synth_dataset(seed=27, num_videos=6, num_classes=2,
                                num_segments=10, dim=6)
        config = TrainConfig(seed=27, epochs=1, batch_size=3, num_classes=2, d_x=6)
        rows = run_ablation(dataset, config)
        assert [r.name for r in rows] == ["none", "caf", "ccp", "caf+ccp"]
        assert [(r.caf_enabled, r.ccp_enabled) for r in rows] == \
            [(False, False), (True, False), (False, True), (True, True)]
        for row in rows:
            assert set(row.map_at) == set(ABLATION_COLUMNS)
            assert all(0.0 <= v <= 1.0 for v in row.map_at.values())
            assert 0.0 <= row.avg <= 1.0

        doc = ablation_table_json(rows)
        assert doc["columns"] == ["0.5", "0.75", "0.95", "AVG"]
        assert [r["name"] for r in doc["rows"]] == [r.name for r in rows]
        for json_row, row in zip(doc["rows"], rows):
            assert json_row["avg_pct"] == pytest.approx(100.0 * row.avg)

        text = ablation_table_text(rows)
        lines = text.splitlines()
        assert len(lines) == 6
        assert lines[0].split() == ["config", "0.5", "0.75", "0.95", "AVG"]
        assert lines[-1].startswith("caf+ccp")
