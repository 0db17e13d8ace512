"""Shared fixtures and builders for the clip_ae test suite."""

import numpy as np
import pytest

from clip_ae.feature_io import MODALITIES, FeatureSequence, VideoEntry


def random_video(rng, video_id, num_segments, dim, scale=1.0,
                 segment_duration_s=1.0):
    """One video whose three views are independent N(0, scale^2) features."""
    features = {
        m: FeatureSequence(video_id, m,
                           scale * rng.normal(size=(num_segments, dim)),
                           segment_duration_s)
        for m in MODALITIES
    }
    return VideoEntry(video_id, features, segment_duration_s, [])


def random_videos(rng, count, num_segments=5, dim=6, scale=1.0):
    return [random_video(rng, f"v{i:03d}", num_segments, dim, scale)
            for i in range(count)]


@pytest.fixture
def rng():
    return np.random.default_rng(0)
