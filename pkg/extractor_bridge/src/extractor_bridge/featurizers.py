"""Builtin deterministic featurizers standing in for pretrained extractors.

Each modality maps decoded frames to per-segment embeddings through a fixed
random projection whose weights are seeded constants, so repeated runs are
bit-identical (the moral equivalent of frozen pretrained weights). The three
modalities run at different native temporal strides on purpose: the visual
classification stream summarizes whole segments, the vision-language stream
samples twice as finely, and the audio stream four times as finely, which
forces the caller to resample onto a common grid the way heterogeneous real
extractors would.

Real models plug in by registering another identifier; downloading weights
is explicitly out of scope, so unknown identifiers raise ModelUnavailable.
"""

from __future__ import annotations

import numpy as np

from .errors import ModelUnavailable

DEFAULT_MODELS = {
    "cbp": "builtin-cbp-v1",
    "vlp": "builtin-vlp-v1",
    "audio": "builtin-audio-v1",
}

_PROFILE_BINS = 8
_FRAME_DESCRIPTOR = 2 + 3 + 2 * _PROFILE_BINS   # intensity stats + BGR + profiles
_WINDOW_DESCRIPTOR = 3 * _FRAME_DESCRIPTOR      # mean, std, last-first over frames
_AUDIO_FFT_BINS = 8
_AUDIO_DESCRIPTOR = 4 + _AUDIO_FFT_BINS          # envelope stats + spectrum


def _frame_descriptor(frame: np.ndarray) -> np.ndarray:
    """Photometric summary of one HxWx3 uint8 frame, all values O(1)."""
    gray = frame.mean(axis=2) / 255.0
    rows = gray.mean(axis=1)
    cols = gray.mean(axis=0)
    profiles = [chunk.mean() for chunk in np.array_split(rows, _PROFILE_BINS)]
    profiles += [chunk.mean() for chunk in np.array_split(cols, _PROFILE_BINS)]
    channels = frame.reshape(-1, 3).mean(axis=0) / 255.0
    return np.concatenate([[gray.mean(), gray.std()], channels, profiles])


def _window_descriptor(frames: list[np.ndarray]) -> np.ndarray:
    per_frame = np.stack([_frame_descriptor(f) for f in frames])
    return np.concatenate([per_frame.mean(axis=0), per_frame.std(axis=0),
                           per_frame[-1] - per_frame[0]])


def _audio_descriptor(frames: list[np.ndarray]) -> np.ndarray:
    """Luma-envelope proxy: temporal intensity dynamics plus a coarse
    spectrum. Containers without a separable audio track (every test clip)
    still get a deterministic, motion-sensitive signal this way."""
    envelope = np.array([f.mean() / 255.0 for f in frames])
    spectrum = np.abs(np.fft.rfft(envelope, n=2 * _AUDIO_FFT_BINS))
    spectrum = spectrum[:_AUDIO_FFT_BINS] / len(envelope)
    stats = [envelope.mean(), envelope.std(), envelope.max(), envelope.min()]
    return np.concatenate([stats, spectrum])


class _ProjectionModel:
    """Frozen affine projection + tanh over a window descriptor."""

    def __init__(self, seed: int, in_dim: int, out_dim: int,
                 descriptor) -> None:
        rng = np.random.default_rng(seed)
        self.weight = rng.normal(size=(out_dim, in_dim)) / np.sqrt(in_dim)
        self.bias = rng.normal(size=out_dim) * 0.1
        self.dim = out_dim
        self._descriptor = descriptor

    def __call__(self, window_frames: list[np.ndarray]) -> np.ndarray:
        descriptor = self._descriptor(window_frames)
        return np.tanh(self.weight @ descriptor + self.bias)


# (window length as a fraction of --segment-seconds, output dim, seed)
_BUILTINS = {
    "builtin-cbp-v1": dict(stride_fraction=1.0, dim=32, seed=101,
                           in_dim=_WINDOW_DESCRIPTOR,
                           descriptor=_window_descriptor),
    "builtin-vlp-v1": dict(stride_fraction=0.5, dim=48, seed=202,
                           in_dim=_WINDOW_DESCRIPTOR,
                           descriptor=_window_descriptor),
    "builtin-audio-v1": dict(stride_fraction=0.25, dim=24, seed=303,
                             in_dim=_AUDIO_DESCRIPTOR,
                             descriptor=_audio_descriptor),
}


class Featurizer:
    """One modality's native-stride windowing plus its frozen model."""

    def __init__(self, identifier: str) -> None:
        if identifier not in _BUILTINS:
            raise ModelUnavailable(
                f"model {identifier!r} is not registered and weight downloads "
                f"are out of scope; available: {sorted(_BUILTINS)}")
        spec = _BUILTINS[identifier]
        self.identifier = identifier
        self.stride_fraction = spec["stride_fraction"]
        self.dim = spec["dim"]
        self._model = _ProjectionModel(spec["seed"], spec["in_dim"],
                                       spec["dim"], spec["descriptor"])

    def window_frames(self, fps: float, segment_seconds: float) -> int:
        return max(1, round(fps * segment_seconds * self.stride_fraction))

    def extract(self, frames: list[np.ndarray], fps: float,
                segment_seconds: float) -> np.ndarray:
        """(T_native, dim) over complete windows; partial tails are dropped
        so every emitted segment covers the same amount of video."""
        window = self.window_frames(fps, segment_seconds)
        count = len(frames) // window
        rows = [self._model(frames[i * window:(i + 1) * window])
                for i in range(count)]
        if not rows:
            return np.empty((0, self.dim))
        return np.stack(rows)
