"""On-disk feature format, dataset manifest, and synthetic dataset generation.

Feature file layout (little-endian):

    bytes 0..3    magic "CAFE"
    bytes 4..7    format version, u32 (currently 1)
    bytes 8..11   T, u32  (number of segments, rows)
    bytes 12..15  d, u32  (feature dimension, columns)
    bytes 16..    T*d float32, row-major (segment-major)

Payloads are stored at 32-bit precision; everything in memory is float64.
The manifest is a JSON object:

    {"num_classes": K,
     "class_names": ["..."]?,            # optional, K strings
     "videos": [{"id": "...",
                 "features": {"audio": path, "cbp": path, "vlp": path},
                 "segment_duration_s": 1.0,
                 "ground_truth": [{"class": c, "start": s, "end": e}]?}]}

Feature paths are resolved relative to the manifest's directory. Ground truth
lives only here, never in the feature files.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import (
    DimensionZero,
    InvalidArgument,
    IoFailure,
    LengthMismatch,
    MagicMismatch,
    MissingFile,
    NonFiniteValue,
    SchemaError,
    TruncatedFile,
)

MAGIC = b"CAFE"
FORMAT_VERSION = 1
MODALITIES = ("audio", "cbp", "vlp")

_HEADER = struct.Struct("<4sIII")


@dataclass
class FeatureSequence:
    """Per-video, per-modality matrix of T segment embeddings of dimension d."""

    video_id: str
    modality: str  # one of MODALITIES
    data: np.ndarray  # (T, d) float64, row = time step
    segment_duration_s: float = 1.0

    @property
    def num_segments(self) -> int:
        return self.data.shape[0]

    @property
    def dim(self) -> int:
        return self.data.shape[1]

    def validate(self) -> None:
        if self.modality not in MODALITIES:
            raise SchemaError(f"unknown modality {self.modality!r}")
        if self.data.ndim != 2 or self.data.shape[0] < 1 or self.data.shape[1] < 1:
            raise DimensionZero(f"feature matrix must be T>=1 by d>=1, got {self.data.shape}")
        if not np.isfinite(self.data).all():
            t, d = np.argwhere(~np.isfinite(self.data))[0]
            raise NonFiniteValue(f"non-finite value at segment {t}, dim {d}")
        if self.segment_duration_s <= 0:
            raise InvalidArgument(f"segment_duration_s must be > 0, got {self.segment_duration_s}")


@dataclass
class GroundTruthSegment:
    """One annotated action interval, in seconds."""

    video_id: str
    class_index: int
    start_s: float
    end_s: float


@dataclass
class VideoEntry:
    video_id: str
    features: dict[str, FeatureSequence]  # modality -> sequence
    segment_duration_s: float
    ground_truth: list[GroundTruthSegment] = field(default_factory=list)

    @property
    def num_segments(self) -> int:
        return next(iter(self.features.values())).num_segments


@dataclass
class Dataset:
    """A fully loaded and validated manifest: immutable after return."""

    num_classes: int
    videos: list[VideoEntry]
    class_names: list[str] | None = None

    @property
    def num_videos(self) -> int:
        return len(self.videos)

    def ground_truth(self) -> list[GroundTruthSegment]:
        return [g for v in self.videos for g in v.ground_truth]


def read_feature_file(path: str | Path) -> FeatureSequence:
    """Read one CAFE feature file. Stored float32 values are widened to float64.

    Raises MagicMismatch / TruncatedFile / DimensionZero / NonFiniteValue,
    each naming the byte offset or index of the problem.
    """
    path = Path(path)
    if not path.exists():
        raise MissingFile(str(path))
    raw = path.read_bytes()
    if len(raw) < _HEADER.size:
        raise TruncatedFile(f"{path}: {len(raw)} bytes, header needs {_HEADER.size}")
    magic, version, num_segments, dim = _HEADER.unpack_from(raw, 0)
    if magic != MAGIC:
        raise MagicMismatch(f"{path}: bytes 0..3 are {magic!r}, expected {MAGIC!r}")
    if version != FORMAT_VERSION:
        raise SchemaError(f"{path}: unsupported format version {version} at byte 4")
    if num_segments == 0 or dim == 0:
        raise DimensionZero(f"{path}: header declares T={num_segments}, d={dim}")
    expected = _HEADER.size + 4 * num_segments * dim
    if len(raw) != expected:
        raise TruncatedFile(
            f"{path}: payload has {len(raw) - _HEADER.size} bytes from offset "
            f"{_HEADER.size}, expected {expected - _HEADER.size}"
        )
    data = np.frombuffer(raw, dtype="<f4", offset=_HEADER.size).reshape(num_segments, dim)
    if not np.isfinite(data).all():
        t, d = np.argwhere(~np.isfinite(data))[0]
        raise NonFiniteValue(f"{path}: non-finite value at segment {t}, dim {d}")
    return FeatureSequence(
        video_id=path.stem, modality="cbp", data=data.astype(np.float64)
    )


def write_feature_file(seq: FeatureSequence, path: str | Path) -> None:
    """Write a CAFE feature file; payload rounds to float32 little-endian."""
    seq.validate()
    num_segments, dim = seq.data.shape
    header = _HEADER.pack(MAGIC, FORMAT_VERSION, num_segments, dim)
    payload = np.ascontiguousarray(seq.data, dtype="<f4").tobytes()
    try:
        Path(path).write_bytes(header + payload)
    except OSError as exc:
        raise IoFailure(f"{path}: {exc}") from exc


def _require(condition: bool, message: str) -> None:
    if not condition:
        raise SchemaError(message)


def _check_keys(obj: dict, allowed: set[str], required: set[str], where: str) -> None:
    unknown = set(obj) - allowed
    _require(not unknown, f"{where}: unknown keys {sorted(unknown)}")
    missing = required - set(obj)
    _require(not missing, f"{where}: missing keys {sorted(missing)}")


def load_manifest(path: str | Path) -> Dataset:
    """Load a manifest and all its feature files, validating everything.

    All modalities of one video must agree on T. Every malformed input yields
    SchemaError / LengthMismatch / MissingFile, never a partial dataset.
    """
    path = Path(path)
    if not path.exists():
        raise MissingFile(str(path))
    try:
        payload = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise SchemaError(f"{path}: not valid JSON ({exc})") from exc
    _require(isinstance(payload, dict), f"{path}: top level must be an object")
    _check_keys(payload, {"num_classes", "class_names", "videos"},
                {"num_classes", "videos"}, str(path))
    num_classes = payload["num_classes"]
    _require(isinstance(num_classes, int) and num_classes >= 2,
             f"{path}: num_classes must be an integer >= 2")
    class_names = payload.get("class_names")
    if class_names is not None:
        _require(isinstance(class_names, list) and len(class_names) == num_classes
                 and all(isinstance(n, str) for n in class_names),
                 f"{path}: class_names must be {num_classes} strings")
    _require(isinstance(payload["videos"], list) and payload["videos"],
             f"{path}: videos must be a non-empty list")

    base = path.parent
    videos: list[VideoEntry] = []
    seen_ids: set[str] = set()
    for i, entry in enumerate(payload["videos"]):
        where = f"{path}: videos[{i}]"
        _require(isinstance(entry, dict), f"{where}: must be an object")
        _check_keys(entry, {"id", "features", "segment_duration_s", "ground_truth"},
                    {"id", "features", "segment_duration_s"}, where)
        video_id = entry["id"]
        _require(isinstance(video_id, str) and video_id, f"{where}: id must be a non-empty string")
        _require(video_id not in seen_ids, f"{where}: duplicate video id {video_id!r}")
        seen_ids.add(video_id)
        duration = entry["segment_duration_s"]
        _require(isinstance(duration, (int, float)) and duration > 0,
                 f"{where}: segment_duration_s must be a positive number")
        feats_obj = entry["features"]
        _require(isinstance(feats_obj, dict) and set(feats_obj) == set(MODALITIES),
                 f"{where}: features must map exactly {sorted(MODALITIES)}")

        features: dict[str, FeatureSequence] = {}
        for modality in MODALITIES:
            feature_path = base / feats_obj[modality]
            if not feature_path.exists():
                raise MissingFile(f"{where}: {feature_path}")
            seq = read_feature_file(feature_path)
            seq.video_id = video_id
            seq.modality = modality
            seq.segment_duration_s = float(duration)
            features[modality] = seq
        lengths = {m: s.num_segments for m, s in features.items()}
        if len(set(lengths.values())) != 1:
            raise LengthMismatch(f"{video_id}: segment counts differ across modalities: {lengths}")

        gts: list[GroundTruthSegment] = []
        for j, g in enumerate(entry.get("ground_truth") or []):
            gwhere = f"{where}.ground_truth[{j}]"
            _require(isinstance(g, dict), f"{gwhere}: must be an object")
            _check_keys(g, {"class", "start", "end"}, {"class", "start", "end"}, gwhere)
            _require(isinstance(g["class"], int) and 0 <= g["class"] < num_classes,
                     f"{gwhere}: class must be an integer in [0, {num_classes})")
            start, end = g["start"], g["end"]
            _require(isinstance(start, (int, float)) and isinstance(end, (int, float))
                     and 0 <= start < end,
                     f"{gwhere}: need 0 <= start < end, got start={start}, end={end}")
            gts.append(GroundTruthSegment(video_id, g["class"], float(start), float(end)))
        videos.append(VideoEntry(video_id, features, float(duration), gts))

    return Dataset(num_classes=num_classes, videos=videos, class_names=class_names)


def _class_prototypes(rng: np.random.Generator, num_classes: int, dim: int,
                      min_distance: float) -> np.ndarray:
    """Random class mean vectors rescaled so every pairwise distance >= min_distance."""
    protos = rng.normal(size=(num_classes, dim))
    dists = [
        float(np.linalg.norm(protos[i] - protos[j]))
        for i in range(num_classes) for j in range(i + 1, num_classes)
    ]
    smallest = min(dists)
    if smallest < 1e-9:
        raise InvalidArgument("degenerate prototype draw; choose another seed")
    return protos * (min_distance / smallest)


# Per-view temporal response to the action signal. The cbp view mimics
# classification-pretrained features: full strength only on a central block
# of "key" segments, faint elsewhere in the interval. The vlp and audio
# views respond across the complete interval, so recovering full action
# extent requires combining views.
_KEY_FRACTION = 0.4
_CBP_OFF_KEY = 0.25
_VLP_STRENGTH = 0.8
_AUDIO_STRENGTH = 0.9


def _view_profile(modality: str, num_segments: int, start: int, length: int) -> np.ndarray:
    """Per-segment action-signal strength in [0, 1] for one view."""
    profile = np.zeros(num_segments)
    if modality == "cbp":
        key_length = max(1, int(_KEY_FRACTION * length))
        key_start = start + (length - key_length) // 2
        profile[start:start + length] = _CBP_OFF_KEY
        profile[key_start:key_start + key_length] = 1.0
    elif modality == "vlp":
        profile[start:start + length] = _VLP_STRENGTH
    else:
        profile[start:start + length] = _AUDIO_STRENGTH
    return profile


def synth_dataset(seed: int, num_videos: int, num_classes: int, num_segments: int,
                  dim: int, out_dir: str | Path | None = None) -> Dataset:
    """Generate a deterministic synthetic dataset of separable action videos.

    Each video carries one action interval covering 20-60% of its segments.
    The shared latent sequence is unit-variance noise plus the class
    prototype during the interval; prototypes sit at pairwise distance >= 8
    noise standard deviations. Each view observes that latent through its own
    orthogonal projection, small observation noise, and a view-specific
    temporal response: cbp fires at full strength only on a central block of
    key segments, while vlp and audio cover the whole interval. Video-level
    class identity is recoverable from any view; complete action extent is
    only visible across views.

    When out_dir is given, writes CAFE files plus manifest.json there and
    reloads through load_manifest (round-trip at 32-bit precision); otherwise
    returns the in-memory dataset at full precision. Bit-reproducible per seed.
    """
    if num_videos < 1 or num_classes < 2 or num_segments < 1 or dim < 1:
        raise InvalidArgument(
            f"need num_videos>=1, num_classes>=2, num_segments>=1, dim>=1; got "
            f"{num_videos}, {num_classes}, {num_segments}, {dim}"
        )
    rng = np.random.default_rng(seed)
    protos = _class_prototypes(rng, num_classes, dim, min_distance=8.0)
    # one fixed orthogonal view projection per modality
    projections = {}
    for modality in MODALITIES:
        q, _ = np.linalg.qr(rng.normal(size=(dim, dim)))
        projections[modality] = q

    videos: list[VideoEntry] = []
    for v in range(num_videos):
        label = v % num_classes
        lo = max(1, int(np.ceil(0.2 * num_segments)))
        hi = max(lo, int(np.floor(0.6 * num_segments)))
        length = int(rng.integers(lo, hi + 1))
        start = int(rng.integers(0, num_segments - length + 1))
        noise = rng.normal(size=(num_segments, dim))

        video_id = f"video_{v:04d}"
        features = {}
        for modality in MODALITIES:
            profile = _view_profile(modality, num_segments, start, length)
            latent = noise + profile[:, None] * protos[label]
            observed = latent @ projections[modality].T
            observed = observed + 0.1 * rng.normal(size=observed.shape)
            features[modality] = FeatureSequence(video_id, modality, observed, 1.0)
        gt = [GroundTruthSegment(video_id, label, float(start), float(start + length))]
        videos.append(VideoEntry(video_id, features, 1.0, gt))

    dataset = Dataset(num_classes=num_classes, videos=videos)
    if out_dir is None:
        return dataset
    return _write_dataset(dataset, Path(out_dir))


def _write_dataset(dataset: Dataset, out_dir: Path) -> Dataset:
    """Write CAFE files + manifest.json for a dataset and reload it."""
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest: dict = {"num_classes": dataset.num_classes, "videos": []}
    if dataset.class_names is not None:
        manifest["class_names"] = dataset.class_names
    for video in dataset.videos:
        paths = {}
        for modality, seq in video.features.items():
            name = f"{video.video_id}_{modality}.cafe"
            write_feature_file(seq, out_dir / name)
            paths[modality] = name
        entry: dict = {
            "id": video.video_id,
            "features": paths,
            "segment_duration_s": video.segment_duration_s,
        }
        if video.ground_truth:
            entry["ground_truth"] = [
                {"class": g.class_index, "start": g.start_s, "end": g.end_s}
                for g in video.ground_truth
            ]
        manifest["videos"].append(entry)
    manifest_path = out_dir / "manifest.json"
    try:
        manifest_path.write_text(json.dumps(manifest, indent=2) + "\n")
    except OSError as exc:
        raise IoFailure(f"{manifest_path}: {exc}") from exc
    return load_manifest(manifest_path)
