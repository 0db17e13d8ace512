"""Run the three modality featurizers over videos and emit CAFE + manifest.

Usage:
    python3 -m extractor_bridge.extract --videos DIR --out DIR --segment-seconds 1.0

The output directory receives one `<video>_<modality>.cafe` file per video
and modality plus a `manifest.json`, both in the consumer's published
formats. Modalities run at different native strides; every video's three
streams are linearly interpolated onto the coarsest stream's segment grid,
never silently truncated.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import dataclass, field
from pathlib import Path

import cv2
import numpy as np

from .cafe import write_cafe
from .errors import AlignmentFailure, BridgeError, DecodeFailure
from .featurizers import DEFAULT_MODELS, Featurizer

VIDEO_SUFFIXES = {".avi", ".mp4", ".mov", ".mkv"}
_FALLBACK_FPS = 24.0

MODALITIES = ("audio", "cbp", "vlp")


@dataclass
class ExtractionJob:
    videos: list[Path]
    out_dir: Path
    segment_seconds: float = 1.0
    num_classes: int = 2
    models: dict[str, str] = field(
        default_factory=lambda: dict(DEFAULT_MODELS))


def decode_video(path: str | Path) -> tuple[list[np.ndarray], float]:
    """All frames (BGR uint8) plus the frame rate."""
    capture = cv2.VideoCapture(str(path))
    if not capture.isOpened():
        raise DecodeFailure(f"cannot open {path}")
    fps = capture.get(cv2.CAP_PROP_FPS)
    if not fps or fps <= 0 or not np.isfinite(fps):
        fps = _FALLBACK_FPS
    frames = []
    while True:
        ok, frame = capture.read()
        if not ok:
            break
        frames.append(frame)
    capture.release()
    if not frames:
        raise DecodeFailure(f"{path}: no decodable frames")
    return frames, float(fps)


def align_to_coarsest(features: dict[str, np.ndarray],
                      video_id: str) -> dict[str, np.ndarray]:
    """Resample every modality onto the grid of the one with fewest segments.

    Each column is linearly interpolated between segment centers expressed in
    normalized video time, so streams with different native strides land on
    identical segment boundaries.
    """
    lengths = {m: arr.shape[0] for m, arr in features.items()}
    if min(lengths.values()) < 1:
        empty = sorted(m for m, n in lengths.items() if n < 1)
        raise AlignmentFailure(
            f"{video_id}: modalities {empty} produced no complete segment; "
            f"the clip is shorter than their window at this --segment-seconds")
    target = min(lengths.values())
    target_centers = (np.arange(target) + 0.5) / target
    aligned = {}
    for modality, arr in features.items():
        if arr.shape[0] == target:
            aligned[modality] = arr
            continue
        source_centers = (np.arange(arr.shape[0]) + 0.5) / arr.shape[0]
        aligned[modality] = np.column_stack([
            np.interp(target_centers, source_centers, arr[:, j])
            for j in range(arr.shape[1])
        ])
    return aligned


def extract(job: ExtractionJob) -> Path:
    """Featurize every video in the job; returns the manifest path."""
    featurizers = {m: Featurizer(job.models[m]) for m in MODALITIES}
    job.out_dir.mkdir(parents=True, exist_ok=True)
    entries = []
    for video_path in job.videos:
        frames, fps = decode_video(video_path)
        video_id = Path(video_path).stem
        native = {
            m: featurizers[m].extract(frames, fps, job.segment_seconds)
            for m in MODALITIES
        }
        aligned = align_to_coarsest(native, video_id)
        num_segments = next(iter(aligned.values())).shape[0]
        duration_s = len(frames) / fps / num_segments
        feature_paths = {}
        for modality in MODALITIES:
            name = f"{video_id}_{modality}.cafe"
            write_cafe(job.out_dir / name, aligned[modality])
            feature_paths[modality] = name
        entries.append({
            "id": video_id,
            "segment_duration_s": duration_s,
            "features": feature_paths,
            "ground_truth": [],
        })
    manifest_path = job.out_dir / "manifest.json"
    manifest_path.write_text(json.dumps(
        {"num_classes": job.num_classes, "videos": entries}, indent=2) + "\n")
    return manifest_path


def find_videos(root: str | Path) -> list[Path]:
    root = Path(root)
    if root.is_file():
        return [root]
    return sorted(p for p in root.iterdir()
                  if p.is_file() and p.suffix.lower() in VIDEO_SUFFIXES)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="extractor-bridge",
        description="Emit CAFE feature files plus a manifest from videos.")
    parser.add_argument("--videos", required=True,
                        help="video file or directory of videos "
                             "(.avi/.mp4/.mov/.mkv)")
    parser.add_argument("--out", required=True, help="output directory")
    parser.add_argument("--segment-seconds", type=float, default=1.0,
                        help="visual segment length in seconds (default 1.0)")
    parser.add_argument("--num-classes", type=int, default=2,
                        help="class count recorded in the manifest "
                             "(default 2; extraction itself is unlabeled)")
    for modality in MODALITIES:
        parser.add_argument(f"--{modality}-model",
                            default=DEFAULT_MODELS[modality],
                            help=f"{modality} model identifier "
                                 f"(default {DEFAULT_MODELS[modality]})")
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.segment_seconds <= 0:
            parser.error("--segment-seconds must be positive, "
                         f"got {args.segment_seconds}")
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        videos = find_videos(args.videos)
        if not videos:
            raise DecodeFailure(f"no video files under {args.videos}")
        job = ExtractionJob(
            videos=videos, out_dir=Path(args.out),
            segment_seconds=args.segment_seconds,
            num_classes=args.num_classes,
            models={m: getattr(args, f"{m}_model") for m in MODALITIES})
        manifest = extract(job)
    except (BridgeError, OSError) as exc:
        print(json.dumps({"error": type(exc).__name__, "message": str(exc)}),
              file=sys.stderr)
        return 1
    print(json.dumps({"manifest": str(manifest), "videos": len(videos)}))
    return 0


if __name__ == "__main__":
    sys.exit(main())
