"""clip-ae command line: synth, train, localize, eval, ablate, gradcheck.

One binary with subcommands sharing config parsing and seed plumbing.
Exit codes: 0 success, 2 usage error, 1 runtime error with a single-line
JSON {"error": class, "message": text} on standard error. The seed comes
from --seed, else the CLIP_AE_SEED environment variable, else the
subcommand default; --threads is accepted for interface stability but all
computation is serial (results never depend on it).
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys

import numpy as np

from .errors import ClipAeError, SchemaError
from .evaluation import (
    DEFAULT_IOU_GRID,
    ablation_table_json,
    ablation_table_text,
    align_proposals,
    evaluate,
    run_ablation,
)
from .feature_io import MODALITIES, FeatureSequence, VideoEntry, load_manifest, synth_dataset
from .localization import Proposal, compute_tcam, localize_dataset
from .losses import init_memory_bank
from .pipeline import finite_difference_check, head_features, init_model_params
from .trainer import (
    TrainConfig,
    config_from_dict,
    load_checkpoint,
    save_checkpoint,
    train,
)

GRADCHECK_TOLERANCE = 1e-4

_PROPOSAL_KEYS = ("video_id", "class_index", "start_s", "end_s", "score")


def _positive_int(text: str) -> int:
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {text}")
    return value


def _resolve_seed(args: argparse.Namespace, default: int) -> int:
    if args.seed is not None:
        return args.seed
    env = os.environ.get("CLIP_AE_SEED")
    if env is not None:
        try:
            return int(env)
        except ValueError:
            raise SchemaError(f"CLIP_AE_SEED must be an integer, got {env!r}")
    return default


def _emit(payload: dict) -> None:
    print(json.dumps(payload))


def _write_json(path: str, payload) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2)
        fh.write("\n")


def _load_config(args: argparse.Namespace, num_classes: int) -> TrainConfig:
    """TrainConfig from --config if given, cluster count defaulting to the
    manifest's class count, seed overridden by --seed / CLIP_AE_SEED."""
    if args.config is not None:
        with open(args.config, encoding="utf-8") as fh:
            raw = json.load(fh)
        if not isinstance(raw, dict):
            raise SchemaError(f"{args.config}: config must be a JSON object")
        raw.setdefault("num_classes", num_classes)
        config = config_from_dict(raw, where=str(args.config))
    else:
        config = TrainConfig(num_classes=num_classes)
    seed = _resolve_seed(args, config.seed)
    if seed != config.seed:
        config = dataclasses.replace(config, seed=seed)
    config.validate()
    return config


def cmd_synth(args: argparse.Namespace) -> int:
    seed = _resolve_seed(args, 0)
    dataset = synth_dataset(seed, args.videos, args.classes, args.frames,
                            args.dim, out_dir=args.out)
    _emit({"out": args.out, "seed": seed, "videos": dataset.num_videos,
           "classes": dataset.num_classes, "frames": args.frames, "dim": args.dim})
    return 0


def cmd_train(args: argparse.Namespace) -> int:
    dataset = load_manifest(args.manifest)
    config = _load_config(args, dataset.num_classes)
    result = train(dataset, config)
    save_checkpoint(args.out, result)
    history = result.loss_history
    _emit({
        "checkpoint": args.out,
        "seed": config.seed,
        "epochs": config.epochs,
        "videos": dataset.num_videos,
        "l_self_first": history[0].l_self if history else None,
        "l_self_last": history[-1].l_self if history else None,
        "objective_last": history[-1].objective if history else None,
    })
    return 0


def cmd_localize(args: argparse.Namespace) -> int:
    result = load_checkpoint(args.checkpoint)
    dataset = load_manifest(args.manifest)
    proposals = localize_dataset(dataset, result)
    _write_json(args.out, [dataclasses.asdict(p) for p in proposals])
    if args.tcam_out is not None:
        tcams = {}
        for video in dataset.videos:
            tcam = compute_tcam(head_features(video, result.params),
                                result.params.head, video.video_id,
                                video.segment_duration_s)
            tcams[video.video_id] = {
                "segment_duration_s": tcam.segment_duration_s,
                "scores": tcam.scores.tolist(),
            }
        _write_json(args.tcam_out, tcams)
    _emit({"out": args.out, "proposals": len(proposals),
           "videos": dataset.num_videos})
    return 0


def _read_proposals(path: str) -> list[Proposal]:
    with open(path, encoding="utf-8") as fh:
        raw = json.load(fh)
    if not isinstance(raw, list):
        raise SchemaError(f"{path}: proposals must be a JSON list")
    proposals = []
    for i, record in enumerate(raw):
        if not isinstance(record, dict):
            raise SchemaError(f"{path}: entry {i} is not an object")
        missing = [k for k in _PROPOSAL_KEYS if k not in record]
        unknown = [k for k in record if k not in _PROPOSAL_KEYS]
        if missing or unknown:
            raise SchemaError(
                f"{path}: entry {i} missing keys {missing}, unknown keys {unknown}")
        proposals.append(Proposal(
            str(record["video_id"]), int(record["class_index"]),
            float(record["start_s"]), float(record["end_s"]),
            float(record["score"])))
    return proposals


def cmd_eval(args: argparse.Namespace) -> int:
    proposals = _read_proposals(args.proposals)
    dataset = load_manifest(args.manifest)
    if not args.no_align:
        proposals = align_proposals(proposals, dataset)
    thresholds = tuple(args.thresholds) if args.thresholds else DEFAULT_IOU_GRID
    report = evaluate(proposals, dataset.ground_truth(), thresholds)
    _write_json(args.out, report.to_json())
    _emit({"out": args.out,
           "map_at": {f"{t:g}": report.map_at[t] for t in thresholds}})
    return 0


def cmd_ablate(args: argparse.Namespace) -> int:
    dataset = load_manifest(args.manifest)
    config = _load_config(args, dataset.num_classes)
    rows = run_ablation(dataset, config)
    _write_json(args.out, ablation_table_json(rows))
    print(ablation_table_text(rows))
    return 0


def _gradcheck_batch(seed: int):
    """Seeded unit-scale random batch: 2 videos, T in 4..6, d in 6..8.

    Feature scale stays O(1) so the objective (and with it the roundoff
    floor of central differences) stays small enough to resolve 1e-4
    relative error at step 1e-5.
    """
    rng = np.random.default_rng(seed)
    dim = int(rng.integers(6, 9))
    videos = []
    for v in range(2):
        num_segments = int(rng.integers(4, 7))
        features = {
            m: FeatureSequence(f"gradcheck_{v}", m,
                               rng.normal(size=(num_segments, dim)), 1.0)
            for m in MODALITIES
        }
        videos.append(VideoEntry(f"gradcheck_{v}", features, 1.0, []))
    params = init_model_params(rng, dim, dim, dim, num_classes=2, num_stages=2)
    banks = (init_memory_bank(rng, 2, params.crossview.d_v, 0.5, "vlp"),
             init_memory_bank(rng, 2, params.crossview.d_v, 0.5, "cbp"))
    return videos, params, banks


def cmd_gradcheck(args: argparse.Namespace) -> int:
    seed = _resolve_seed(args, 0)
    videos, params, banks = _gradcheck_batch(seed)
    report = finite_difference_check(videos, [0, 1], params, banks,
                                     labels=[0, 1], lambda_ce=1.0)
    passed = bool(report.max_rel_err < GRADCHECK_TOLERANCE)
    _emit({"seed": seed, "max_rel_err": float(report.max_rel_err),
           "checked": int(report.checked),
           "skipped_small": int(report.skipped_small),
           "tolerance": GRADCHECK_TOLERANCE, "pass": passed})
    return 0 if passed else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="clip-ae",
        description="Unsupervised temporal action localization over "
                    "pre-extracted audio/cbp/vlp features.")
    shared = argparse.ArgumentParser(add_help=False)
    shared.add_argument("--seed", type=int, default=None,
                        help="random seed; default: CLIP_AE_SEED env var, "
                             "else the subcommand default (train/ablate: the "
                             "config seed, others: 0)")
    shared.add_argument("--threads", type=_positive_int, default=1,
                        help="parallelism cap (default 1; execution is "
                             "serial, results do not depend on it)")
    sub = parser.add_subparsers(dest="subcommand", required=True)

    p = sub.add_parser("synth", parents=[shared],
                       help="generate a synthetic feature dataset")
    p.add_argument("--videos", type=_positive_int, default=30,
                   help="number of videos (default 30)")
    p.add_argument("--classes", type=_positive_int, default=3,
                   help="number of action classes (default 3)")
    p.add_argument("--frames", type=_positive_int, default=40,
                   help="segments per video (default 40)")
    p.add_argument("--dim", type=_positive_int, default=16,
                   help="feature dimension per modality (default 16)")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(run=cmd_synth)

    p = sub.add_parser("train", parents=[shared],
                       help="train on a feature manifest")
    p.add_argument("--manifest", required=True, help="manifest.json path")
    p.add_argument("--config", default=None,
                   help="training config JSON (default: built-in defaults "
                        "with K from the manifest)")
    p.add_argument("--out", required=True, help="checkpoint JSON path")
    p.set_defaults(run=cmd_train)

    p = sub.add_parser("localize", parents=[shared],
                       help="extract proposals from a trained checkpoint")
    p.add_argument("--checkpoint", required=True, help="checkpoint JSON path")
    p.add_argument("--manifest", required=True, help="manifest.json path")
    p.add_argument("--out", required=True, help="proposals JSON path")
    p.add_argument("--tcam-out", default=None,
                   help="optional path for per-video activation maps")
    p.set_defaults(run=cmd_localize)

    p = sub.add_parser("eval", parents=[shared],
                       help="score proposals against manifest ground truth")
    p.add_argument("--proposals", required=True, help="proposals JSON path")
    p.add_argument("--manifest", required=True, help="manifest.json path")
    p.add_argument("--thresholds", type=float, nargs="+", default=None,
                   help="IoU thresholds (default: 0.1..0.7 step 0.1 union "
                        "0.5..0.95 step 0.05)")
    p.add_argument("--no-align", action="store_true",
                   help="score cluster indices as-is instead of aligning "
                        "them to ground-truth classes first")
    p.add_argument("--out", required=True, help="report JSON path")
    p.set_defaults(run=cmd_eval)

    p = sub.add_parser("ablate", parents=[shared],
                       help="run the 4-row module ablation at one seed")
    p.add_argument("--manifest", required=True, help="manifest.json path")
    p.add_argument("--config", default=None,
                   help="training config JSON (default: built-in defaults "
                        "with K from the manifest)")
    p.add_argument("--out", required=True, help="table JSON path")
    p.set_defaults(run=cmd_ablate)

    p = sub.add_parser("gradcheck", parents=[shared],
                       help="verify analytic gradients against central "
                            "finite differences on a seeded tiny batch")
    p.set_defaults(run=cmd_gradcheck)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse handles usage errors and --help
        return int(exc.code or 0)
    try:
        return args.run(args)
    except ClipAeError as exc:
        print(json.dumps({"error": type(exc).__name__, "message": str(exc)}),
              file=sys.stderr)
        return 1
    except (OSError, json.JSONDecodeError) as exc:
        print(json.dumps({"error": type(exc).__name__, "message": str(exc)}),
              file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
