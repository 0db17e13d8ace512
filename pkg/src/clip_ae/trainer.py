"""Training loop: pseudo-label clustering alternated with mini-batch descent.

The loop is the unsupervised two-stage iteration: k-means over pooled video
features produces video-level pseudo-labels, then stochastic gradient descent
minimizes the self-supervised objective plus a weighted cross-entropy of the
classification head against those labels. Labels refresh on a fixed epoch
cadence. Everything is seeded and single-threaded, so a run is
bit-reproducible from (dataset, config) alone.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy.optimize import linear_sum_assignment
from scipy.spatial.distance import cdist

from .affine import AffineMap
from .crossview import CcpParams
from .errors import (
    DimensionMismatch,
    DivergenceDetected,
    InvalidArgument,
    IoFailure,
    SchemaError,
    TooFewVideos,
)
from .feature_io import Dataset, _check_keys
from .fusion import FusionParams
from .losses import MemoryBank, init_memory_bank, update_memory_bank
from .pipeline import (
    ModelParams,
    forward_video,
    frozen_param_names,
    init_model_params,
    loss_gradients,
    named_params,
)

_MAX_KMEANS_ITERS = 100
_SHIFT_TOL = 1e-6
_DIVERGENCE_LIMIT = 1e6

_DEFAULT_THRESHOLDS = tuple(round(0.1 * i, 1) for i in range(1, 10))


@dataclass
class TrainConfig:
    """Every knob of a training run; JSON-serializable, unknown keys rejected."""

    seed: int = 0
    learning_rate: float = 1e-2
    epochs: int = 20
    batch_size: int = 8
    num_classes: int = 3
    cluster_refresh_period: int = 5
    caf_enabled: bool = True
    ccp_enabled: bool = True
    d_x: int | None = None
    num_stages: int = 2
    share_stage_weights: bool = True
    encoder_tanh: bool = False
    d_k: int | None = None
    d_v: int | None = None
    tau: float = 1.0
    bank_momentum: float = 0.5
    decor_row_normalize: bool = False
    lambda_ce: float = 1.0
    proposal_thresholds: tuple[float, ...] = _DEFAULT_THRESHOLDS
    contrast_margin: float = 0.25
    min_proposal_segments: int = 3
    nms_iou: float = 0.5

    def validate(self) -> None:
        if self.num_classes < 2:
            raise InvalidArgument(f"num_classes must be >= 2, got {self.num_classes}")
        if self.learning_rate <= 0:
            raise InvalidArgument(f"learning_rate must be positive, got {self.learning_rate}")
        if self.epochs < 0:
            raise InvalidArgument(f"epochs must be >= 0, got {self.epochs}")
        if self.batch_size < 1:
            raise InvalidArgument(f"batch_size must be >= 1, got {self.batch_size}")
        if self.cluster_refresh_period < 1:
            raise InvalidArgument(
                f"cluster_refresh_period must be >= 1, got {self.cluster_refresh_period}")
        if self.tau <= 0:
            raise InvalidArgument(f"tau must be positive, got {self.tau}")
        if not 0.0 <= self.bank_momentum < 1.0:
            raise InvalidArgument(f"bank_momentum must be in [0, 1), got {self.bank_momentum}")
        if not 0.0 <= self.contrast_margin <= 0.5:
            raise InvalidArgument(
                f"contrast_margin must be in [0, 0.5], got {self.contrast_margin}")
        if self.min_proposal_segments < 1:
            raise InvalidArgument(
                f"min_proposal_segments must be >= 1, got {self.min_proposal_segments}")
        if not 0.0 <= self.nms_iou <= 1.0:
            raise InvalidArgument(f"nms_iou must be in [0, 1], got {self.nms_iou}")
        if self.num_stages < 1:
            raise InvalidArgument(f"num_stages must be >= 1, got {self.num_stages}")
        thresholds = tuple(self.proposal_thresholds)
        if not thresholds or any(not 0.0 < t < 1.0 for t in thresholds):
            raise InvalidArgument("proposal_thresholds must be nonempty and inside (0, 1)")
        if list(thresholds) != sorted(thresholds):
            raise InvalidArgument("proposal_thresholds must be ascending")


_CONFIG_FIELDS = set(TrainConfig.__dataclass_fields__)


def config_from_dict(raw: dict, where: str = "config") -> TrainConfig:
    """Build a TrainConfig from parsed JSON, rejecting unknown keys."""
    if not isinstance(raw, dict):
        raise SchemaError(f"{where}: expected an object, got {type(raw).__name__}")
    _check_keys(raw, _CONFIG_FIELDS, set(), where)
    if "proposal_thresholds" in raw:
        raw = dict(raw, proposal_thresholds=tuple(raw["proposal_thresholds"]))
    config = TrainConfig(**raw)
    config.validate()
    return config


def load_train_config(path: str | Path) -> TrainConfig:
    try:
        with open(path, encoding="utf-8") as handle:
            raw = json.load(handle)
    except OSError as exc:
        raise IoFailure(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise SchemaError(f"config {path} is not valid JSON: {exc}") from exc
    return config_from_dict(raw, where=str(path))


@dataclass
class PseudoLabels:
    """Cluster assignment per video plus a distance-ratio confidence.

    confidence[i] = (distance to nearest centroid) / (distance to second
    nearest), in [0, 1]; lower means the assignment is less ambiguous.
    """

    assignments: np.ndarray  # (N,) ints in [0, K)
    confidence: np.ndarray   # (N,) floats
    centroids: np.ndarray    # (K, d)


def _kmeans_pp_init(points: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    """Greedy k-means++ seeding: sample a few D^2-weighted candidates per
    centroid and keep the one minimizing the resulting potential."""
    n = points.shape[0]
    centroids = np.empty((k, points.shape[1]))
    centroids[0] = points[rng.integers(n)]
    d2 = cdist(points, centroids[:1], "sqeuclidean")[:, 0]
    num_candidates = 2 + int(np.log(k))
    for i in range(1, k):
        total = d2.sum()
        if total <= 0.0:
            # all points coincide with chosen centroids; any point works
            centroids[i] = points[rng.integers(n)]
            continue
        candidates = rng.choice(n, size=num_candidates, p=d2 / total)
        best_d2 = None
        best_point = None
        for candidate in candidates:
            cand_d2 = np.minimum(
                d2, cdist(points, points[candidate][None, :], "sqeuclidean")[:, 0])
            if best_d2 is None or cand_d2.sum() < best_d2.sum():
                best_d2 = cand_d2
                best_point = candidate
        centroids[i] = points[best_point]
        d2 = best_d2
    return centroids


def _lloyd(points: np.ndarray, centroids: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Lloyd iterations until centroid shift < tolerance or the cap.

    Empty clusters steal the point currently farthest from its assigned
    centroid, one point per empty cluster in ascending cluster order.
    """
    k = centroids.shape[0]
    labels = np.zeros(points.shape[0], dtype=int)
    for _ in range(_MAX_KMEANS_ITERS):
        dists = cdist(points, centroids, "sqeuclidean")
        labels = dists.argmin(axis=1)
        own = dists[np.arange(points.shape[0]), labels].copy()
        new_centroids = centroids.copy()
        counts = np.bincount(labels, minlength=k)
        for cluster in range(k):
            if counts[cluster] == 0:
                stolen = int(own.argmax())
                labels[stolen] = cluster
                counts[cluster] = 1
                own[stolen] = -1.0  # not stealable twice
        for cluster in range(k):
            new_centroids[cluster] = points[labels == cluster].mean(axis=0)
        shift = np.linalg.norm(new_centroids - centroids, axis=1).max()
        centroids = new_centroids
        if shift < _SHIFT_TOL:
            break
    dists = cdist(points, centroids, "sqeuclidean")
    return dists.argmin(axis=1), centroids


def cluster_pseudo_labels(pooled: np.ndarray, num_clusters: int, seed: int) -> PseudoLabels:
    """Seeded k-means over per-video pooled features.

    Deterministic for a fixed seed; at most 100 iterations or centroid shift
    below 1e-6.
    """
    pooled = np.asarray(pooled, dtype=np.float64)
    if pooled.ndim != 2:
        raise DimensionMismatch(f"pooled features must be 2-d, got shape {pooled.shape}")
    if num_clusters < 1:
        raise InvalidArgument(f"num_clusters must be >= 1, got {num_clusters}")
    if pooled.shape[0] < num_clusters:
        raise TooFewVideos(
            f"{pooled.shape[0]} videos cannot form {num_clusters} clusters")
    rng = np.random.default_rng(seed)
    centroids = _kmeans_pp_init(pooled, num_clusters, rng)
    labels, centroids = _lloyd(pooled, centroids)
    dists = np.sqrt(cdist(pooled, centroids, "sqeuclidean"))
    if num_clusters == 1:
        confidence = np.zeros(pooled.shape[0])
    else:
        ordered = np.sort(dists, axis=1)
        nearest, second = ordered[:, 0], ordered[:, 1]
        confidence = np.where(second > 0.0, nearest / np.maximum(second, 1e-300), 1.0)
    return PseudoLabels(assignments=labels, confidence=confidence, centroids=centroids)


def align_clusters(assignments: np.ndarray, references: np.ndarray,
                   num_clusters: int) -> np.ndarray:
    """Best one-to-one cluster id -> reference id mapping by agreement count
    (Hungarian algorithm on the negated contingency table)."""
    assignments = np.asarray(assignments, dtype=int)
    references = np.asarray(references, dtype=int)
    if assignments.shape != references.shape:
        raise DimensionMismatch(
            f"assignment/reference length mismatch: {assignments.shape} vs "
            f"{references.shape}")
    contingency = np.zeros((num_clusters, num_clusters))
    for cluster, reference in zip(assignments, references):
        contingency[cluster, reference] += 1
    rows, cols = linear_sum_assignment(-contingency)
    mapping = np.arange(num_clusters)
    mapping[rows] = cols
    return mapping


def _renumber_like(labels: PseudoLabels, previous: np.ndarray,
                   num_clusters: int) -> PseudoLabels:
    """Renumber cluster ids to best match a previous assignment. k-means ids
    are arbitrary per run; without this every refresh could permute the
    classes the head is being trained toward."""
    mapping = align_clusters(labels.assignments, previous, num_clusters)
    inverse = np.empty_like(mapping)
    inverse[mapping] = np.arange(num_clusters)
    return PseudoLabels(assignments=mapping[labels.assignments],
                        confidence=labels.confidence,
                        centroids=labels.centroids[inverse])


def clustering_purity(assignments: np.ndarray, reference: np.ndarray) -> float:
    """Fraction of videos whose cluster's majority reference class matches
    their own; the standard majority-vote purity."""
    assignments = np.asarray(assignments)
    reference = np.asarray(reference)
    if assignments.shape != reference.shape:
        raise DimensionMismatch(
            f"assignment/reference length mismatch: {assignments.shape} vs {reference.shape}")
    correct = 0
    for cluster in np.unique(assignments):
        members = reference[assignments == cluster]
        correct += np.bincount(members).max()
    return correct / assignments.size


def pooled_clustering_features(dataset: Dataset, params: ModelParams) -> np.ndarray:
    """Per-video clustering feature: the fused cbp stream (encoded cbp when
    fusion is off) averaged over segments. Shape (N, d_x)."""
    rows = [forward_video(video, params, banks=None, index=None).fused_cbp.mean(axis=1)
            for video in dataset.videos]
    return np.stack(rows)


@dataclass
class EpochStats:
    epoch: int
    de_cor: float
    ins_dis: float
    ce: float
    objective: float

    @property
    def l_self(self) -> float:
        return self.de_cor + self.ins_dis


@dataclass
class TrainResult:
    params: ModelParams
    banks: tuple[MemoryBank, MemoryBank] | None
    config: TrainConfig
    video_ids: list[str]
    loss_history: list[EpochStats]
    label_history: list[PseudoLabels] = field(default_factory=list)

    @property
    def pseudo_labels(self) -> np.ndarray:
        return self.label_history[-1].assignments


def _dataset_dims(dataset: Dataset) -> tuple[int, int, int]:
    """(d_audio, d_cbp, d_vlp), checked identical across videos."""
    dims = {}
    for video in dataset.videos:
        for modality, seq in video.features.items():
            previous = dims.setdefault(modality, seq.dim)
            if previous != seq.dim:
                raise DimensionMismatch(
                    f"video {video.video_id} has {modality} dim {seq.dim}, "
                    f"expected {previous}")
    return dims["audio"], dims["cbp"], dims["vlp"]


def init_from_config(dataset: Dataset, config: TrainConfig) -> ModelParams:
    """Seeded parameter initialization sized from the dataset."""
    d_audio, d_cbp, d_vlp = _dataset_dims(dataset)
    rng = np.random.default_rng(config.seed)
    return init_model_params(
        rng, d_audio, d_cbp, d_vlp, config.num_classes,
        d_x=config.d_x, num_stages=config.num_stages,
        share_stage_weights=config.share_stage_weights,
        encoder_tanh=config.encoder_tanh, d_k=config.d_k, d_v=config.d_v,
        caf_enabled=config.caf_enabled, ccp_enabled=config.ccp_enabled,
        tau=config.tau, decor_row_normalize=config.decor_row_normalize)


def train(dataset: Dataset, config: TrainConfig) -> TrainResult:
    """Run the full loop and return parameters plus complete histories.

    Pseudo-labels refresh at epoch 0 and every cluster_refresh_period epochs;
    a final refresh on the trained features is always appended, so
    label_history has at least one entry even for 0 epochs. Memory banks
    update once per video per epoch, in ascending video index within each
    batch. Raises DivergenceDetected if the batch objective passes 1e6.
    """
    config.validate()
    if dataset.num_videos < config.num_classes:
        raise TooFewVideos(
            f"{dataset.num_videos} videos cannot form {config.num_classes} clusters")
    params = init_from_config(dataset, config)
    rng = np.random.default_rng(config.seed + 1)  # distinct stream from init
    num_videos = dataset.num_videos
    banks = None
    if config.ccp_enabled:
        banks = (
            init_memory_bank(rng, num_videos, params.crossview.d_v,
                             config.bank_momentum, "vlp"),
            init_memory_bank(rng, num_videos, params.crossview.d_v,
                             config.bank_momentum, "cbp"),
        )
    trainable = [(name, array) for name, array in named_params(params)
                 if name not in frozen_param_names(params)]
    label_history: list[PseudoLabels] = []
    loss_history: list[EpochStats] = []
    labels = None
    for epoch in range(config.epochs):
        if epoch % config.cluster_refresh_period == 0:
            pooled = pooled_clustering_features(dataset, params)
            refreshed = cluster_pseudo_labels(pooled, config.num_classes,
                                              config.seed + epoch)
            if labels is not None:
                refreshed = _renumber_like(refreshed, labels, config.num_classes)
            label_history.append(refreshed)
            labels = refreshed.assignments
        order = rng.permutation(num_videos)
        sums = np.zeros(4)  # de_cor, ins_dis, ce, objective, summed per video
        for start in range(0, num_videos, config.batch_size):
            batch = order[start:start + config.batch_size]
            videos = [dataset.videos[i] for i in batch]
            result = loss_gradients(
                videos, [int(i) for i in batch], params, banks,
                labels=[int(labels[i]) for i in batch],
                lambda_ce=config.lambda_ce)
            if result.objective > _DIVERGENCE_LIMIT:
                raise DivergenceDetected(
                    f"objective {result.objective:.3e} at epoch {epoch}")
            for name, array in trainable:
                array -= config.learning_rate * result.grads[name]
            if banks is not None:
                by_index = sorted(zip(batch, result.forwards), key=lambda p: p[0])
                for index, fwd in by_index:
                    update_memory_bank(banks[0], int(index), fwd.pooled_vlp)
                    update_memory_bank(banks[1], int(index), fwd.pooled_cbp)
            sums += len(batch) * np.array([result.losses.de_cor, result.losses.ins_dis,
                                           result.ce, result.objective])
        means = sums / num_videos
        loss_history.append(EpochStats(epoch, *(float(x) for x in means)))
    pooled = pooled_clustering_features(dataset, params)
    final = cluster_pseudo_labels(pooled, config.num_classes,
                                  config.seed + config.epochs)
    if labels is not None:
        final = _renumber_like(final, labels, config.num_classes)
    label_history.append(final)
    return TrainResult(params=params, banks=banks, config=config,
                       video_ids=[v.video_id for v in dataset.videos],
                       loss_history=loss_history, label_history=label_history)


CHECKPOINT_VERSION = 1

_CHECKPOINT_KEYS = {"format_version", "config", "video_ids", "params", "banks",
                    "pseudo_labels", "label_history", "loss_history"}


def _affine_to_json(affine: AffineMap) -> dict:
    return {"weight": affine.weight.tolist(), "bias": affine.bias.tolist()}


def _affine_from_json(obj: dict, where: str) -> AffineMap:
    _check_keys(obj, {"weight", "bias"}, {"weight", "bias"}, where)
    return AffineMap(np.array(obj["weight"], dtype=np.float64),
                     np.array(obj["bias"], dtype=np.float64))


def save_checkpoint(path: str | Path, result: TrainResult) -> None:
    """Write the trained model as one JSON document.

    Python's JSON float formatting round-trips 64-bit values exactly, so a
    load followed by a save is lossless.
    """
    params = result.params
    fusion = params.fusion
    params_json = {
        "enc_audio": _affine_to_json(fusion.enc_audio),
        "enc_cbp": _affine_to_json(fusion.enc_cbp),
        "fusion_weight": fusion.weight.tolist() if fusion.share_stage_weights else None,
        "stage_weights": (None if fusion.share_stage_weights
                          else [w.tolist() for w in fusion.stage_weights]),
        "w_query": params.crossview.w_query.tolist(),
        "w_key": params.crossview.w_key.tolist(),
        "w_value_cbp": params.crossview.w_value_cbp.tolist(),
        "w_value_vlp": params.crossview.w_value_vlp.tolist(),
        "head": _affine_to_json(params.head),
    }
    banks_json = None
    if result.banks is not None:
        banks_json = {"vlp": result.banks[0].vectors.tolist(),
                      "cbp": result.banks[1].vectors.tolist()}
    doc = {
        "format_version": CHECKPOINT_VERSION,
        "config": asdict(result.config),
        "video_ids": result.video_ids,
        "params": params_json,
        "banks": banks_json,
        "pseudo_labels": [int(x) for x in result.pseudo_labels],
        "label_history": [[int(x) for x in pl.assignments]
                          for pl in result.label_history],
        "loss_history": [
            {"epoch": s.epoch, "de_cor": s.de_cor, "ins_dis": s.ins_dis,
             "ce": s.ce, "objective": s.objective}
            for s in result.loss_history
        ],
    }
    try:
        with open(path, "w", encoding="utf-8") as handle:
            json.dump(doc, handle)
    except OSError as exc:
        raise IoFailure(f"cannot write checkpoint {path}: {exc}") from exc


def load_checkpoint(path: str | Path) -> TrainResult:
    """Read a checkpoint back into a TrainResult (histories as plain labels)."""
    try:
        with open(path, encoding="utf-8") as handle:
            doc = json.load(handle)
    except OSError as exc:
        raise IoFailure(f"cannot read checkpoint {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise SchemaError(f"checkpoint {path} is not valid JSON: {exc}") from exc
    where = str(path)
    _check_keys(doc, _CHECKPOINT_KEYS, _CHECKPOINT_KEYS, where)
    if doc["format_version"] != CHECKPOINT_VERSION:
        raise SchemaError(
            f"{where}: unsupported checkpoint version {doc['format_version']}")
    config = config_from_dict(doc["config"], where=f"{where}: config")
    pj = doc["params"]
    _check_keys(pj, {"enc_audio", "enc_cbp", "fusion_weight", "stage_weights",
                     "w_query", "w_key", "w_value_cbp", "w_value_vlp", "head"},
                {"enc_audio", "enc_cbp", "head"}, f"{where}: params")
    share = pj.get("fusion_weight") is not None
    fusion = FusionParams(
        enc_audio=_affine_from_json(pj["enc_audio"], f"{where}: enc_audio"),
        enc_cbp=_affine_from_json(pj["enc_cbp"], f"{where}: enc_cbp"),
        weight=(np.array(pj["fusion_weight"], dtype=np.float64) if share
                else np.array(pj["stage_weights"][0], dtype=np.float64)),
        num_stages=config.num_stages,
        share_stage_weights=share,
        stage_weights=(None if share else
                       [np.array(w, dtype=np.float64) for w in pj["stage_weights"]]),
        encoder_tanh=config.encoder_tanh,
    )
    crossview = CcpParams(
        w_query=np.array(pj["w_query"], dtype=np.float64),
        w_key=np.array(pj["w_key"], dtype=np.float64),
        w_value_cbp=np.array(pj["w_value_cbp"], dtype=np.float64),
        w_value_vlp=np.array(pj["w_value_vlp"], dtype=np.float64),
    )
    params = ModelParams(
        fusion=fusion, crossview=crossview,
        head=_affine_from_json(pj["head"], f"{where}: head"),
        caf_enabled=config.caf_enabled, ccp_enabled=config.ccp_enabled,
        tau=config.tau, decor_row_normalize=config.decor_row_normalize)
    banks = None
    if doc["banks"] is not None:
        _check_keys(doc["banks"], {"vlp", "cbp"}, {"vlp", "cbp"}, f"{where}: banks")
        banks = (
            MemoryBank(np.array(doc["banks"]["vlp"], dtype=np.float64),
                       config.bank_momentum, "vlp"),
            MemoryBank(np.array(doc["banks"]["cbp"], dtype=np.float64),
                       config.bank_momentum, "cbp"),
        )
    assignments = np.array(doc["pseudo_labels"], dtype=int)
    label_history = [
        PseudoLabels(np.array(entry, dtype=int),
                     np.full(len(entry), np.nan), np.empty((0, 0)))
        for entry in doc["label_history"]
    ]
    if not label_history:
        label_history = [PseudoLabels(assignments, np.full(assignments.size, np.nan),
                                      np.empty((0, 0)))]
    label_history[-1] = PseudoLabels(assignments, label_history[-1].confidence,
                                     label_history[-1].centroids)
    loss_history = [
        EpochStats(entry["epoch"], entry["de_cor"], entry["ins_dis"],
                   entry["ce"], entry["objective"])
        for entry in doc["loss_history"]
    ]
    return TrainResult(params=params, banks=banks, config=config,
                       video_ids=list(doc["video_ids"]),
                       loss_history=loss_history, label_history=label_history)
