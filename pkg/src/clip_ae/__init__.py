"""Unsupervised temporal action localization on pre-extracted features.

Audio-visual cross-attention fusion and cross-view collaboration trained
with self-supervised losses plus k-means pseudo-labels, all gradients
hand-derived and finite-difference checked; localization via thresholded
class activation maps and evaluation via mAP at temporal IoU.
"""

from .errors import ClipAeError
from .feature_io import (
    Dataset,
    FeatureSequence,
    GroundTruthSegment,
    VideoEntry,
    load_manifest,
    read_feature_file,
    synth_dataset,
    write_feature_file,
)
from .fusion import caf_forward, fusion_backward, init_fusion_params
from .crossview import ccp_backward, collaborative_attention, init_ccp_params
from .losses import (
    MemoryBank,
    decorrelation_loss,
    init_memory_bank,
    instance_discrimination_loss,
    update_memory_bank,
)
from .pipeline import (
    finite_difference_check,
    forward_video,
    init_model_params,
    loss_gradients,
)
from .trainer import (
    TrainConfig,
    TrainResult,
    cluster_pseudo_labels,
    load_checkpoint,
    save_checkpoint,
    train,
)
from .localization import (
    Proposal,
    Tcam,
    compute_tcam,
    extract_proposals,
    localize_dataset,
    temporal_nms,
)
from .evaluation import (
    EvalReport,
    align_proposals,
    aligned_proposals,
    average_precision,
    evaluate,
    run_ablation,
    temporal_iou,
)

__version__ = "0.1.0"

__all__ = [
    "ClipAeError",
    "Dataset",
    "EvalReport",
    "FeatureSequence",
    "GroundTruthSegment",
    "MemoryBank",
    "Proposal",
    "Tcam",
    "TrainConfig",
    "TrainResult",
    "VideoEntry",
    "align_proposals",
    "aligned_proposals",
    "average_precision",
    "caf_forward",
    "ccp_backward",
    "cluster_pseudo_labels",
    "collaborative_attention",
    "compute_tcam",
    "decorrelation_loss",
    "evaluate",
    "extract_proposals",
    "finite_difference_check",
    "forward_video",
    "fusion_backward",
    "init_ccp_params",
    "init_fusion_params",
    "init_memory_bank",
    "init_model_params",
    "instance_discrimination_loss",
    "load_checkpoint",
    "load_manifest",
    "localize_dataset",
    "loss_gradients",
    "read_feature_file",
    "run_ablation",
    "save_checkpoint",
    "synth_dataset",
    "temporal_iou",
    "temporal_nms",
    "train",
    "update_memory_bank",
    "write_feature_file",
]
