"""Weakly supervised temporal action localization via action selection learning."""

from .data import (
    Dataset,
    SyntheticConfig,
    VideoRecord,
    batch_iter,
    generate_synthetic,
    load_dataset,
    resample_linear,
    save_dataset,
)
from .errors import (
    AslocError,
    ConfigError,
    DataError,
    NumericError,
    ShapeError,
)
from .estimator import AslLocalizer
from .evaluation import EvalConfig, EvalReport, evaluate, segment_iou
from .inference import InferenceConfig, Proposal, localize, localize_dataset, nms
from .model import (
    AslModel,
    LossBreakdown,
    SelectionState,
    asl_loss,
    backward,
    build_pos_neg,
    classification_loss,
    compute_actionness,
    compute_cas,
    forward_and_loss,
    fuse_selection,
    init_model,
    load_checkpoint,
    save_checkpoint,
    topk_per_class,
    video_class_probs,
)
from .training import EpochLog, TrainConfig, train

__all__ = [
    "AslLocalizer",
    "AslModel",
    "AslocError",
    "ConfigError",
    "DataError",
    "Dataset",
    "EpochLog",
    "EvalConfig",
    "EvalReport",
    "InferenceConfig",
    "LossBreakdown",
    "NumericError",
    "Proposal",
    "SelectionState",
    "ShapeError",
    "SyntheticConfig",
    "TrainConfig",
    "VideoRecord",
    "asl_loss",
    "backward",
    "batch_iter",
    "build_pos_neg",
    "classification_loss",
    "compute_actionness",
    "compute_cas",
    "evaluate",
    "forward_and_loss",
    "fuse_selection",
    "generate_synthetic",
    "init_model",
    "load_checkpoint",
    "load_dataset",
    "localize",
    "localize_dataset",
    "nms",
    "resample_linear",
    "save_checkpoint",
    "save_dataset",
    "segment_iou",
    "topk_per_class",
    "train",
    "video_class_probs",
]

__version__ = "0.1.0"
