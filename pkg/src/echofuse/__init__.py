"""Multi-view echocardiogram video segmentation.

Per-view encoders feed a global attention-based fusion over all views and a
local fusion guided by pseudo-label and center-weight masks; unlabeled clips
are supervised with a dense temporal cycle-consistency loss. Includes a
synthetic multi-view cardiac phantom generator, training/evaluation/ablation
harnesses, and a CLI (`echofuse`).
"""

from .ablation import AblationReport, run_ablation_suite
from .backbone import BackboneConfig, SegmentationOutput, ViewFeatureVolume
from .config import CycleSettings, TrainConfig, load_train_config, save_train_config
from .cycle import CycleConfig, cycle_back_accuracy, dense_cycle_loss
from .data import (
    DatasetManifest,
    MultiViewVideoSample,
    ViewSpec,
    load_manifest,
    load_sample,
    sample_clip,
    save_manifest,
)
from .errors import (
    CheckpointFormatError,
    ConfigError,
    ManifestError,
    ShapeError,
    TrainingDiverged,
)
from .evaluate import EvalResult, evaluate_checkpoint, evaluate_split, model_predict_fn, write_csv
from .global_fusion import (
    AttentionConfig,
    GlobalFusion,
    ViewWiseAttention,
    view_concat,
    view_wise_attention,
)
from .local_fusion import FeatureMask, apply_local_fusion, compute_feature_mask
from .losses import LossWeights, binarize, dice_score, seg_loss, total_loss
from .model import (
    MgfmSettings,
    MlfmSettings,
    ModelOutput,
    MultiViewSegmenter,
    load_checkpoint,
    save_checkpoint,
)
from .phantom import PhantomConfig, generate_dataset, load_phantom_config, render_view
from .train import RunReport, center_target, train

__version__ = "0.1.0"

__all__ = [
    "AblationReport",
    "AttentionConfig",
    "BackboneConfig",
    "CheckpointFormatError",
    "ConfigError",
    "CycleConfig",
    "CycleSettings",
    "DatasetManifest",
    "EvalResult",
    "FeatureMask",
    "GlobalFusion",
    "LossWeights",
    "ManifestError",
    "MgfmSettings",
    "MlfmSettings",
    "ModelOutput",
    "MultiViewSegmenter",
    "MultiViewVideoSample",
    "PhantomConfig",
    "RunReport",
    "SegmentationOutput",
    "ShapeError",
    "TrainConfig",
    "TrainingDiverged",
    "ViewFeatureVolume",
    "ViewSpec",
    "ViewWiseAttention",
    "apply_local_fusion",
    "binarize",
    "center_target",
    "compute_feature_mask",
    "cycle_back_accuracy",
    "dense_cycle_loss",
    "dice_score",
    "evaluate_checkpoint",
    "evaluate_split",
    "generate_dataset",
    "load_checkpoint",
    "load_manifest",
    "load_phantom_config",
    "load_sample",
    "load_train_config",
    "model_predict_fn",
    "render_view",
    "run_ablation_suite",
    "sample_clip",
    "save_checkpoint",
    "save_manifest",
    "save_train_config",
    "seg_loss",
    "total_loss",
    "train",
    "view_wise_attention",
    "view_concat",
]
