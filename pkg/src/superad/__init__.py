"""Self-supervised hyperspectral anomaly detection toolkit.

Reconstruction-based detection that resists the identity mapping problem
through three mechanisms: superpixel pooling/uppooling (anomalies are
averaged into background-dominated blocks), error-adaptive convolution
(only the least anomalous window positions are used to rebuild a pixel),
and online background pixel mining (exponentially scaled background
gradients with a per-superpixel cutoff that silences suspected anomalies).
"""

__version__ = "0.1.0"

from .io import (
    AnomalyMap,
    GroundTruth,
    HsiCube,
    SceneSpec,
    load_cube,
    load_map_csv,
    load_mask,
    normalize_bands,
    save_cube,
    save_map_csv,
    save_map_pgm,
    save_mask,
    synth_scene,
)
from .metrics import MetricsReport, RocCurve, auc, evaluate, roc_curve, separability, snpr, threshold_areas
from .model import (
    AdaConvConfig,
    ModelParams,
    adaconv_apply,
    adaconv_select,
    anomaly_score,
    attention_stack,
    init_params,
    model_forward,
    window_indices,
)
from .obpm import CutoffReport, ObpmConfig, l1_loss, l2_loss, obpm_loss, obpm_pointwise, pixel_errors, segment_cutoff
from .rxd import BackgroundStats, fit_stats, rxd_detect
from .superpixel import SegmentFeatures, SegmentLabels, pool, slic_segment, uppool
from .trainer import EpochLog, TrainConfig, TrainResult, TrainedModel, adam_step, detect, load_model, save_model, train

__all__ = [
    "__version__",
    "AnomalyMap",
    "GroundTruth",
    "HsiCube",
    "SceneSpec",
    "load_cube",
    "load_map_csv",
    "load_mask",
    "normalize_bands",
    "save_cube",
    "save_map_csv",
    "save_map_pgm",
    "save_mask",
    "synth_scene",
    "MetricsReport",
    "RocCurve",
    "auc",
    "evaluate",
    "roc_curve",
    "separability",
    "snpr",
    "threshold_areas",
    "AdaConvConfig",
    "ModelParams",
    "adaconv_apply",
    "adaconv_select",
    "anomaly_score",
    "attention_stack",
    "init_params",
    "model_forward",
    "window_indices",
    "CutoffReport",
    "ObpmConfig",
    "l1_loss",
    "l2_loss",
    "obpm_loss",
    "obpm_pointwise",
    "pixel_errors",
    "segment_cutoff",
    "BackgroundStats",
    "fit_stats",
    "rxd_detect",
    "SegmentFeatures",
    "SegmentLabels",
    "pool",
    "slic_segment",
    "uppool",
    "EpochLog",
    "TrainConfig",
    "TrainResult",
    "TrainedModel",
    "adam_step",
    "detect",
    "load_model",
    "save_model",
    "train",
]
