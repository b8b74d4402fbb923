"""Weakly supervised segmentation from image-level labels.

A self-contained float64 implementation: a small convolutional network
trained under multiple-instance learning (per-class score planes reduced
by sum, max, or log-sum-exp aggregation into an image-level softmax),
dense full-resolution inference by shift-and-stitch, and a cascade of
label priors (image-level reweighting, superpixel or proposal-based
smoothing) that turns weak image tags into per-pixel masks.
"""

from .aggregation import Aggregator, aggregate_backward, aggregate_forward, lse
from .config import RunConfig, parse_config, parse_config_file, serialize_config
from .estimator import MILSegmenter
from .inference import (
    PipelineResult,
    PriorSettings,
    ThresholdSet,
    apply_ilp,
    argmax_labels,
    dense_scores,
    image_prior,
    pixel_posteriors,
    run_pipeline,
    smooth_proposals,
    smooth_sppxl,
)
from .metrics import (
    grid_search_thresholds,
    mean_ap,
    metrics_report,
    per_class_accuracy,
    voc_ap,
)
from .network import (
    ConvLayer,
    NetworkSpec,
    PoolLayer,
    build_network,
    classify,
    default_spec,
    forward,
    image_scores,
    load_checkpoint,
    save_checkpoint,
    train_step,
)
from .proposals import ProposalSet, load_proposals, naive_proposals, objectness_map
from .rng import stream
from .superpixels import SuperpixelPartition, felzenszwalb_segment
from .synthetic import (
    JitterSpec,
    Sample,
    apply_jitter,
    generate_dataset,
    normalize_image,
    read_dataset,
    transform_sample,
    write_dataset,
)
from .tensor_ops import LayerParams, OptimizerConfig, finite_diff_check
from .training import TrainResult, train_model

__version__ = "0.1.0"

__all__ = [
    "Aggregator",
    "ConvLayer",
    "JitterSpec",
    "LayerParams",
    "MILSegmenter",
    "NetworkSpec",
    "OptimizerConfig",
    "PipelineResult",
    "PoolLayer",
    "PriorSettings",
    "ProposalSet",
    "RunConfig",
    "Sample",
    "SuperpixelPartition",
    "ThresholdSet",
    "TrainResult",
    "aggregate_backward",
    "aggregate_forward",
    "apply_ilp",
    "apply_jitter",
    "argmax_labels",
    "build_network",
    "classify",
    "default_spec",
    "dense_scores",
    "felzenszwalb_segment",
    "finite_diff_check",
    "forward",
    "generate_dataset",
    "grid_search_thresholds",
    "image_prior",
    "image_scores",
    "load_checkpoint",
    "load_proposals",
    "lse",
    "mean_ap",
    "metrics_report",
    "naive_proposals",
    "normalize_image",
    "objectness_map",
    "parse_config",
    "parse_config_file",
    "per_class_accuracy",
    "pixel_posteriors",
    "read_dataset",
    "run_pipeline",
    "save_checkpoint",
    "serialize_config",
    "smooth_proposals",
    "smooth_sppxl",
    "stream",
    "train_model",
    "train_step",
    "transform_sample",
    "voc_ap",
    "write_dataset",
]
