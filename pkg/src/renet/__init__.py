"""renet: region-ensemble convolutional regression for 3-D hand pose from
depth patches, with a self-contained numpy autodiff engine, preprocessing,
training/evaluation tooling, a synthetic depth-hand generator and a CLI.
"""

from .autodiff import Graph, GraphError, NumericsError, ShapeError, Tensor
from .camera import CameraIntrinsics, ICVL_INTRINSICS, image_to_world, world_to_image
from .checkpoint import CheckpointError, load_tensors, save_tensors
from .estimator import DepthPatchExtractor, PoseRegressor
from .evaluate import (
    EvalReport,
    benchmark_forward,
    compare_report,
    evaluate,
    mean_joint_error,
    success_curve,
    success_rate,
)
from .gradcheck import GradCheckReport, grad_check
from .model import Model, ModelSpec, param_count, partition_regions, receptive_field
from .preprocess import (
    AugmentRanges,
    AugmentTransform,
    CropResult,
    DepthFrame,
    HandAnnotation,
    PreprocessConfig,
    augment,
    compute_centroid,
    crop_cube,
    denormalize_joints,
    normalize_joints,
    preprocess_frame,
    segment_foreground,
)
from .synth import SynthConfig, synth_generate
from .train import (
    BaggingEnsemble,
    TrainConfig,
    TrainDivergence,
    lr_schedule,
    sgd_step,
    train,
    train_bagging,
)

__version__ = "0.1.0"

__all__ = [
    "Tensor",
    "Graph",
    "NumericsError",
    "GraphError",
    "ShapeError",
    "CameraIntrinsics",
    "ICVL_INTRINSICS",
    "world_to_image",
    "image_to_world",
    "CheckpointError",
    "save_tensors",
    "load_tensors",
    "PoseRegressor",
    "DepthPatchExtractor",
    "EvalReport",
    "evaluate",
    "mean_joint_error",
    "success_rate",
    "success_curve",
    "benchmark_forward",
    "compare_report",
    "GradCheckReport",
    "grad_check",
    "Model",
    "ModelSpec",
    "param_count",
    "partition_regions",
    "receptive_field",
    "DepthFrame",
    "HandAnnotation",
    "CropResult",
    "AugmentRanges",
    "AugmentTransform",
    "PreprocessConfig",
    "segment_foreground",
    "compute_centroid",
    "crop_cube",
    "normalize_joints",
    "denormalize_joints",
    "augment",
    "preprocess_frame",
    "SynthConfig",
    "synth_generate",
    "TrainConfig",
    "TrainDivergence",
    "lr_schedule",
    "sgd_step",
    "train",
    "train_bagging",
    "BaggingEnsemble",
    "__version__",
]
