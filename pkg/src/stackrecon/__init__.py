"""Single-view silhouette to voxel reconstruction with stacked encoder-decoders."""

from .evaluation import ExperimentReport, run_experiment, voxel_iou
from .network import NetworkSpec, StackedParams, init_params, replicate, stacked_forward
from .training import TrainConfig, fit, train

__version__ = "0.1.0"

__all__ = [
    "ExperimentReport",
    "NetworkSpec",
    "StackedParams",
    "TrainConfig",
    "fit",
    "init_params",
    "replicate",
    "run_experiment",
    "stacked_forward",
    "train",
    "voxel_iou",
]
