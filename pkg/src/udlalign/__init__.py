"""Unsupervised difference learning for noisy rigid image alignment.

A rotation-regression network is trained without ground truth by matching
the difference of its outputs on original and artificially disturbed
image pairs against the known disturbance difference; the residual
constant bias is removed with a single labeled pair, and translations are
recovered by phase correlation on the re-rotated images.
"""

from .geometry import RigidTransform, compose, invert, to_matrix, warp
from .imaging import NoiseSpec
from .udl import (
    BiasCalibration,
    TrainConfig,
    calibrate_bias,
    periodic_loss,
    predict_rotation,
    range_penalty,
    supervised_loss,
    train,
    udl_loss,
)

__version__ = "0.1.0"

__all__ = [
    "RigidTransform",
    "NoiseSpec",
    "BiasCalibration",
    "TrainConfig",
    "compose",
    "invert",
    "to_matrix",
    "warp",
    "periodic_loss",
    "range_penalty",
    "udl_loss",
    "supervised_loss",
    "train",
    "calibrate_bias",
    "predict_rotation",
    "__version__",
]
