"""Unsupervised interest-point detector/descriptor learning.

The package trains a small fully convolutional detector/descriptor by
maximizing the probability that extracted points are sparse, repeatable and
discriminative, using a latent-variable EM scheme with a combinatorial
closed-form posterior. It ships the training loop, brute-force validation
oracles, scene simulation, and matching/homography evaluation.
"""

from .config import PropertyConfig, TrainConfig
from .estimator import PointPropsDetector
from .model import ModelOutput, ModelParams, forward, init_params

__all__ = [
    "ModelOutput",
    "ModelParams",
    "PointPropsDetector",
    "PropertyConfig",
    "TrainConfig",
    "forward",
    "init_params",
]
