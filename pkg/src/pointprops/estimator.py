"""Estimator-style wrapper so the trainer composes with pipeline tooling.

``PointPropsDetector`` follows the fit/predict convention: hyperparameters
are constructor arguments mirrored by get_params/set_params, learned state
lands in trailing-underscore attributes, and inputs are validated up front.
"""

from __future__ import annotations

import numpy as np

from . import em, evaluate, model
from .config import PropertyConfig, TrainConfig


class NotFittedError(RuntimeError):
    pass


def as_float_image(image, name: str = "image") -> np.ndarray:
    """Validate one image: 2-D or 3-D float array with values in [0, 1]."""
    arr = np.asarray(image, dtype=float)
    if arr.ndim not in (2, 3):
        raise ValueError(f"{name} must be 2-D or 3-D, got shape {arr.shape}")
    if arr.size == 0:
        raise ValueError(f"{name} is empty")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite values")
    if arr.min() < 0.0 or arr.max() > 1.0:
        raise ValueError(f"{name} values must lie in [0, 1]")
    return arr


def pad_to_multiple_of_4(image: np.ndarray):
    """Edge-pad bottom/right so both dimensions divide by 4.

    Returns (padded, original_shape) so callers can crop outputs back.
    """
    height, width = image.shape[:2]
    pad_h = (-height) % 4
    pad_w = (-width) % 4
    if pad_h == 0 and pad_w == 0:
        return image, (height, width)
    pad = ((0, pad_h), (0, pad_w)) + ((0, 0),) * (image.ndim - 2)
    return np.pad(image, pad, mode="edge"), (height, width)


class PointPropsDetector:
    """Joint interest-point detector/descriptor trained by property EM.

    ``fit`` trains on a list of scene images; ``detect``/``predict`` extract
    sparse points with unit descriptors from new images.
    """

    _PARAM_NAMES = (
        "descriptor_dim", "rad", "n_min", "n_max", "m_p", "m_n", "neg_weight",
        "alpha", "batch_scenes", "transforms_per_scene", "iterations",
        "learning_rate", "illumination", "viewpoint", "prob_threshold",
        "max_points", "seed",
    )

    def __init__(
        self,
        descriptor_dim: int = 16,
        rad: int = 4,
        n_min: int = 5,
        n_max: int = 30,
        m_p: float = 1.0,
        m_n: float = 0.2,
        neg_weight: float | None = None,
        alpha: float = 1.0,
        batch_scenes: int = 2,
        transforms_per_scene: int = 10,
        iterations: int = 200,
        learning_rate: float = 1e-3,
        illumination: str = "illum_mild",
        viewpoint: str = "viewpoint_medium",
        prob_threshold: float = 0.5,
        max_points: int = 1000,
        seed: int = 0,
    ):
        self.descriptor_dim = descriptor_dim
        self.rad = rad
        self.n_min = n_min
        self.n_max = n_max
        self.m_p = m_p
        self.m_n = m_n
        self.neg_weight = neg_weight
        self.alpha = alpha
        self.batch_scenes = batch_scenes
        self.transforms_per_scene = transforms_per_scene
        self.iterations = iterations
        self.learning_rate = learning_rate
        self.illumination = illumination
        self.viewpoint = viewpoint
        self.prob_threshold = prob_threshold
        self.max_points = max_points
        self.seed = seed

    # -- sklearn-style parameter plumbing ---------------------------------
    def get_params(self, deep: bool = True) -> dict:
        return {name: getattr(self, name) for name in self._PARAM_NAMES}

    def set_params(self, **params) -> "PointPropsDetector":
        for key, value in params.items():
            if key not in self._PARAM_NAMES:
                raise ValueError(f"unknown parameter {key!r}")
            setattr(self, key, value)
        return self

    def _property_config(self) -> PropertyConfig:
        return PropertyConfig(
            rad=self.rad, n_min=self.n_min, n_max=self.n_max, m_p=self.m_p,
            m_n=self.m_n, neg_weight=self.neg_weight, alpha=self.alpha,
        )

    def _train_config(self, image_size) -> TrainConfig:
        return TrainConfig(
            batch_scenes=self.batch_scenes,
            transforms_per_scene=self.transforms_per_scene,
            iterations=self.iterations,
            properties=self._property_config(),
            descriptor_dim=self.descriptor_dim,
            image_size=image_size,
            illumination=self.illumination,
            viewpoint=self.viewpoint,
            learning_rate=self.learning_rate,
            seed=self.seed,
        )

    # -- fitting and inference --------------------------------------------
    def fit(self, X, y=None) -> "PointPropsDetector":
        """Train on a list of grayscale scene images of one common size."""
        images = [as_float_image(img, f"X[{i}]") for i, img in enumerate(X)]
        if not images:
            raise ValueError("need at least one training image")
        shapes = {img.shape for img in images}
        if len(shapes) != 1:
            raise ValueError(f"training images must share one shape, got {shapes}")
        first = images[0]
        if first.ndim != 2:
            raise ValueError("training images must be grayscale (2-D)")
        if first.shape[0] % 4 or first.shape[1] % 4:
            raise ValueError("training image dimensions must be multiples of 4")
        result = em.train(images, self._train_config(first.shape))
        self.params_ = result.params
        self.train_log_ = result.log_rows
        return self

    def _check_fitted(self):
        if not hasattr(self, "params_"):
            raise NotFittedError("call fit or load_checkpoint before detecting")

    def detect(self, image) -> evaluate.PointSet:
        """Extract interest points with descriptors from one image."""
        self._check_fitted()
        img = as_float_image(image)
        padded, (height, width) = pad_to_multiple_of_4(img)
        out = model.forward(self.params_, padded)
        points = evaluate.extract_points(out, self.prob_threshold, self.rad, self.max_points)
        inside = (points.xy[:, 0] <= width - 1) & (points.xy[:, 1] <= height - 1)
        return evaluate.PointSet(
            points.xy[inside], points.scores[inside], points.descriptors[inside]
        )

    def predict(self, X) -> list:
        """Detect on a list of images; returns one PointSet per image."""
        return [self.detect(img) for img in X]

    def transform(self, X) -> list:
        return self.predict(X)

    # -- persistence -------------------------------------------------------
    def save_checkpoint(self, path) -> None:
        self._check_fitted()
        model.save_checkpoint(path, self.params_)

    def load_checkpoint(self, path) -> "PointPropsDetector":
        self.params_ = model.load_checkpoint(path)
        self.descriptor_dim = self.params_.descriptor_dim
        return self
