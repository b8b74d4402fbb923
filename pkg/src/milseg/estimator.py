"""scikit-learn style wrapper around the training loop and prior cascade.

MILSegmenter learns dense segmentation from image-level labels alone:
fit consumes (images, labels), predict emits a full-resolution class
mask per image, and transform exposes the per-pixel posterior maps.
Raw RGB tensors in [0, 1] go in; normalization, augmentation, cropping,
and the prior cascade are internal.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator

from .aggregation import Aggregator
from .inference import PriorSettings, ThresholdSet, run_pipeline
from .network import classify, default_spec, image_scores, save_checkpoint
from .synthetic import JitterSpec, Sample, normalize_image
from .tensor_ops import OptimizerConfig
from .training import train_model
from .validation import check_image_batch, check_labels


class MILSegmenter(BaseEstimator):
    """Weakly supervised segmenter: multiple-instance training on image
    labels, dense per-pixel prediction with image-level and smoothing priors.

    Parameters mirror the run-config surface; `seed` pins every random
    choice, so fit is bit-reproducible.  `num_classes` counts background,
    so 4 means three shape classes plus background.
    """

    def __init__(
        self,
        num_classes: int = 4,
        stem_channels: tuple[int, ...] = (32, 64, 64),
        head_channels: tuple[int, ...] = (64, 64, 32),
        dropout_rate: float = 0.5,
        aggregator: str = "lse",
        lse_r: float = 5.0,
        learning_rate: float = 0.001,
        momentum: float = 0.9,
        weight_decay: float = 0.00005,
        decay_factor: float = 0.8,
        decay_interval: int = 50000,
        batch_size: int = 16,
        train_steps: int = 500,
        crop_size: int = 48,
        jitter: JitterSpec | None = None,
        prior: str = "ilp+sppxl",
        felz_k: float = 0.5,
        felz_min_size: int = 16,
        thresholds: ThresholdSet | None = None,
        seed: int = 0,
        upsample_fallback: bool = False,
    ):
        self.num_classes = num_classes
        self.stem_channels = stem_channels
        self.head_channels = head_channels
        self.dropout_rate = dropout_rate
        self.aggregator = aggregator
        self.lse_r = lse_r
        self.learning_rate = learning_rate
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.decay_factor = decay_factor
        self.decay_interval = decay_interval
        self.batch_size = batch_size
        self.train_steps = train_steps
        self.crop_size = crop_size
        self.jitter = jitter
        self.prior = prior
        self.felz_k = felz_k
        self.felz_min_size = felz_min_size
        self.thresholds = thresholds
        self.seed = seed
        self.upsample_fallback = upsample_fallback

    # -- fitting -----------------------------------------------------------

    def fit(self, X, y):
        """X: (n, 3, h, w) array or list of (3, h, w) images in [0, 1];
        y: (n,) integer image-level labels (0 = pure background image)."""
        images = check_image_batch(X)
        labels = check_labels(y, len(images), self.num_classes)
        samples = [Sample(image=img, label=int(lab)) for img, lab in zip(images, labels)]
        spec = default_spec(
            num_classes=self.num_classes,
            stem_channels=tuple(self.stem_channels),
            head_channels=tuple(self.head_channels),
            dropout_rate=self.dropout_rate,
            seed=self.seed,
        )
        result = train_model(
            samples,
            spec,
            self._aggregator(),
            OptimizerConfig(
                learning_rate=self.learning_rate,
                momentum=self.momentum,
                weight_decay=self.weight_decay,
                decay_factor=self.decay_factor,
                decay_interval=self.decay_interval,
            ),
            self.jitter if self.jitter is not None else JitterSpec(),
            batch_size=self.batch_size,
            train_steps=self.train_steps,
            seed=self.seed,
            crop_size=self.crop_size,
        )
        if not result.ok:
            raise RuntimeError(f"training loss went non-finite at step {result.diverged_at}")
        self.spec_ = result.spec
        self.params_ = result.params
        self.loss_log_ = result.loss_log
        self.classes_ = np.arange(self.num_classes)
        return self

    def _aggregator(self) -> Aggregator:
        return Aggregator(kind=self.aggregator, r=self.lse_r)

    def _settings(self) -> PriorSettings:
        return PriorSettings(
            mode=self.prior,
            lse_r=self.lse_r,
            felz_k=self.felz_k,
            felz_min_size=self.felz_min_size,
            thresholds=self.thresholds,
        )

    def _check_fitted(self):
        if not hasattr(self, "params_"):
            raise RuntimeError("estimator is not fitted; call fit first")

    # -- prediction --------------------------------------------------------

    def predict(self, X) -> list[np.ndarray]:
        """Dense label mask per image, full input resolution, after the
        configured prior stages."""
        self._check_fitted()
        settings = self._settings()
        return [
            run_pipeline(img, self.params_, self.spec_, settings,
                         upsample_fallback=self.upsample_fallback).mask
            for img in check_image_batch(X)
        ]

    def transform(self, X) -> list[np.ndarray]:
        """Per-pixel posterior maps (num_classes, h, w) per image, before
        any prior stage."""
        self._check_fitted()
        settings = PriorSettings(mode="none", lse_r=self.lse_r)
        return [
            run_pipeline(img, self.params_, self.spec_, settings,
                         upsample_fallback=self.upsample_fallback).probs
            for img in check_image_batch(X)
        ]

    def predict_image_labels(self, X) -> np.ndarray:
        """Image-level class decisions from the training-time aggregator."""
        self._check_fitted()
        agg = self._aggregator()
        return np.array([
            classify(normalize_image(img), self.params_, self.spec_, agg)
            for img in check_image_batch(X)
        ])

    def predict_proba(self, X) -> np.ndarray:
        """Image-level class probabilities (n, num_classes): softmax over the
        aggregated plane scores."""
        self._check_fitted()
        agg = self._aggregator()
        out = []
        for img in check_image_batch(X):
            scores = image_scores(normalize_image(img), self.params_, self.spec_, agg)
            e = np.exp(scores - scores.max())
            out.append(e / e.sum())
        return np.array(out)

    def score(self, X, y) -> float:
        """Image-level classification accuracy (the weak-label quantity the
        model is actually trained on)."""
        labels = check_labels(y, len(check_image_batch(X)), self.num_classes)
        return float(np.mean(self.predict_image_labels(X) == labels))

    def save(self, path) -> None:
        """Write the fitted network in the binary checkpoint format."""
        self._check_fitted()
        save_checkpoint(path, self.spec_, self.params_)
