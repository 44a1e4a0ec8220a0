"""scikit-learn compatible wrappers around the training, calibration and resize steps.

These let the pipeline pieces sit inside ``sklearn.pipeline.Pipeline``,
``clone`` and grid searches. ``X`` is always an N x H x W x 3 image batch
and ``Y`` an N x L binary label matrix.
"""

from __future__ import annotations

import tempfile
from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from landcover._validation import check_image_batch, check_label_matrix, check_pair, check_probabilities
from landcover.dataset import AugmentationConfig, LabeledImage, resize_image, split_corpus
from landcover.evaluation import (
    DEFAULT_GRID,
    PredictionSet,
    binarize,
    compute_metrics,
    micro_f1,
    sweep_thresholds,
)
from landcover.models import build_model, load_checkpoint, predict_probabilities
from landcover.training import TrainingConfig, train


class ImageResizer(BaseEstimator, TransformerMixin):
    """Stateless bilinear resize of every image in a batch to ``size`` x ``size``."""

    def __init__(self, size=256):
        self.size = size

    def fit(self, X, y=None):
        check_image_batch(X)
        return self

    def transform(self, X):
        X = check_image_batch(X)
        return np.stack([resize_image(x, self.size) for x in X])


class MultiLabelImageClassifier(ClassifierMixin, BaseEstimator):
    """Fine-tunes one backbone profile with a sigmoid multi-label head.

    ``fit`` holds out ``val_fraction`` of the images for validation-loss
    monitoring; the weights with the lowest validation loss are kept.
    """

    def __init__(self, profile="tiny_cnn", epochs=10, batch_size=32, learning_rate=None,
                 seed=0, input_size=None, pretrained=False, freeze_backbone=False,
                 val_fraction=0.2, augment=True, threshold=0.5, checkpoint_dir=None):
        self.profile = profile
        self.epochs = epochs
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.seed = seed
        self.input_size = input_size
        self.pretrained = pretrained
        self.freeze_backbone = freeze_backbone
        self.val_fraction = val_fraction
        self.augment = augment
        self.threshold = threshold
        self.checkpoint_dir = checkpoint_dir

    def fit(self, X, Y, class_names=None):
        X = check_image_batch(X)
        Y = check_label_matrix(Y, name="Y")
        if len(X) != len(Y):
            raise ValueError(f"X has {len(X)} images but Y has {len(Y)} rows")
        images = [LabeledImage(f"img{i:06d}", x, y) for i, (x, y) in enumerate(zip(X, Y))]
        split = split_corpus(images, self.val_fraction, self.seed)

        handle = build_model(self.profile, Y.shape[1], pretrained=self.pretrained, seed=self.seed,
                             class_names=class_names)
        aug = AugmentationConfig() if self.augment else AugmentationConfig.disabled()
        with tempfile.TemporaryDirectory(prefix="landcover-") as tmp:
            config = TrainingConfig(epochs=self.epochs, batch_size=self.batch_size,
                                    learning_rate=self.learning_rate, seed=self.seed,
                                    input_size=self.input_size, freeze_backbone=self.freeze_backbone,
                                    checkpoint_dir=Path(self.checkpoint_dir or tmp))
            self.history_ = train(handle, split, config, aug)
            # restore the best-validation weights
            self.model_, _ = load_checkpoint(self.history_.checkpoint_path)
        if self.checkpoint_dir is None:
            self.history_.checkpoint_path = None
        self.n_labels_ = Y.shape[1]
        self.classes_ = np.arange(self.n_labels_)
        self.input_size_ = handle.input_size
        return self

    def predict_proba(self, X):
        check_is_fitted(self, "model_")
        X = check_image_batch(X)
        if X.shape[1] != self.input_size_ or X.shape[2] != self.input_size_:
            X = np.stack([resize_image(x, self.input_size_) for x in X])
        return predict_probabilities(self.model_, X)

    def predict(self, X):
        return binarize(self.predict_proba(X), self.threshold)

    def score(self, X, Y, sample_weight=None):
        """Micro-F1 (fraction) at the configured threshold."""
        return micro_f1(self.predict_proba(X), Y, self.threshold)


class ThresholdCalibrator(BaseEstimator, TransformerMixin):
    """Pick the global probability cut-off that maximises micro-F1.

    ``fit`` takes an N x L probability matrix and the matching truth;
    ``transform`` binarises probabilities at ``best_threshold_``.
    """

    def __init__(self, grid=DEFAULT_GRID):
        self.grid = grid

    def fit(self, P, Y):
        P, Y = check_pair(P, Y)
        self.sweep_ = sweep_thresholds(PredictionSet(P, Y), self.grid)
        self.best_threshold_ = self.sweep_.best_threshold
        return self

    def transform(self, P):
        check_is_fitted(self, "best_threshold_")
        return binarize(check_probabilities(P), self.best_threshold_)

    def report(self, P, Y, model_name="model"):
        check_is_fitted(self, "best_threshold_")
        return compute_metrics(PredictionSet(P, Y), self.best_threshold_, model_name=model_name)
