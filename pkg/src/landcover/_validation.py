"""Input checks shared by the metric, model and estimator code."""

from __future__ import annotations

import numpy as np
from sklearn.utils import check_array


def check_probabilities(probabilities, name="probabilities"):
    """Return a 2-D float64 array with every entry in [0, 1]."""
    arr = check_array(probabilities, dtype=np.float64, ensure_2d=True,
                      ensure_all_finite=True, input_name=name)
    if arr.size and (arr.min() < 0.0 or arr.max() > 1.0):
        raise ValueError(f"{name} must lie in [0, 1]")
    return arr


def check_label_matrix(labels, name="labels"):
    """Return a 2-D int64 array whose entries are all 0 or 1."""
    arr = check_array(labels, dtype=None, ensure_2d=True, input_name=name)
    if not np.isin(arr, (0, 1)).all():
        raise ValueError(f"{name} must be binary (0/1)")
    return arr.astype(np.int64)


def check_pair(probabilities, labels):
    p = check_probabilities(probabilities)
    y = check_label_matrix(labels, name="truth")
    if p.shape != y.shape:
        raise ValueError(f"shape mismatch: probabilities {p.shape} vs truth {y.shape}")
    return p, y


def check_threshold(threshold):
    t = float(threshold)
    if not 0.0 <= t <= 1.0:
        raise ValueError(f"threshold must be in [0, 1], got {threshold!r}")
    return t


def check_image_batch(batch):
    """Validate a B x H x W x 3 image batch (uint8 or float in [0, 255])."""
    arr = np.asarray(batch)
    if arr.ndim == 3:
        arr = arr[None]
    if arr.ndim != 4 or arr.shape[-1] != 3:
        raise ValueError(f"expected a B x H x W x 3 batch, got shape {arr.shape}")
    if arr.shape[0] == 0:
        raise ValueError("image batch is empty")
    return arr
