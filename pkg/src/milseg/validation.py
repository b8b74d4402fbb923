"""Input validation for the estimator surface.

Images are channel-first RGB float arrays scaled to [0, 1]; labels are
integer class indices with 0 reserved for background.  Helpers return
clean float64/int copies or raise ValueError with the offending detail.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np


def check_image(x, name: str = "image") -> np.ndarray:
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim != 3 or arr.shape[0] != 3:
        raise ValueError(f"{name}: expected shape (3, h, w), got {arr.shape}")
    if arr.shape[1] < 1 or arr.shape[2] < 1:
        raise ValueError(f"{name}: empty spatial dimensions {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name}: non-finite values")
    if arr.min() < -1e-9 or arr.max() > 1.0 + 1e-9:
        raise ValueError(
            f"{name}: values outside [0, 1] (range [{arr.min():.4g}, {arr.max():.4g}]); "
            "pass raw intensities, normalization happens internally"
        )
    return arr


def check_image_batch(X) -> list[np.ndarray]:
    """Accepts an (n, 3, h, w) array or a sequence of (3, h, w) arrays;
    images may differ in spatial size."""
    if isinstance(X, np.ndarray):
        if X.ndim != 4:
            raise ValueError(f"expected a 4-d array (n, 3, h, w), got {X.ndim}-d")
        items: Sequence = list(X)
    elif isinstance(X, (list, tuple)):
        items = X
    else:
        raise ValueError(f"expected an array or a sequence of images, got {type(X).__name__}")
    if len(items) == 0:
        raise ValueError("empty image batch")
    return [check_image(img, name=f"image {i}") for i, img in enumerate(items)]


def check_labels(y, n: int, num_classes: int) -> np.ndarray:
    arr = np.asarray(y)
    if arr.shape != (n,):
        raise ValueError(f"labels: expected shape ({n},), got {arr.shape}")
    if not np.issubdtype(arr.dtype, np.integer):
        if not np.all(arr == np.floor(arr)):
            raise ValueError("labels: expected integer class indices")
        arr = arr.astype(np.int64)
    arr = arr.astype(np.int64)
    if arr.min() < 0 or arr.max() >= num_classes:
        raise ValueError(f"labels: values outside [0, {num_classes})")
    return arr


def check_mask(mask, shape: tuple[int, int], num_classes: int, name: str = "mask") -> np.ndarray:
    arr = np.asarray(mask)
    if arr.shape != shape:
        raise ValueError(f"{name}: expected shape {shape}, got {arr.shape}")
    if not np.issubdtype(arr.dtype, np.integer):
        raise ValueError(f"{name}: expected integer class indices, got dtype {arr.dtype}")
    if arr.min() < 0 or arr.max() >= num_classes:
        raise ValueError(f"{name}: class indices outside [0, {num_classes})")
    return arr.astype(np.int64)
