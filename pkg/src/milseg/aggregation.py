"""Aggregation of per-location class scores into one image-level score.

Three variants collapse an h x w score plane to a scalar per class:

  sum   s = sum_ij s_ij
  max   s = max_ij s_ij
  lse   s = (1/r) * log( (1/(h*w)) * sum_ij exp(r * s_ij) )

lse is a smooth convex surrogate for the max: large r approaches the max,
small r approaches the plane mean.  Its value always lies between the two.
Gradients are exact; the lse forward/backward use max-shift stabilization,
which is mathematically exact in reals and overflow-free for any r.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

KINDS = ("sum", "max", "lse")

DEFAULT_LSE_R = 5.0


@dataclass(frozen=True)
class Aggregator:
    """Aggregation choice; r is the lse sharpness and is ignored otherwise."""

    kind: str = "lse"
    r: float = DEFAULT_LSE_R

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"aggregation must be one of {KINDS}, got {self.kind!r}")
        if self.kind == "lse" and not self.r > 0:
            raise ValueError(f"lse sharpness r must be positive, got {self.r}")


def _check_planes(planes: np.ndarray) -> np.ndarray:
    planes = np.asarray(planes, dtype=np.float64)
    if planes.ndim == 2:
        planes = planes[None]
    if planes.ndim != 3 or planes.size == 0:
        raise ValueError(f"expected nonempty (classes, h, w) score planes, got shape {planes.shape}")
    return planes


def lse(plane: np.ndarray, r: float) -> float:
    """Log-sum-exp pooling of a single plane, stabilized by the plane max."""
    plane = np.asarray(plane, dtype=np.float64)
    m = plane.max()
    return float(m + np.log(np.mean(np.exp(r * (plane - m)))) / r)


def aggregate_forward(planes: np.ndarray, agg: Aggregator) -> np.ndarray:
    """Collapse (classes, h, w) score planes to one scalar per class.

    A single (h, w) plane is accepted and yields a length-1 result.
    """
    planes = _check_planes(planes)
    if agg.kind == "sum":
        return planes.sum(axis=(1, 2))
    if agg.kind == "max":
        return planes.max(axis=(1, 2))
    m = planes.max(axis=(1, 2), keepdims=True)
    shifted = np.exp(agg.r * (planes - m))
    return m[:, 0, 0] + np.log(shifted.mean(axis=(1, 2))) / agg.r


def aggregate_backward(planes: np.ndarray, agg: Aggregator, grad_out: np.ndarray) -> np.ndarray:
    """Gradient planes for aggregate_forward.

    sum spreads grad_out to every cell; max routes it to the first
    row-major argmax; lse weights cells by softmax(r * s) within the
    plane, so the weights are nonnegative and sum to grad_out exactly.
    """
    planes = _check_planes(planes)
    grad_out = np.asarray(grad_out, dtype=np.float64).reshape(planes.shape[0])
    g = grad_out[:, None, None]
    if agg.kind == "sum":
        return np.broadcast_to(g, planes.shape).copy()
    if agg.kind == "max":
        grad = np.zeros_like(planes)
        flat = planes.reshape(planes.shape[0], -1)
        winners = np.argmax(flat, axis=1)
        grad.reshape(planes.shape[0], -1)[np.arange(planes.shape[0]), winners] = grad_out
        return grad
    m = planes.max(axis=(1, 2), keepdims=True)
    e = np.exp(agg.r * (planes - m))
    return g * e / e.sum(axis=(1, 2), keepdims=True)
