"""Dense full-resolution inference and the prior cascade.

The network maps an image to a coarse grid of class score vectors (one
per downsample-factor-d step of its receptive field).  dense_scores
recovers a score vector for every input pixel by reflect-padding the
image by the receptive-field radius and stitching together the outputs
of d*d shifted forward passes, which is exactly equivalent to sliding
the network over every padded window.

On top of the dense scores sit, in fixed order:
  base  per-pixel softmax posteriors, argmax labels;
  ILP   image-level prior (softmax of per-plane LSE scores) multiplied
        into the posteriors, unnormalized;
  SP    smoothing, either superpixel majority vote on the argmax mask
        or proposal-based thresholding of the weighted maps.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .aggregation import DEFAULT_LSE_R, lse
from .network import NetworkSpec, forward
from .proposals import ProposalSet, objectness_map
from .superpixels import SuperpixelPartition, felzenszwalb_segment
from .synthetic import normalize_image

PRIOR_MODES = ("none", "ilp", "ilp+sppxl", "ilp+bb", "ilp+seg")


@dataclass(frozen=True)
class ThresholdSet:
    """Per-class confidence floors delta_k for the foreground classes
    1..len(values), each in [0, 1)."""

    values: tuple[float, ...]

    def __post_init__(self):
        if len(self.values) == 0:
            raise ValueError("no foreground classes")
        for k, v in enumerate(self.values, start=1):
            if not 0.0 <= v < 1.0:
                raise ValueError(f"threshold for class {k} must lie in [0, 1), got {v}")

    @classmethod
    def zeros(cls, num_foreground: int) -> "ThresholdSet":
        return cls(values=(0.0,) * num_foreground)

    def as_array(self) -> np.ndarray:
        return np.array(self.values)


def pad_reflect(image: np.ndarray, receptive_field: int) -> np.ndarray:
    """Reflect-pad so every pixel owns a full receptive-field window centered
    on it (left pad (R-1)//2, right pad the remainder)."""
    lo = (receptive_field - 1) // 2
    hi = receptive_field - 1 - lo
    return np.pad(image, ((0, 0), (lo, hi), (lo, hi)), mode="reflect")


def dense_scores(
    image: np.ndarray,
    params,
    spec: NetworkSpec,
    upsample_fallback: bool = False,
) -> np.ndarray:
    """Full-resolution score planes, (num_classes, h, w).

    Exact by construction: output pixel (i, j) is the network's score for
    the padded window whose center sits at input pixel (i, j).  With
    upsample_fallback=True a single forward pass is nearest-neighbor
    upsampled instead (fast, approximate, off by default).
    """
    if image.ndim != 3:
        raise ValueError(f"expected (channels, h, w) image, got shape {image.shape}")
    _, h, w = image.shape
    if h < 1 or w < 1:
        raise ValueError("empty image")
    d = spec.downsample
    padded = pad_reflect(image, spec.receptive_field)
    if upsample_fallback:
        out = forward(padded, params, spec, mode="eval")
        return np.repeat(np.repeat(out, d, axis=1), d, axis=2)[:, :h, :w]
    dense = np.empty((spec.num_classes, h, w))
    for oy in range(min(d, h)):
        for ox in range(min(d, w)):
            out = forward(padded[:, oy:, ox:], params, spec, mode="eval")
            ch, cw = out.shape[1], out.shape[2]
            dense[:, oy : oy + d * ch : d, ox : ox + d * cw : d] = out
    return dense


def naive_dense_scores(image: np.ndarray, params, spec: NetworkSpec) -> np.ndarray:
    """Reference implementation: one forward pass per pixel over the same
    padded windows.  Slow; exists to cross-check dense_scores."""
    _, h, w = image.shape
    padded = pad_reflect(image, spec.receptive_field)
    r = spec.receptive_field
    dense = np.empty((spec.num_classes, h, w))
    for i in range(h):
        for j in range(w):
            window = padded[:, i : i + r, j : j + r]
            dense[:, i, j] = forward(window, params, spec, mode="eval")[:, 0, 0]
    return dense


def pixel_posteriors(maps: np.ndarray) -> np.ndarray:
    """Per-location softmax across the class axis."""
    if not np.all(np.isfinite(maps)):
        raise ValueError("non-finite scores")
    shifted = maps - maps.max(axis=0, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=0, keepdims=True)


def image_prior(maps: np.ndarray, r: float = DEFAULT_LSE_R) -> np.ndarray:
    """Softmax across classes of each plane's LSE score.  LSE is used here
    regardless of the training aggregator."""
    if not np.all(np.isfinite(maps)):
        raise ValueError("non-finite scores")
    scores = np.array([lse(plane, r) for plane in maps])
    e = np.exp(scores - scores.max())
    return e / e.sum()


def apply_ilp(probs: np.ndarray, prior: np.ndarray) -> np.ndarray:
    """Weight each class plane by its image-level prior mass.  The product is
    deliberately left unnormalized; downstream argmax and thresholding read
    it as-is."""
    if probs.shape[0] != prior.shape[0]:
        raise ValueError(f"{probs.shape[0]} planes but prior has {prior.shape[0]} entries")
    return probs * prior[:, None, None]


def argmax_labels(weighted: np.ndarray) -> np.ndarray:
    """Per-pixel argmax over all classes; ties go to the lower index."""
    return np.argmax(weighted, axis=0)


def smooth_sppxl(mask: np.ndarray, partition: SuperpixelPartition) -> np.ndarray:
    """Relabel every superpixel to its modal class (ties toward the lower
    class index).  Idempotent."""
    if mask.shape != partition.labels.shape:
        raise ValueError(f"mask shape {mask.shape} does not match partition {partition.labels.shape}")
    num_classes = int(mask.max()) + 1
    counts = np.zeros((partition.count, num_classes), dtype=np.int64)
    np.add.at(counts, (partition.labels.ravel(), mask.ravel()), 1)
    modal = np.argmax(counts, axis=1)
    return modal[partition.labels]


def smooth_proposals(weighted: np.ndarray, obj: np.ndarray, thresholds: ThresholdSet) -> np.ndarray:
    """Case rule over the weighted maps: each pixel takes its best foreground
    class k when weighted(k) * objectness clears delta_k, else background."""
    if weighted.shape[1:] != obj.shape:
        raise ValueError(f"maps {weighted.shape[1:]} vs objectness {obj.shape}")
    if weighted.shape[0] - 1 != len(thresholds.values):
        raise ValueError(f"{weighted.shape[0] - 1} foreground classes but {len(thresholds.values)} thresholds")
    fg = weighted[1:]
    khat = np.argmax(fg, axis=0)  # ties toward lower class
    conf = np.take_along_axis(fg, khat[None], axis=0)[0] * obj
    delta = thresholds.as_array()[khat]
    return np.where(conf > delta, khat + 1, 0)


@dataclass(frozen=True)
class PriorSettings:
    """Everything the cascade needs beyond the network itself."""

    mode: str = "ilp+sppxl"
    lse_r: float = DEFAULT_LSE_R
    felz_k: float = 0.5
    felz_min_size: int = 16
    thresholds: ThresholdSet | None = None
    proposals: ProposalSet | None = None

    def __post_init__(self):
        if self.mode not in PRIOR_MODES:
            raise ValueError(f"unknown prior mode {self.mode!r}; choose from {PRIOR_MODES}")
        if self.mode in ("ilp+bb", "ilp+seg") and self.proposals is None:
            raise ValueError(f"prior mode {self.mode!r} needs a proposal set")


@dataclass(frozen=True)
class PipelineResult:
    mask: np.ndarray  # (h, w) class indices after the selected prior stages
    probs: np.ndarray  # (num_classes, h, w) per-pixel posteriors, base stage
    prior: np.ndarray | None = None  # image-level prior when ILP ran
    weighted: np.ndarray | None = None  # post-ILP maps when ILP ran


def run_pipeline(
    image: np.ndarray,
    params,
    spec: NetworkSpec,
    settings: PriorSettings,
    upsample_fallback: bool = False,
) -> PipelineResult:
    """Raw [0, 1] image through the full cascade, stages in fixed order.
    The network sees the normalized tensor; superpixel smoothing segments
    the raw RGB values."""
    maps = dense_scores(normalize_image(image), params, spec, upsample_fallback=upsample_fallback)
    probs = pixel_posteriors(maps)
    if settings.mode == "none":
        return PipelineResult(mask=argmax_labels(probs), probs=probs)
    prior = image_prior(maps, settings.lse_r)
    weighted = apply_ilp(probs, prior)
    if settings.mode == "ilp":
        mask = argmax_labels(weighted)
    elif settings.mode == "ilp+sppxl":
        partition = felzenszwalb_segment(image, settings.felz_k, settings.felz_min_size)
        mask = smooth_sppxl(argmax_labels(weighted), partition)
    else:
        thresholds = settings.thresholds
        if thresholds is None:
            thresholds = ThresholdSet.zeros(spec.num_classes - 1)
        obj = objectness_map(settings.proposals, image.shape[1], image.shape[2])
        mask = smooth_proposals(weighted, obj, thresholds)
    return PipelineResult(mask=mask, probs=probs, prior=prior, weighted=weighted)
