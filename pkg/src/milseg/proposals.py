"""Scored region proposals: file loading and a naive generator.

Proposal files are plain text, one region per line.  Box lines read
`x0,y0,x1,y1,score` with inclusive integer corners; mask lines read
`maskfile.pgm,score` where nonzero mask pixels are members (paths are
resolved against the proposal file's directory).  Scores are min-max
rescaled to [0, 1] on load; a file whose scores are all equal (including
a single line) normalizes to all ones.

The naive generator stands in for an external objectness method: it
slides multi-scale square-ish windows over the image and scores each by
the mean gradient-magnitude energy on the window border minus the mean
over its interior, so windows hugging a closed contour score highest.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .pnm import read_pgm

BOXES = "boxes"
MASKS = "masks"

# window sides as fractions of the short image side, and per-scale aspects
_SCALES = (0.2, 0.3, 0.45, 0.6)
_ASPECTS = (1.0, 0.75, 1.5)


@dataclass(frozen=True)
class Box:
    x0: int
    y0: int
    x1: int
    y1: int

    def __post_init__(self):
        if self.x1 < self.x0 or self.y1 < self.y0:
            raise ValueError(f"degenerate box {(self.x0, self.y0, self.x1, self.y1)}")
        if self.x0 < 0 or self.y0 < 0:
            raise ValueError(f"negative box corner {(self.x0, self.y0)}")


@dataclass(frozen=True)
class ProposalSet:
    kind: str  # BOXES or MASKS
    regions: tuple  # Box instances, or (h, w) bool membership arrays
    scores: np.ndarray  # float64 in [0, 1], parallel to regions

    def __post_init__(self):
        if self.kind not in (BOXES, MASKS):
            raise ValueError(f"unknown proposal kind {self.kind!r}")
        if len(self.regions) == 0:
            raise ValueError("proposal set has no regions")
        if len(self.regions) != len(self.scores):
            raise ValueError("regions and scores differ in length")
        if np.any(self.scores < 0) or np.any(self.scores > 1):
            raise ValueError("scores must lie in [0, 1]")

    def __len__(self) -> int:
        return len(self.regions)


def _minmax(scores: np.ndarray) -> np.ndarray:
    lo, hi = scores.min(), scores.max()
    if hi == lo:
        return np.ones_like(scores)
    return (scores - lo) / (hi - lo)


def load_proposals(path: str | Path) -> ProposalSet:
    path = Path(path)
    with open(path) as f:
        lines = f.read().splitlines()
    kind = None
    regions: list = []
    raw_scores: list[float] = []
    for lineno, line in enumerate(lines, start=1):
        line = line.strip()
        if not line:
            continue
        parts = [p.strip() for p in line.split(",")]
        if len(parts) == 5:
            line_kind = BOXES
        elif len(parts) == 2:
            line_kind = MASKS
        else:
            raise ValueError(f"{path}:{lineno}: expected 5 fields (box) or 2 (mask), got {len(parts)}")
        if kind is None:
            kind = line_kind
        elif kind != line_kind:
            raise ValueError(f"{path}:{lineno}: mixed box and mask lines in one file")
        try:
            score = float(parts[-1])
        except ValueError:
            raise ValueError(f"{path}:{lineno}: bad score {parts[-1]!r}") from None
        if not np.isfinite(score):
            raise ValueError(f"{path}:{lineno}: non-finite score")
        if kind == BOXES:
            try:
                x0, y0, x1, y1 = (int(p) for p in parts[:4])
            except ValueError:
                raise ValueError(f"{path}:{lineno}: bad box coordinates {parts[:4]}") from None
            try:
                regions.append(Box(x0, y0, x1, y1))
            except ValueError as e:
                raise ValueError(f"{path}:{lineno}: {e}") from None
        else:
            membership = read_pgm(path.parent / parts[0]) != 0
            if not membership.any():
                raise ValueError(f"{path}:{lineno}: mask {parts[0]} has no member pixels")
            regions.append(membership)
        raw_scores.append(score)
    if not regions:
        raise ValueError(f"{path}: no regions (empty proposal file)")
    return ProposalSet(kind=kind, regions=tuple(regions), scores=_minmax(np.array(raw_scores)))


def _gradient_energy(image: np.ndarray) -> np.ndarray:
    gy = np.gradient(image, axis=1)
    gx = np.gradient(image, axis=2)
    return np.sqrt((gy * gy + gx * gx).sum(axis=0))


def naive_proposals(image: np.ndarray, count: int) -> ProposalSet:
    """Top `count` multi-scale windows by border-vs-interior edge energy."""
    if count <= 0:
        raise ValueError(f"count must be positive, got {count}")
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 3:
        raise ValueError(f"expected (channels, h, w) image, got shape {image.shape}")
    _, h, w = image.shape
    energy = _gradient_energy(image)
    # summed-area table makes every rectangle mean O(1)
    sat = np.zeros((h + 1, w + 1))
    sat[1:, 1:] = energy.cumsum(axis=0).cumsum(axis=1)

    def rect_sum(y0, y1, x0, x1):  # inclusive corners
        return sat[y1 + 1, x1 + 1] - sat[y0, x1 + 1] - sat[y1 + 1, x0] + sat[y0, x0]

    candidates: list[tuple[float, int, int, int, int]] = []
    short = min(h, w)
    for frac in _SCALES:
        for aspect in _ASPECTS:
            bh = max(4, round(frac * short))
            bw = max(4, round(frac * short * aspect))
            if bh > h or bw > w:
                continue
            step_y = max(1, bh // 4)
            step_x = max(1, bw // 4)
            for y0 in range(0, h - bh + 1, step_y):
                for x0 in range(0, w - bw + 1, step_x):
                    y1, x1 = y0 + bh - 1, x0 + bw - 1
                    total = rect_sum(y0, y1, x0, x1)
                    iy0, iy1, ix0, ix1 = y0 + 1, y1 - 1, x0 + 1, x1 - 1
                    inner = rect_sum(iy0, iy1, ix0, ix1) if iy0 <= iy1 and ix0 <= ix1 else 0.0
                    area = bh * bw
                    inner_area = max((bh - 2) * (bw - 2), 0)
                    border = (total - inner) / (area - inner_area)
                    interior = inner / inner_area if inner_area else 0.0
                    candidates.append((border - interior, x0, y0, x1, y1))
    if len(candidates) < count:
        raise ValueError(f"image too small to generate {count} proposals ({len(candidates)} candidates)")
    # highest score first; coordinate order settles ties deterministically
    candidates.sort(key=lambda c: (-c[0], c[1], c[2], c[3], c[4]))
    picked = candidates[:count]
    boxes = tuple(Box(x0, y0, x1, y1) for _, x0, y0, x1, y1 in picked)
    return ProposalSet(kind=BOXES, regions=boxes, scores=_minmax(np.array([c[0] for c in picked])))


def objectness_map(proposals: ProposalSet, h: int, w: int) -> np.ndarray:
    """Per-pixel mean score of the covering regions; 0 where nothing covers.
    Box membership includes both corners."""
    total = np.zeros((h, w))
    cover = np.zeros((h, w))
    if proposals.kind == BOXES:
        for box, score in zip(proposals.regions, proposals.scores):
            if box.x1 >= w or box.y1 >= h:
                raise ValueError(f"box {(box.x0, box.y0, box.x1, box.y1)} exceeds {w}x{h} image")
            total[box.y0 : box.y1 + 1, box.x0 : box.x1 + 1] += score
            cover[box.y0 : box.y1 + 1, box.x0 : box.x1 + 1] += 1.0
    else:
        for membership, score in zip(proposals.regions, proposals.scores):
            if membership.shape != (h, w):
                raise ValueError(f"mask region shape {membership.shape} does not match {(h, w)}")
            total[membership] += score
            cover[membership] += 1.0
    covered = cover > 0
    out = np.zeros((h, w))
    out[covered] = total[covered] / cover[covered]
    return out
