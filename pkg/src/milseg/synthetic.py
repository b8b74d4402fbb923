"""Deterministic synthetic shape corpus for desk-scale experiments.

Each sample is a 3 x size x size RGB image in [0, 1] holding either pure
textured background (class 0) or a single filled shape of its class:
disk (1), square (2), triangle (3), then regular n-gons for higher
classes.  The optional clutter mode adds thin or hollow high-contrast
marks — background-class material — to every image, so that extreme
colors alone never identify a class.  The image-level label is the only
training signal; the pixel mask rides along strictly for evaluation.
Everything is a pure function of (arguments, seed): sample i draws from
its own counter-based stream, so generation order and thread count
cannot change the corpus.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .pnm import image_to_unit, read_pgm, read_ppm, unit_to_image, write_pgm, write_ppm
from .rng import STREAM_DATA, stream

MIN_IMAGE_SIZE = 32

# circumradius range and placement limit, as fractions of the image side;
# sized so every shape stays in frame under the default jitter plus the
# centered training crop, with mask foreground fraction inside [0.01, 0.6]
_RADIUS_LO = 7.0 / 64.0
_RADIUS_HI = 14.0 / 64.0
_PLACE_LIMIT = 20.0 / 64.0


@dataclass(frozen=True)
class Sample:
    """image: (3, h, w) float64 in [0, 1]; label: class index (0 = background);
    gt_mask: (h, w) int per-pixel class, present only on the evaluation path."""

    image: np.ndarray
    label: int
    gt_mask: np.ndarray | None = None

    def without_mask(self) -> "Sample":
        return replace(self, gt_mask=None)


@dataclass(frozen=True)
class JitterSpec:
    """Augmentation ranges: flip fires with probability 1/2 when enabled,
    rotation is uniform in +-rotation degrees, scale and contrast uniform in
    their ranges, brightness an additive uniform in +-brightness."""

    flip: bool = True
    rotation: float = 20.0
    scale_min: float = 0.8
    scale_max: float = 1.2
    brightness: float = 0.1
    contrast_min: float = 0.8
    contrast_max: float = 1.2

    @classmethod
    def identity(cls) -> "JitterSpec":
        return cls(flip=False, rotation=0.0, scale_min=1.0, scale_max=1.0,
                   brightness=0.0, contrast_min=1.0, contrast_max=1.0)


def background_texture(rng: np.random.Generator, h: int, w: int) -> np.ndarray:
    """Low-frequency colored noise over a random linear gradient, mid-range."""
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    yy /= max(h - 1, 1)
    xx /= max(w - 1, 1)
    out = np.empty((3, h, w))
    for c in range(3):
        base = rng.uniform(0.4, 0.6)
        gy, gx = rng.uniform(-0.1, 0.1, size=2)
        coarse = rng.uniform(-0.12, 0.12, size=(5, 5))
        out[c] = base + gy * (yy - 0.5) + gx * (xx - 0.5) + _bilinear_upsample(coarse, h, w)
    return np.clip(out, 0.0, 1.0)


def _bilinear_upsample(grid: np.ndarray, h: int, w: int) -> np.ndarray:
    gh, gw = grid.shape
    y = np.linspace(0, gh - 1, h)
    x = np.linspace(0, gw - 1, w)
    y0 = np.floor(y).astype(int).clip(0, gh - 2)
    x0 = np.floor(x).astype(int).clip(0, gw - 2)
    fy = (y - y0)[:, None]
    fx = (x - x0)[None, :]
    a = grid[np.ix_(y0, x0)]
    b = grid[np.ix_(y0, x0 + 1)]
    c = grid[np.ix_(y0 + 1, x0)]
    d = grid[np.ix_(y0 + 1, x0 + 1)]
    return a * (1 - fy) * (1 - fx) + b * (1 - fy) * fx + c * fy * (1 - fx) + d * fy * fx


def _shape_mask(label: int, cy: float, cx: float, radius: float, phase: float,
                h: int, w: int) -> np.ndarray:
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    if label == 1:  # disk
        return (yy - cy) ** 2 + (xx - cx) ** 2 <= radius**2
    n = {2: 4, 3: 3}.get(label, label + 1)  # square, triangle, then n-gons
    angles = phase + 2.0 * np.pi * np.arange(n) / n
    vy = cy + radius * np.sin(angles)
    vx = cx + radius * np.cos(angles)
    inside = np.ones((h, w), dtype=bool)
    for i in range(n):
        j = (i + 1) % n
        ey, ex = vy[j] - vy[i], vx[j] - vx[i]
        # counter-clockwise vertices: interior is on the left of every edge
        inside &= ex * (yy - vy[i]) - ey * (xx - vx[i]) >= 0.0
    return inside


def _ring_mask(rng: np.random.Generator, h: int, w: int) -> np.ndarray:
    cy, cx = rng.uniform(6, h - 7), rng.uniform(6, w - 7)
    r = rng.uniform(4.0, 10.0)
    t = rng.uniform(1.0, 2.0)
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    d2 = (yy - cy) ** 2 + (xx - cx) ** 2
    return (d2 <= (r + t) ** 2) & (d2 >= (r - t) ** 2)


def _bar_mask(rng: np.random.Generator, h: int, w: int) -> np.ndarray:
    cy, cx = rng.uniform(6, h - 7), rng.uniform(6, w - 7)
    ang = rng.uniform(0, np.pi)
    length = rng.uniform(8.0, 18.0)
    t = rng.uniform(0.7, 1.4)
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    dy, dx = yy - cy, xx - cx
    along = dy * np.sin(ang) + dx * np.cos(ang)
    across = dy * np.cos(ang) - dx * np.sin(ang)
    return (np.abs(along) <= length / 2) & (np.abs(across) <= t)


def _cross_mask(rng: np.random.Generator, h: int, w: int) -> np.ndarray:
    return _bar_mask(rng, h, w) | _bar_mask(rng, h, w)


_CLUTTER_MASKS = (_ring_mask, _bar_mask, _cross_mask)


def _paint_extreme(rng: np.random.Generator, image: np.ndarray, region: np.ndarray) -> np.ndarray:
    """Fill `region` with a per-channel extreme color plus light noise; extreme
    values are always separable from the mid-range background texture."""
    _, h, w = image.shape
    side = rng.random(3) < 0.5
    color = np.where(side, rng.uniform(0.0, 0.08, 3), rng.uniform(0.92, 1.0, 3))
    noise = rng.uniform(-0.03, 0.03, size=(3, h, w))
    return np.where(region[None], np.clip(color[:, None, None] + noise, 0.0, 1.0), image)


def generate_sample(index: int, num_classes: int, image_size: int, seed: int,
                    clutter: bool = False) -> Sample:
    """Sample `index` of the corpus; label is index mod num_classes.

    With `clutter` enabled every image additionally carries one or two thin
    or hollow marks (rings, bars, crosses) painted in the same extreme color
    range as the shapes.  The marks belong to the background class — they make
    "high-contrast pixels present" useless as a class cue, so models must key
    on filled shape geometry rather than color statistics.
    """
    rng = stream(seed, STREAM_DATA, index)
    label = index % num_classes
    h = w = image_size
    image = background_texture(rng, h, w)
    mask = np.zeros((h, w), dtype=np.int64)
    shape = None
    if label > 0:
        radius = rng.uniform(_RADIUS_LO, _RADIUS_HI) * image_size
        rho = (_PLACE_LIMIT * image_size - radius) * np.sqrt(rng.random())
        theta = rng.uniform(0.0, 2.0 * np.pi)
        cy = (image_size - 1) / 2.0 + rho * np.sin(theta)
        cx = (image_size - 1) / 2.0 + rho * np.cos(theta)
        phase = rng.uniform(0.0, 2.0 * np.pi)
        shape = _shape_mask(label, cy, cx, radius, phase, h, w)
    if clutter:
        for _ in range(int(rng.integers(1, 3))):
            marks = _CLUTTER_MASKS[int(rng.integers(0, len(_CLUTTER_MASKS)))](rng, h, w)
            if shape is not None:
                marks &= ~shape
            image = _paint_extreme(rng, image, marks)
    if shape is not None:
        image = _paint_extreme(rng, image, shape)
        mask[shape] = label
        frac = shape.mean()
        if not 0.01 <= frac <= 0.6:
            raise RuntimeError(f"generator self-audit: foreground fraction {frac:.4f} outside [0.01, 0.6]")
    return Sample(image=image, label=label, gt_mask=mask)


def generate_dataset(num_classes: int, per_class: int, image_size: int, seed: int,
                     clutter: bool = False) -> list[Sample]:
    """num_classes * per_class samples, exactly per_class of each label,
    interleaved by index (label = index mod num_classes)."""
    if num_classes < 2:
        raise ValueError(f"need at least 2 classes (one shape plus background), got {num_classes}")
    if per_class < 1:
        raise ValueError(f"per_class must be positive, got {per_class}")
    if image_size < MIN_IMAGE_SIZE:
        raise ValueError(f"image_size {image_size} too small for the minimum shape size (need >= {MIN_IMAGE_SIZE})")
    return [generate_sample(i, num_classes, image_size, seed, clutter=clutter)
            for i in range(num_classes * per_class)]


def transform_sample(
    sample: Sample,
    flip: bool = False,
    angle_deg: float = 0.0,
    scale: float = 1.0,
    brightness: float = 0.0,
    contrast: float = 1.0,
    fill_rng: np.random.Generator | None = None,
) -> Sample:
    """Deterministic jitter primitive.

    Geometry first (flip, then rotation+scale about the image center;
    bilinear for the image, nearest neighbor for the mask, out-of-frame
    regions filled with fresh background texture), then photometrics
    (contrast about mid-gray, additive brightness, clipped to [0, 1]).
    Identity arguments return the sample unchanged, bit for bit.
    """
    image, mask = sample.image, sample.gt_mask
    if flip:
        image = image[:, :, ::-1].copy()
        mask = None if mask is None else mask[:, ::-1].copy()
    if angle_deg != 0.0 or scale != 1.0:
        if scale <= 0:
            raise ValueError(f"scale must be positive, got {scale}")
        _, h, w = image.shape
        cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
        theta = np.deg2rad(angle_deg)
        cos_t, sin_t = np.cos(theta), np.sin(theta)
        yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
        dy, dx = yy - cy, xx - cx
        src_y = cy + (cos_t * dy - sin_t * dx) / scale
        src_x = cx + (sin_t * dy + cos_t * dx) / scale
        inside = (src_y >= 0) & (src_y <= h - 1) & (src_x >= 0) & (src_x <= w - 1)
        if fill_rng is not None:
            fill = background_texture(fill_rng, h, w) if not inside.all() else None
        else:
            fill = None
        image = _bilinear_sample(image, src_y, src_x, inside, fill)
        if mask is not None:
            ny = np.rint(src_y).astype(int)
            nx = np.rint(src_x).astype(int)
            ok = (ny >= 0) & (ny < h) & (nx >= 0) & (nx < w)
            mask = np.where(ok, mask[ny.clip(0, h - 1), nx.clip(0, w - 1)], 0)
    if contrast != 1.0 or brightness != 0.0:
        image = np.clip((image - 0.5) * contrast + 0.5 + brightness, 0.0, 1.0)
    return Sample(image=image, label=sample.label, gt_mask=mask)


def _bilinear_sample(image, src_y, src_x, inside, fill):
    h, w = image.shape[1:]
    y = src_y.clip(0, h - 1)
    x = src_x.clip(0, w - 1)
    y0 = np.floor(y).astype(int).clip(0, h - 2)
    x0 = np.floor(x).astype(int).clip(0, w - 2)
    fy, fx = y - y0, x - x0
    out = (
        image[:, y0, x0] * (1 - fy) * (1 - fx)
        + image[:, y0, x0 + 1] * (1 - fy) * fx
        + image[:, y0 + 1, x0] * fy * (1 - fx)
        + image[:, y0 + 1, x0 + 1] * fy * fx
    )
    if not inside.all():
        if fill is None:
            fill = np.zeros_like(out)
        out = np.where(inside[None], out, fill)
    return out


def apply_jitter(sample: Sample, spec: JitterSpec, rng: np.random.Generator) -> Sample:
    """Random jitter draw (flip, rotation, scale, brightness, contrast) applied
    consistently to image and mask; the label never changes.  Draw order is
    fixed, so a given rng state always produces the same augmentation."""
    flip = bool(spec.flip and rng.random() < 0.5)
    angle = float(rng.uniform(-spec.rotation, spec.rotation))
    scale = float(rng.uniform(spec.scale_min, spec.scale_max))
    brightness = float(rng.uniform(-spec.brightness, spec.brightness))
    contrast = float(rng.uniform(spec.contrast_min, spec.contrast_max))
    return transform_sample(sample, flip, angle, scale, brightness, contrast, fill_rng=rng)


def center_crop(sample: Sample, crop: int) -> Sample:
    """Centered crop to crop x crop; an image whose smaller dimension is
    below the crop size is first rescaled so that dimension equals it."""
    image, mask = sample.image, sample.gt_mask
    _, h, w = image.shape
    if min(h, w) < crop:
        s = crop / min(h, w)
        nh, nw = max(crop, round(h * s)), max(crop, round(w * s))
        yy = np.linspace(0, h - 1, nh)[:, None] * np.ones((1, nw))
        xx = np.ones((nh, 1)) * np.linspace(0, w - 1, nw)[None, :]
        image = _bilinear_sample(image, yy, xx, np.ones((nh, nw), dtype=bool), None)
        if mask is not None:
            mask = mask[np.rint(yy).astype(int).clip(0, h - 1), np.rint(xx).astype(int).clip(0, w - 1)]
        h, w = nh, nw
    y0 = (h - crop) // 2
    x0 = (w - crop) // 2
    image = image[:, y0 : y0 + crop, x0 : x0 + crop]
    mask = None if mask is None else mask[y0 : y0 + crop, x0 : x0 + crop]
    return Sample(image=image, label=sample.label, gt_mask=mask)


def normalize_image(image: np.ndarray) -> np.ndarray:
    """Per-channel zero mean, unit variance; variance floored at 1e-8 so a
    constant channel maps to zeros.  Idempotent up to rounding."""
    image = np.asarray(image, dtype=np.float64)
    mean = image.mean(axis=(1, 2), keepdims=True)
    var = image.var(axis=(1, 2), keepdims=True)
    return (image - mean) / np.sqrt(np.maximum(var, 1e-8))


def write_dataset(root: str | Path, samples: list[Sample]) -> None:
    """Write the documented on-disk layout: images/NNNNN.ppm (P6),
    masks/NNNNN.pgm (P5, pixel value = class index), labels.csv."""
    root = Path(root)
    (root / "images").mkdir(parents=True, exist_ok=True)
    (root / "masks").mkdir(parents=True, exist_ok=True)
    with open(root / "labels.csv", "w", newline="") as f:
        writer = csv.writer(f)
        for i, s in enumerate(samples):
            write_ppm(root / "images" / f"{i:05d}.ppm", unit_to_image(s.image))
            if s.gt_mask is not None:
                if s.gt_mask.max() > 255 or s.gt_mask.min() < 0:
                    raise ValueError("mask class indices must fit in a byte")
                write_pgm(root / "masks" / f"{i:05d}.pgm", s.gt_mask.astype(np.uint8))
            writer.writerow([i, s.label])


def read_dataset(root: str | Path, with_masks: bool = False) -> list[Sample]:
    """Load a dataset directory.  The training path reads images and labels
    only; masks are attached solely when the evaluation caller asks."""
    root = Path(root)
    labels_file = root / "labels.csv"
    if not labels_file.exists():
        raise FileNotFoundError(f"no labels.csv under {root}")
    samples = []
    with open(labels_file, newline="") as f:
        for row in csv.reader(f):
            if not row:
                continue
            idx, label = int(row[0]), int(row[1])
            image = image_to_unit(read_ppm(root / "images" / f"{idx:05d}.ppm"))
            mask = None
            if with_masks:
                mask_path = root / "masks" / f"{idx:05d}.pgm"
                if not mask_path.exists():
                    raise FileNotFoundError(f"missing mask {mask_path}")
                mask = read_pgm(mask_path).astype(np.int64)
            samples.append(Sample(image=image, label=label, gt_mask=mask))
    return samples


def write_manifest(root: str | Path, info: dict) -> None:
    with open(Path(root) / "manifest.json", "w") as f:
        json.dump(info, f, indent=2, sort_keys=True)
        f.write("\n")


def read_manifest(root: str | Path) -> dict:
    with open(Path(root) / "manifest.json") as f:
        return json.load(f)
