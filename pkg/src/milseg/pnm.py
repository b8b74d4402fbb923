"""Binary PPM/PGM (P6/P5) image files plus the raw probability-map dump.

The on-disk pipeline uses only these zero-dependency formats: RGB images
are 8-bit P6, label masks are P5 with the pixel value equal to the class
index.  Readers accept comment lines and arbitrary whitespace in the
header; writers emit a canonical header so identical arrays produce
byte-identical files.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

# First header value of a probability-map dump: the float64 whose byte
# pattern is the ASCII tag b"MILPROB1".
PROBMAP_MAGIC = float(np.frombuffer(b"MILPROB1", dtype="<f8")[0])


def _read_header_tokens(data: bytes, count: int, offset: int) -> tuple[list[int], int]:
    """Read `count` whitespace-separated integer tokens, skipping # comments."""
    tokens: list[int] = []
    i = offset
    while len(tokens) < count:
        if i >= len(data):
            raise ValueError("truncated PNM header")
        c = data[i : i + 1]
        if c == b"#":
            while i < len(data) and data[i : i + 1] != b"\n":
                i += 1
        elif c.isspace():
            i += 1
        else:
            j = i
            while j < len(data) and not data[j : j + 1].isspace() and data[j : j + 1] != b"#":
                j += 1
            tokens.append(int(data[i:j]))
            i = j
    # exactly one whitespace byte separates the header from the raster
    if i >= len(data) or not data[i : i + 1].isspace():
        raise ValueError("missing whitespace after PNM header")
    return tokens, i + 1


def _read_pnm(path: str | Path, magic: bytes, channels: int) -> np.ndarray:
    data = Path(path).read_bytes()
    if data[:2] != magic:
        raise ValueError(f"{path}: expected {magic.decode()} file, got {data[:2]!r}")
    (width, height, maxval), offset = _read_header_tokens(data, 3, 2)
    if maxval <= 0 or maxval > 255:
        raise ValueError(f"{path}: unsupported maxval {maxval}")
    need = width * height * channels
    raster = np.frombuffer(data, dtype=np.uint8, count=need, offset=offset)
    if raster.size != need:
        raise ValueError(f"{path}: raster truncated ({raster.size} of {need} bytes)")
    if channels == 1:
        return raster.reshape(height, width).copy()
    return raster.reshape(height, width, channels).copy()


def read_ppm(path: str | Path) -> np.ndarray:
    """Read a binary P6 file into a uint8 array of shape (h, w, 3)."""
    return _read_pnm(path, b"P6", 3)


def read_pgm(path: str | Path) -> np.ndarray:
    """Read a binary P5 file into a uint8 array of shape (h, w)."""
    return _read_pnm(path, b"P5", 1)


def write_ppm(path: str | Path, image: np.ndarray) -> None:
    """Write a uint8 (h, w, 3) array as binary P6."""
    image = np.asarray(image)
    if image.ndim != 3 or image.shape[2] != 3 or image.dtype != np.uint8:
        raise ValueError(f"write_ppm needs uint8 (h, w, 3), got {image.dtype} {image.shape}")
    h, w, _ = image.shape
    with open(path, "wb") as f:
        f.write(b"P6\n%d %d\n255\n" % (w, h))
        f.write(image.tobytes())


def write_pgm(path: str | Path, image: np.ndarray) -> None:
    """Write a uint8 (h, w) array as binary P5."""
    image = np.asarray(image)
    if image.ndim != 2 or image.dtype != np.uint8:
        raise ValueError(f"write_pgm needs uint8 (h, w), got {image.dtype} {image.shape}")
    h, w = image.shape
    with open(path, "wb") as f:
        f.write(b"P5\n%d %d\n255\n" % (w, h))
        f.write(image.tobytes())


def image_to_unit(image: np.ndarray) -> np.ndarray:
    """uint8 (h, w, 3) -> float64 (3, h, w) in [0, 1]."""
    return image.astype(np.float64).transpose(2, 0, 1) / 255.0


def unit_to_image(planes: np.ndarray) -> np.ndarray:
    """float64 (3, h, w) in [0, 1] -> uint8 (h, w, 3), round-to-nearest."""
    q = np.rint(np.clip(planes, 0.0, 1.0) * 255.0)
    return q.astype(np.uint8).transpose(1, 2, 0)


def write_probmaps(path: str | Path, maps: np.ndarray) -> None:
    """Dump per-pixel per-class probability planes as raw little-endian float64.

    Layout: an 8-value float64 header (magic, class count, h, w, four
    reserved zeros) followed by the planes in class order, row-major.
    """
    maps = np.ascontiguousarray(maps, dtype=np.float64)
    if maps.ndim != 3:
        raise ValueError(f"probability maps must be (classes, h, w), got {maps.shape}")
    c, h, w = maps.shape
    header = struct.pack("<8d", PROBMAP_MAGIC, float(c), float(h), float(w), 0.0, 0.0, 0.0, 0.0)
    with open(path, "wb") as f:
        f.write(header)
        f.write(maps.astype("<f8").tobytes())


def read_probmaps(path: str | Path) -> np.ndarray:
    """Read a probability-map dump written by write_probmaps."""
    data = Path(path).read_bytes()
    if len(data) < 64:
        raise ValueError(f"{path}: truncated probability-map header")
    header = struct.unpack("<8d", data[:64])
    if header[0] != PROBMAP_MAGIC:
        raise ValueError(f"{path}: bad probability-map magic")
    c, h, w = (int(header[1]), int(header[2]), int(header[3]))
    maps = np.frombuffer(data, dtype="<f8", count=c * h * w, offset=64)
    if maps.size != c * h * w:
        raise ValueError(f"{path}: probability-map raster truncated")
    return maps.reshape(c, h, w).copy()
