import numpy as np
import pytest

from milseg.pnm import (
    PROBMAP_MAGIC,
    image_to_unit,
    read_pgm,
    read_ppm,
    read_probmaps,
    unit_to_image,
    write_pgm,
    write_ppm,
    write_probmaps,
)


def test_ppm_round_trip_bit_exact(tmp_path):
    rng = np.random.default_rng(0)
    img = rng.integers(0, 256, size=(11, 7, 3), dtype=np.uint8)
    p = tmp_path / "a.ppm"
    write_ppm(p, img)
    assert np.array_equal(read_ppm(p), img)
    # a second write produces identical bytes
    q = tmp_path / "b.ppm"
    write_ppm(q, img)
    assert p.read_bytes() == q.read_bytes()


def test_pgm_round_trip(tmp_path):
    mask = np.arange(20, dtype=np.uint8).reshape(4, 5)
    p = tmp_path / "m.pgm"
    write_pgm(p, mask)
    assert np.array_equal(read_pgm(p), mask)


def test_header_comments_and_whitespace(tmp_path):
    body = bytes(range(12))
    raw = b"P6\n# comment line\n 2 # trailing\n2\n255\n" + body
    p = tmp_path / "c.ppm"
    p.write_bytes(raw)
    img = read_ppm(p)
    assert img.shape == (2, 2, 3)
    assert img.ravel().tolist() == list(range(12))


def test_wrong_magic_rejected(tmp_path):
    p = tmp_path / "x.ppm"
    p.write_bytes(b"P5\n2 2\n255\n" + bytes(4))
    with pytest.raises(ValueError):
        read_ppm(p)


def test_truncated_payload_rejected(tmp_path):
    p = tmp_path / "t.ppm"
    p.write_bytes(b"P6\n2 2\n255\n" + bytes(5))
    with pytest.raises(ValueError):
        read_ppm(p)


def test_maxval_over_255_rejected(tmp_path):
    p = tmp_path / "w.pgm"
    p.write_bytes(b"P5\n2 2\n65535\n" + bytes(8))
    with pytest.raises(ValueError):
        read_pgm(p)


def test_unit_conversion_round_trip():
    rng = np.random.default_rng(1)
    img = rng.integers(0, 256, size=(5, 6, 3), dtype=np.uint8)
    unit = image_to_unit(img)
    assert unit.shape == (3, 5, 6)
    assert unit.min() >= 0.0 and unit.max() <= 1.0
    assert np.array_equal(unit_to_image(unit), img)


def test_probmaps_round_trip(tmp_path):
    rng = np.random.default_rng(2)
    maps = rng.random((4, 6, 5))
    p = tmp_path / "m.probmaps"
    write_probmaps(p, maps)
    back = read_probmaps(p)
    assert back.shape == maps.shape
    assert np.array_equal(back, maps)  # float64 planes, bit exact


def test_probmaps_header_layout(tmp_path):
    maps = np.zeros((2, 3, 4))
    p = tmp_path / "h.probmaps"
    write_probmaps(p, maps)
    raw = np.frombuffer(p.read_bytes(), dtype="<f8")
    assert raw[0] == PROBMAP_MAGIC
    assert (raw[1], raw[2], raw[3]) == (2.0, 3.0, 4.0)
    assert np.all(raw[4:8] == 0.0)
    assert raw.size == 8 + 2 * 3 * 4


def test_probmaps_bad_magic_rejected(tmp_path):
    p = tmp_path / "bad.probmaps"
    header = np.zeros(8)
    header[0] = 123.0
    p.write_bytes(header.tobytes())
    with pytest.raises(ValueError):
        read_probmaps(p)
