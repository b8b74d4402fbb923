import numpy as np
import pytest

from milseg.rng import stream
from milseg.synthetic import (
    JitterSpec,
    Sample,
    apply_jitter,
    center_crop,
    generate_dataset,
    generate_sample,
    normalize_image,
    read_dataset,
    transform_sample,
    write_dataset,
)


def test_generation_is_pure_in_its_arguments():
    a = generate_dataset(4, 3, 64, seed=11)
    b = generate_dataset(4, 3, 64, seed=11)
    for sa, sb in zip(a, b):
        assert np.array_equal(sa.image, sb.image)
        assert np.array_equal(sa.gt_mask, sb.gt_mask)
        assert sa.label == sb.label
    c = generate_dataset(4, 3, 64, seed=12)
    assert not np.array_equal(a[1].image, c[1].image)


def test_per_class_counts_and_interleaving():
    ds = generate_dataset(5, 4, 64, seed=0)
    labels = [s.label for s in ds]
    assert len(ds) == 20
    for k in range(5):
        assert labels.count(k) == 4
    assert labels[:5] == [0, 1, 2, 3, 4]


def test_sample_index_alone_determines_content():
    # generation order cannot matter: sample 7 drawn in isolation equals sample 7 of the batch
    batch = generate_dataset(4, 3, 64, seed=5)
    lone = generate_sample(7, 4, 64, seed=5)
    assert np.array_equal(batch[7].image, lone.image)


def test_mask_matches_label_and_fraction_bounds():
    ds = generate_dataset(4, 25, 64, seed=3)
    for s in ds:
        assert s.image.shape == (3, 64, 64)
        assert s.image.min() >= 0.0 and s.image.max() <= 1.0
        classes = set(np.unique(s.gt_mask).tolist())
        if s.label == 0:
            assert classes == {0}
        else:
            assert classes == {0, s.label}
            frac = (s.gt_mask > 0).mean()
            assert 0.01 <= frac <= 0.6


def test_shape_pixels_visually_separable_from_background():
    ds = generate_dataset(4, 10, 64, seed=9)
    for s in ds:
        if s.label == 0:
            continue
        fg = s.image[:, s.gt_mask > 0]
        bg = s.image[:, s.gt_mask == 0]
        dist = np.linalg.norm(fg.mean(axis=1) - bg.mean(axis=1))
        assert dist > 0.2


def _extreme_fraction(image):
    return float(np.mean((image.min(axis=0) < 0.15) | (image.max(axis=0) > 0.85)))


def test_clutter_marks_are_background_class_material():
    plain = generate_dataset(4, 10, 64, seed=9)
    cluttered = generate_dataset(4, 10, 64, seed=9, clutter=True)
    for p, c in zip(plain, cluttered):
        # labels and masks are untouched: the marks carry no class
        assert c.label == p.label
        assert np.array_equal(c.gt_mask, p.gt_mask)
        if c.label > 0:
            # the filled shape is painted over the marks, never the reverse
            assert set(np.unique(c.gt_mask[c.gt_mask > 0]).tolist()) == {c.label}
    # every cluttered background image now contains extreme-colored pixels,
    # so "high-contrast pixels present" cannot separate the classes
    for c in cluttered:
        if c.label == 0:
            assert _extreme_fraction(c.image) > 0.005
    for p in plain:
        if p.label == 0:
            assert _extreme_fraction(p.image) < 0.005


def test_clutter_is_deterministic_and_off_by_default():
    a = generate_dataset(3, 4, 64, seed=11, clutter=True)
    b = generate_dataset(3, 4, 64, seed=11, clutter=True)
    for x, y in zip(a, b):
        assert np.array_equal(x.image, y.image)
    default = generate_dataset(3, 4, 64, seed=11)
    explicit = generate_dataset(3, 4, 64, seed=11, clutter=False)
    for x, y in zip(default, explicit):
        assert np.array_equal(x.image, y.image)


def test_too_few_classes_or_too_small_rejected():
    with pytest.raises(ValueError):
        generate_dataset(1, 5, 64, seed=0)
    with pytest.raises(ValueError):
        generate_dataset(4, 0, 64, seed=0)
    with pytest.raises(ValueError):
        generate_dataset(4, 5, 16, seed=0)


def test_identity_transform_returns_sample_unchanged():
    s = generate_sample(2, 4, 64, seed=1)
    t = transform_sample(s)
    assert np.array_equal(t.image, s.image)
    assert np.array_equal(t.gt_mask, s.gt_mask)
    # identity jitter spec keeps it bit-exact through the random path too
    u = apply_jitter(s, JitterSpec.identity(), stream(0, "jit", 0))
    assert np.array_equal(u.image, s.image)
    assert np.array_equal(u.gt_mask, s.gt_mask)


def test_flip_is_an_involution():
    s = generate_sample(1, 4, 64, seed=2)
    once = transform_sample(s, flip=True)
    twice = transform_sample(once, flip=True)
    assert not np.array_equal(once.image, s.image)
    assert np.array_equal(twice.image, s.image)
    assert np.array_equal(twice.gt_mask, s.gt_mask)


def test_quarter_turn_preserves_mask_pixel_count():
    s = generate_sample(3, 4, 64, seed=4)
    t = transform_sample(s, angle_deg=90.0)
    assert (t.gt_mask > 0).sum() == (s.gt_mask > 0).sum()
    assert t.label == s.label


def test_jitter_never_changes_the_label_or_empties_the_shape():
    ds = generate_dataset(4, 6, 64, seed=6)
    spec = JitterSpec()
    for i, s in enumerate(ds):
        j = apply_jitter(s, spec, stream(7, "jit", i))
        assert j.label == s.label
        if s.label > 0:
            assert (j.gt_mask == s.label).any()
        else:
            assert not j.gt_mask.any()


def test_jittered_shape_survives_training_crop():
    ds = generate_dataset(4, 30, 64, seed=8)
    spec = JitterSpec()
    for i, s in enumerate(ds):
        if s.label == 0:
            continue
        j = apply_jitter(s, spec, stream(9, "jit", i))
        c = center_crop(j, 48)
        # placement margins guarantee the whole shape stays inside the crop
        assert (c.gt_mask == s.label).sum() == (j.gt_mask == s.label).sum()


def test_photometric_jitter_stays_in_range():
    s = generate_sample(1, 4, 64, seed=10)
    t = transform_sample(s, brightness=0.1, contrast=1.2)
    assert t.image.min() >= 0.0 and t.image.max() <= 1.0
    assert np.array_equal(t.gt_mask, s.gt_mask)  # photometrics leave geometry alone


def test_center_crop_rescales_small_images():
    s = Sample(image=np.random.default_rng(0).random((3, 32, 40)),
               label=0, gt_mask=np.zeros((32, 40), dtype=np.int64))
    c = center_crop(s, 48)
    assert c.image.shape == (3, 48, 48)
    assert c.gt_mask.shape == (48, 48)
    big = center_crop(Sample(image=np.zeros((3, 64, 64)), label=0), 48)
    assert big.image.shape == (3, 48, 48)
    assert big.gt_mask is None


def test_normalize_zero_mean_unit_variance_idempotent():
    rng = np.random.default_rng(1)
    img = rng.random((3, 30, 30)) * 0.7 + 0.1
    n = normalize_image(img)
    assert np.allclose(n.mean(axis=(1, 2)), 0.0, atol=1e-10)
    assert np.allclose(n.var(axis=(1, 2)), 1.0, atol=1e-6)
    again = normalize_image(n)
    assert np.allclose(again, n, atol=1e-6)


def test_normalize_constant_channel_maps_to_zero():
    # the variance floor keeps the division finite; output is zero up to
    # the rounding of the channel mean amplified by 1/sqrt(floor)
    img = np.full((3, 8, 8), 0.4)
    n = normalize_image(img)
    assert np.abs(n).max() < 1e-9


def test_dataset_round_trip_and_mask_sealing(tmp_path):
    ds = generate_dataset(3, 4, 64, seed=13)
    write_dataset(tmp_path, ds)
    assert (tmp_path / "labels.csv").exists()
    train_view = read_dataset(tmp_path, with_masks=False)
    assert all(s.gt_mask is None for s in train_view)
    eval_view = read_dataset(tmp_path, with_masks=True)
    for orig, back in zip(ds, eval_view):
        assert back.label == orig.label
        assert np.array_equal(back.gt_mask, orig.gt_mask)
        # images pass through 8-bit quantization on disk
        assert np.abs(back.image - orig.image).max() <= (0.5 / 255) + 1e-12


def test_dataset_write_is_byte_deterministic(tmp_path):
    ds = generate_dataset(3, 2, 64, seed=14)
    a, b = tmp_path / "a", tmp_path / "b"
    write_dataset(a, ds)
    write_dataset(b, ds)
    for rel in ["labels.csv", "images/00000.ppm", "masks/00003.pgm"]:
        assert (a / rel).read_bytes() == (b / rel).read_bytes()


def test_missing_labels_file_rejected(tmp_path):
    with pytest.raises(FileNotFoundError):
        read_dataset(tmp_path / "nope")
