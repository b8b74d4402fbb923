import numpy as np
import pytest

from milseg.pnm import write_pgm
from milseg.proposals import (
    BOXES,
    MASKS,
    Box,
    ProposalSet,
    load_proposals,
    naive_proposals,
    objectness_map,
)


def test_single_box_line_normalizes_to_one(tmp_path):
    p = tmp_path / "props.txt"
    p.write_text("0,0,9,9,0.7\n")
    ps = load_proposals(p)
    assert ps.kind == BOXES
    assert len(ps) == 1
    assert ps.regions[0] == Box(0, 0, 9, 9)
    assert ps.scores[0] == 1.0  # min-max over a singleton


def test_scores_minmax_normalized(tmp_path):
    p = tmp_path / "props.txt"
    p.write_text("0,0,3,3,2.0\n1,1,4,4,4.0\n2,2,5,5,6.0\n")
    ps = load_proposals(p)
    assert np.allclose(ps.scores, [0.0, 0.5, 1.0])


def test_equal_scores_normalize_to_ones(tmp_path):
    p = tmp_path / "props.txt"
    p.write_text("0,0,3,3,5.0\n1,1,4,4,5.0\n")
    assert np.all(load_proposals(p).scores == 1.0)


def test_malformed_line_reported_with_number(tmp_path):
    p = tmp_path / "props.txt"
    p.write_text("0,0,9,9,0.7\n1,2,3\n")
    with pytest.raises(ValueError, match=":2"):
        load_proposals(p)
    p.write_text("0,0,9,9,oops\n")
    with pytest.raises(ValueError, match=":1"):
        load_proposals(p)
    p.write_text("9,0,0,9,0.7\n")  # x1 < x0
    with pytest.raises(ValueError, match=":1"):
        load_proposals(p)


def test_empty_file_rejected(tmp_path):
    p = tmp_path / "props.txt"
    p.write_text("\n\n")
    with pytest.raises(ValueError, match="empty"):
        load_proposals(p)


def test_mixed_kinds_rejected(tmp_path):
    mask = np.zeros((4, 4), dtype=np.uint8)
    mask[1:3, 1:3] = 1
    write_pgm(tmp_path / "m.pgm", mask)
    p = tmp_path / "props.txt"
    p.write_text("0,0,3,3,0.5\nm.pgm,0.7\n")
    with pytest.raises(ValueError, match="mixed"):
        load_proposals(p)


def test_mask_proposals_resolve_relative_paths(tmp_path):
    mask = np.zeros((5, 6), dtype=np.uint8)
    mask[2:4, 1:5] = 7  # any nonzero value means member
    write_pgm(tmp_path / "region.pgm", mask)
    p = tmp_path / "props.txt"
    p.write_text("region.pgm,0.4\n")
    ps = load_proposals(p)
    assert ps.kind == MASKS
    assert ps.regions[0].sum() == 8
    assert ps.scores[0] == 1.0


def test_all_zero_mask_region_rejected(tmp_path):
    write_pgm(tmp_path / "empty.pgm", np.zeros((4, 4), dtype=np.uint8))
    p = tmp_path / "props.txt"
    p.write_text("empty.pgm,0.5\n")
    with pytest.raises(ValueError, match="no member"):
        load_proposals(p)


def test_objectness_single_box_inclusive_corners():
    ps = ProposalSet(kind=BOXES, regions=(Box(1, 1, 3, 2),), scores=np.array([1.0]))
    obj = objectness_map(ps, 5, 5)
    want = np.zeros((5, 5))
    want[1:3, 1:4] = 1.0  # rows 1..2, cols 1..3, both corners in
    assert np.array_equal(obj, want)


def test_objectness_mean_of_covering_scores():
    ps = ProposalSet(
        kind=BOXES,
        regions=(Box(0, 0, 4, 4), Box(2, 2, 4, 4)),
        scores=np.array([0.4, 0.8]),
    )
    obj = objectness_map(ps, 5, 5)
    assert obj[0, 0] == pytest.approx(0.4)
    assert obj[3, 3] == pytest.approx(0.6)  # (0.4 + 0.8) / 2


def test_objectness_matches_bruteforce_recount():
    rng = np.random.default_rng(0)
    h, w = 17, 13
    boxes, scores = [], []
    for _ in range(25):
        x0 = int(rng.integers(0, w - 1))
        y0 = int(rng.integers(0, h - 1))
        x1 = int(rng.integers(x0, w))
        y1 = int(rng.integers(y0, h))
        boxes.append(Box(x0, y0, min(x1, w - 1), min(y1, h - 1)))
        scores.append(float(rng.random()))
    ps = ProposalSet(kind=BOXES, regions=tuple(boxes), scores=np.array(scores))
    obj = objectness_map(ps, h, w)
    for i in range(h):
        for j in range(w):
            total, cnt = 0.0, 0
            for b, s in zip(boxes, scores):
                if b.y0 <= i <= b.y1 and b.x0 <= j <= b.x1:
                    total += s
                    cnt += 1
            want = total / cnt if cnt else 0.0
            assert obj[i, j] == pytest.approx(want, abs=1e-12)
    assert obj.min() >= 0.0 and obj.max() <= 1.0


def test_objectness_mask_regions():
    m = np.zeros((4, 4), dtype=bool)
    m[1:3, 1:3] = True
    ps = ProposalSet(kind=MASKS, regions=(m,), scores=np.array([0.5]))
    obj = objectness_map(ps, 4, 4)
    assert obj[1, 1] == 0.5 and obj[0, 0] == 0.0


def test_objectness_out_of_bounds_rejected():
    ps = ProposalSet(kind=BOXES, regions=(Box(0, 0, 10, 10),), scores=np.array([1.0]))
    with pytest.raises(ValueError):
        objectness_map(ps, 5, 5)
    bad_mask = ProposalSet(kind=MASKS, regions=(np.ones((3, 3), dtype=bool),), scores=np.array([1.0]))
    with pytest.raises(ValueError):
        objectness_map(bad_mask, 5, 5)


def test_naive_generator_count_and_determinism():
    rng = np.random.default_rng(1)
    img = rng.random((3, 64, 64))
    ps = naive_proposals(img, 30)
    assert len(ps) == 30
    assert ps.kind == BOXES
    ps2 = naive_proposals(img, 30)
    assert ps.regions == ps2.regions
    assert np.array_equal(ps.scores, ps2.scores)


def test_naive_generator_blank_image_all_scores_equal():
    ps = naive_proposals(np.full((3, 64, 64), 0.5), 20)
    assert np.all(ps.scores == ps.scores[0])
    assert np.all(ps.scores == 1.0)


def test_naive_generator_favors_shape_hugging_boxes():
    from milseg.synthetic import generate_sample

    s = generate_sample(1, 4, 64, seed=30)
    ps = naive_proposals(s.image, 50)
    ys, xs = np.where(s.gt_mask > 0)
    cy, cx = ys.mean(), xs.mean()
    best = ps.regions[int(np.argmax(ps.scores))]
    assert best.x0 <= cx <= best.x1
    assert best.y0 <= cy <= best.y1


def test_naive_generator_invalid_count():
    with pytest.raises(ValueError):
        naive_proposals(np.zeros((3, 32, 32)), 0)
    with pytest.raises(ValueError):
        naive_proposals(np.zeros((3, 32, 32)), 100000)


def test_proposal_set_validation():
    with pytest.raises(ValueError):
        ProposalSet(kind="blobs", regions=(Box(0, 0, 1, 1),), scores=np.array([1.0]))
    with pytest.raises(ValueError):
        ProposalSet(kind=BOXES, regions=(), scores=np.array([]))
    with pytest.raises(ValueError):
        ProposalSet(kind=BOXES, regions=(Box(0, 0, 1, 1),), scores=np.array([2.0]))
