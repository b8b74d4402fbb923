import numpy as np
import pytest
from sklearn.base import clone

from milseg.estimator import MILSegmenter
from milseg.network import load_checkpoint
from milseg.synthetic import generate_dataset

SMALL = dict(
    num_classes=3,
    stem_channels=(4, 4, 4),
    head_channels=(4, 4, 4),
    dropout_rate=0.25,
    learning_rate=0.02,
    batch_size=4,
    train_steps=8,
    crop_size=28,
    seed=7,
)


@pytest.fixture(scope="module")
def data():
    samples = generate_dataset(3, 3, 32, seed=7)
    X = [s.image for s in samples]
    y = np.array([s.label for s in samples])
    return X, y


@pytest.fixture(scope="module")
def fitted(data):
    X, y = data
    return MILSegmenter(**SMALL).fit(X, y)


def test_get_params_set_params_clone():
    est = MILSegmenter(lse_r=3.0, prior="ilp")
    params = est.get_params()
    assert params["lse_r"] == 3.0
    assert params["prior"] == "ilp"
    est.set_params(lse_r=4.0)
    assert est.lse_r == 4.0
    dup = clone(est)
    assert dup.get_params() == est.get_params()
    assert not hasattr(dup, "params_")


def test_fit_returns_self_and_sets_state(fitted):
    assert isinstance(fitted, MILSegmenter)
    assert hasattr(fitted, "params_") and hasattr(fitted, "spec_")
    assert len(fitted.loss_log_) == SMALL["train_steps"]
    assert np.array_equal(fitted.classes_, [0, 1, 2])


def test_predict_masks_match_input_resolution(fitted, data):
    X, _ = data
    masks = fitted.predict(X[:2])
    assert len(masks) == 2
    for m, img in zip(masks, X[:2]):
        assert m.shape == img.shape[1:]
        assert set(np.unique(m)) <= {0, 1, 2}


def test_transform_gives_posterior_maps(fitted, data):
    X, _ = data
    probs = fitted.transform(X[:1])[0]
    assert probs.shape == (3,) + X[0].shape[1:]
    assert np.abs(probs.sum(axis=0) - 1.0).max() < 1e-12
    assert probs.min() >= 0.0


def test_image_level_predictions(fitted, data):
    X, y = data
    labels = fitted.predict_image_labels(X)
    assert labels.shape == (len(X),)
    assert set(labels) <= {0, 1, 2}
    proba = fitted.predict_proba(X[:3])
    assert proba.shape == (3, 3)
    assert np.abs(proba.sum(axis=1) - 1.0).max() < 1e-12
    assert np.array_equal(np.argmax(proba, axis=1), fitted.predict_image_labels(X[:3]))
    acc = fitted.score(X, y)
    assert 0.0 <= acc <= 1.0


def test_fit_is_seed_deterministic(data):
    X, y = data
    a = MILSegmenter(**SMALL).fit(X, y)
    b = MILSegmenter(**SMALL).fit(X, y)
    for pa, pb in zip(a.params_, b.params_):
        assert np.array_equal(pa.weights, pb.weights)
    other = MILSegmenter(**{**SMALL, "seed": 8}).fit(X, y)
    assert any(
        not np.array_equal(pa.weights, pc.weights)
        for pa, pc in zip(a.params_, other.params_)
    )
    ma = a.predict(X[:1])[0]
    mb = b.predict(X[:1])[0]
    assert np.array_equal(ma, mb)


def test_unfitted_estimator_refuses_to_predict(data):
    X, _ = data
    est = MILSegmenter(**SMALL)
    for call in (est.predict, est.transform, est.predict_image_labels, est.predict_proba):
        with pytest.raises(RuntimeError, match="not fitted"):
            call(X[:1])


def test_input_validation(data):
    X, y = data
    est = MILSegmenter(**SMALL)
    with pytest.raises(ValueError):
        est.fit([np.zeros((1, 32, 32))], [0])  # not 3-channel
    with pytest.raises(ValueError):
        est.fit(X, y[:-1])  # length mismatch
    with pytest.raises(ValueError):
        est.fit(X, np.full(len(X), 9))  # label outside [0, num_classes)
    with pytest.raises(ValueError):
        est.fit([np.full((3, 32, 32), 2.0)], [0])  # values outside [0, 1]


@pytest.mark.filterwarnings("ignore::RuntimeWarning")  # inf * 0 inside the doomed forward pass
def test_divergence_surfaces_as_runtime_error(data):
    X, y = data
    est = MILSegmenter(**{**SMALL, "learning_rate": 1e150, "train_steps": 5})
    with pytest.raises(RuntimeError, match="non-finite"):
        est.fit(X, y)


def test_proposal_priors_need_proposals(fitted, data):
    X, _ = data
    est = clone(fitted).set_params(prior="ilp+bb")
    est.params_, est.spec_ = fitted.params_, fitted.spec_
    with pytest.raises(ValueError, match="proposal"):
        est.predict(X[:1])


def test_save_round_trips_the_checkpoint(fitted, tmp_path):
    path = tmp_path / "model.bin"
    fitted.save(path)
    spec, params = load_checkpoint(path)
    assert spec == fitted.spec_
    for got, want in zip(params, fitted.params_):
        assert np.array_equal(got.weights, want.weights)
        assert np.array_equal(got.bias, want.bias)


def test_save_requires_fit(tmp_path):
    with pytest.raises(RuntimeError):
        MILSegmenter().save(tmp_path / "x.bin")
