import numpy as np
import pytest

from milseg.tensor_ops import (
    LayerParams,
    OptimizerConfig,
    conv2d_backward,
    conv2d_forward,
    dropout_backward,
    dropout_forward,
    finite_diff_check,
    maxpool2d_backward,
    maxpool2d_forward,
    relative_error,
    relu_backward,
    relu_forward,
    sgd_step,
)


def conv_reference(x, w, b, stride):
    """Direct six-loop valid cross-correlation; the arithmetic oracle."""
    cin, h, wd = x.shape
    cout, _, kh, kw = w.shape
    ho = (h - kh) // stride + 1
    wo = (wd - kw) // stride + 1
    out = np.zeros((cout, ho, wo))
    for o in range(cout):
        for i in range(ho):
            for j in range(wo):
                acc = 0.0
                for c in range(cin):
                    for a in range(kh):
                        for bb in range(kw):
                            acc += x[c, i * stride + a, j * stride + bb] * w[o, c, a, bb]
                out[o, i, j] = acc + b[o]
    return out


def test_conv_matches_loop_reference():
    rng = np.random.default_rng(0)
    for _ in range(8):
        cin = int(rng.integers(1, 4))
        cout = int(rng.integers(1, 4))
        k = int(rng.integers(1, 4))
        stride = int(rng.integers(1, 3))
        h = k + stride * int(rng.integers(0, 4))
        w = k + stride * int(rng.integers(0, 4))
        x = rng.standard_normal((cin, h, w))
        wt = rng.standard_normal((cout, cin, k, k))
        b = rng.standard_normal(cout)
        got = conv2d_forward(x, LayerParams(wt, b), stride=stride)
        want = conv_reference(x, wt, b, stride)
        assert got.shape == want.shape
        assert np.allclose(got, want, rtol=0, atol=1e-12)


def test_conv_input_too_small_rejected():
    x = np.zeros((1, 2, 2))
    p = LayerParams(np.zeros((1, 1, 3, 3)), np.zeros(1))
    with pytest.raises(ValueError):
        conv2d_forward(x, p)


def test_conv_channel_mismatch_rejected():
    x = np.zeros((2, 5, 5))
    p = LayerParams(np.zeros((1, 3, 3, 3)), np.zeros(1))
    with pytest.raises(ValueError):
        conv2d_forward(x, p)


def test_conv_gradients_match_finite_differences():
    rng = np.random.default_rng(1)
    for stride in (1, 2):
        x = rng.standard_normal((2, 7, 7))
        wt = rng.standard_normal((3, 2, 3, 3)) * 0.5
        b = rng.standard_normal(3) * 0.1
        u = rng.standard_normal(conv2d_forward(x, LayerParams(wt, b), stride=stride).shape)

        def loss(ps):
            return float(np.sum(u * conv2d_forward(ps[0], LayerParams(ps[1], ps[2]), stride=stride)))

        gx, gw, gb = conv2d_backward(x, LayerParams(wt, b), u, stride=stride)
        assert finite_diff_check(loss, [x, wt, b], [gx, gw, gb]) < 1e-6


def test_relu_forward_and_kink_convention():
    x = np.array([[-2.0, 0.0], [0.5, -0.0]])[None]
    assert np.array_equal(relu_forward(x), np.array([[0.0, 0.0], [0.5, 0.0]])[None])
    g = relu_backward(x, np.ones_like(x))
    # gradient at exactly zero takes the inactive branch
    assert np.array_equal(g, np.array([[0.0, 0.0], [1.0, 0.0]])[None])


def test_maxpool_values_and_shape():
    x = np.arange(16, dtype=np.float64).reshape(1, 4, 4)
    out, cache = maxpool2d_forward(x, 2, 2)
    assert np.array_equal(out, np.array([[[5.0, 7.0], [13.0, 15.0]]]))
    g = maxpool2d_backward(cache, np.ones_like(out))
    want = np.zeros((1, 4, 4))
    want[0, 1, 1] = want[0, 1, 3] = want[0, 3, 1] = want[0, 3, 3] = 1.0
    assert np.array_equal(g, want)


def test_maxpool_tie_routes_to_first_row_major():
    x = np.full((1, 2, 2), 3.0)
    out, cache = maxpool2d_forward(x, 2, 2)
    assert out[0, 0, 0] == 3.0
    g = maxpool2d_backward(cache, np.ones((1, 1, 1)))
    want = np.zeros((1, 2, 2))
    want[0, 0, 0] = 1.0  # all four tie; the first in row-major order wins
    assert np.array_equal(g, want)


def test_maxpool_overlapping_windows_accumulate():
    x = np.array([[[1.0, 5.0, 2.0]]])  # 1x1x3, k=2 stride=1 windows overlap at center
    out, cache = maxpool2d_forward(x, 1, 1)
    assert np.array_equal(out, x)
    x2 = np.array([[[1.0, 5.0], [0.0, 0.0]]]).reshape(1, 2, 2)
    out2, cache2 = maxpool2d_forward(x2, 2, 1)
    g = maxpool2d_backward(cache2, np.full(out2.shape, 2.0))
    assert g[0, 0, 1] == 2.0


def test_dropout_scaling_and_rate():
    rng = np.random.default_rng(5)
    x = np.ones((8, 50, 50))
    out, mask = dropout_forward(x, 0.5, rng)
    kept = out != 0
    # inverted dropout: survivors are scaled by 1/(1-rate)
    assert np.allclose(out[kept], 2.0)
    frac = kept.mean()
    assert abs(frac - 0.5) < 0.02
    # expectation preserved
    assert abs(out.mean() - 1.0) < 0.05
    g = dropout_backward(mask, np.ones_like(x))
    assert np.array_equal(g, mask)


def test_dropout_zero_rate_identity():
    rng = np.random.default_rng(6)
    x = np.arange(12.0).reshape(1, 3, 4)
    out, mask = dropout_forward(x, 0.0, rng)
    assert np.array_equal(out, x)
    assert np.all(mask == 1.0)


def test_dropout_bad_rate_rejected():
    rng = np.random.default_rng(7)
    with pytest.raises(ValueError):
        dropout_forward(np.zeros((1, 2, 2)), 1.0, rng)
    with pytest.raises(ValueError):
        dropout_forward(np.zeros((1, 2, 2)), -0.1, rng)


def test_sgd_momentum_hand_recurrence():
    # v <- m v - lr g; w <- w + v, from v=0, w=1, g=1, lr=0.1, m=0.9
    cfg = OptimizerConfig(learning_rate=0.1, momentum=0.9, weight_decay=0.0)
    p = LayerParams(np.array([[[[1.0]]]]), np.array([0.0]))
    g = (np.array([[[[1.0]]]]), np.array([0.0]))
    expected_w = [0.9, 0.71, 0.43899999999999995]
    for want in expected_w:
        p = sgd_step([p], [g], cfg)[0]
        assert p.weights[0, 0, 0, 0] == pytest.approx(want, abs=1e-15)


def test_sgd_weight_decay_on_weights_only():
    cfg = OptimizerConfig(learning_rate=0.1, momentum=0.9, weight_decay=0.5)
    p = LayerParams(np.array([[[[1.0]]]]), np.array([1.0]))
    g = (np.array([[[[1.0]]]]), np.array([1.0]))
    p = sgd_step([p], [g], cfg)[0]
    assert p.weights[0, 0, 0, 0] == pytest.approx(0.85)  # decayed toward zero
    assert p.bias[0] == pytest.approx(0.9)  # bias sees no decay
    p = sgd_step([p], [g], cfg)[0]
    assert p.weights[0, 0, 0, 0] == pytest.approx(0.5724999999999999)


def test_sgd_frozen_layer_untouched():
    cfg = OptimizerConfig(learning_rate=0.1)
    p = LayerParams(np.ones((1, 1, 1, 1)), np.ones(1), frozen=True)
    g = (np.full((1, 1, 1, 1), 5.0), np.full(1, 5.0))
    out = sgd_step([p], [g], cfg)[0]
    assert np.array_equal(out.weights, p.weights)
    assert np.array_equal(out.bias, p.bias)


def test_learning_rate_step_decay():
    cfg = OptimizerConfig(learning_rate=0.1, decay_factor=0.5, decay_interval=100)
    assert cfg.effective_rate(0) == 0.1
    assert cfg.effective_rate(99) == 0.1
    assert cfg.effective_rate(100) == pytest.approx(0.05)
    assert cfg.effective_rate(250) == pytest.approx(0.025)


def test_optimizer_config_validation():
    with pytest.raises(ValueError):
        OptimizerConfig(learning_rate=0.0)
    with pytest.raises(ValueError):
        OptimizerConfig(momentum=1.5)
    with pytest.raises(ValueError):
        OptimizerConfig(decay_factor=0.0)


def test_relative_error_floor_behavior():
    # both tiny: roundoff noise does not register
    assert relative_error(np.array([1e-9]), np.array([3e-9])) < 1e-5
    # at gradient scale: a 10% corruption is clearly visible
    a = np.array([1.0, 2.0, 3.0])
    n = a.copy()
    n[2] *= 1.10
    err = relative_error(a, n)
    assert err == pytest.approx(0.1 / 1.1, rel=1e-9)
    assert err > 0.05


def test_finite_diff_check_detects_corrupted_gradient():
    rng = np.random.default_rng(8)
    x = rng.standard_normal((2, 5, 5))
    u = rng.standard_normal((2, 5, 5))

    def loss(ps):
        return float(np.sum(u * ps[0]))

    good = finite_diff_check(loss, [x], [u])
    assert good < 1e-8
    bad_grad = u.copy()
    bad_grad[0, 0, 0] += 0.5 + abs(bad_grad[0, 0, 0])
    assert finite_diff_check(loss, [x], [bad_grad]) > 1e-2


def test_layer_params_velocity_shapes_validated():
    with pytest.raises(ValueError):
        LayerParams(np.zeros((1, 1, 2, 2)), np.zeros(1), vel_weights=np.zeros((1, 1, 3, 3)))
