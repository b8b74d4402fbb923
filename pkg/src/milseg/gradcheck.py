"""Finite-difference verification suites for every gradient in the stack.

Each suite draws seeded random instances, computes analytic gradients,
and compares them against central differences (epsilon 1e-5).  Instances
are drawn away from the genuinely non-differentiable points: max-pool
and max-aggregation instances are redrawn until the top-two gap in every
window clears a margin, relu inputs are kept off zero, and the
end-to-end suite skips any coordinate whose probe steps flip a relu or
pool decision (the loss has no derivative to check across such a flip).
The suites are deterministic given the seed, so a passing configuration
stays passing.
"""

from __future__ import annotations

import hashlib
from typing import NamedTuple

import numpy as np

from .aggregation import Aggregator, aggregate_backward, aggregate_forward
from .network import (
    ConvLayer,
    NetworkSpec,
    PoolLayer,
    build_network,
    forward_full,
    nll_loss,
    sample_loss_and_grads,
)
from .rng import stream
from .tensor_ops import (
    LayerParams,
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
)

EPSILON = 1e-5
TOLERANCE = 1e-5


class SuiteResult(NamedTuple):
    name: str
    instances: int
    max_rel_error: float
    tolerance: float

    @property
    def passed(self) -> bool:
        return self.max_rel_error < self.tolerance

    def line(self) -> str:
        status = "ok" if self.passed else "FAIL"
        return (
            f"{self.name:<16} instances={self.instances:<4} "
            f"max_rel_err={self.max_rel_error:.3e} tol={self.tolerance:.0e} {status}"
        )


def _away_from_zero(rng: np.random.Generator, shape, low=0.05, high=1.0) -> np.ndarray:
    """Random values whose magnitudes stay off the relu kink."""
    mag = rng.uniform(low, high, size=shape)
    sign = np.where(rng.random(shape) < 0.5, -1.0, 1.0)
    return mag * sign


def _pool_gap_ok(x: np.ndarray, k: int, stride: int, margin: float = 1e-3) -> bool:
    c, h, w = x.shape
    for ch in range(c):
        for i in range(0, h - k + 1, stride):
            for j in range(0, w - k + 1, stride):
                window = np.sort(x[ch, i : i + k, j : j + k].ravel())
                if window[-1] - window[-2] < margin:
                    return False
    return True


def check_conv(seed: int, instances: int = 30) -> SuiteResult:
    worst = 0.0
    for t in range(instances):
        rng = stream(seed, "gradcheck.conv", t)
        cin = int(rng.integers(1, 4))
        cout = int(rng.integers(1, 5))
        kern = int(rng.integers(1, 4))
        strd = int(rng.integers(1, 3))
        h = kern + strd * int(rng.integers(1, 4))
        w = kern + strd * int(rng.integers(1, 4))
        x = rng.standard_normal((cin, h, w))
        wts = rng.standard_normal((cout, cin, kern, kern)) * 0.5
        b = rng.standard_normal(cout) * 0.1
        u = rng.standard_normal(conv2d_forward(x, LayerParams(wts, b), stride=strd).shape)

        def loss_fn(ps):
            return float(np.sum(u * conv2d_forward(ps[0], LayerParams(ps[1], ps[2]), stride=strd)))

        gx, gw, gb = conv2d_backward(x, LayerParams(wts, b), u, stride=strd)
        worst = max(worst, finite_diff_check(loss_fn, [x, wts, b], [gx, gw, gb], epsilon=EPSILON))
    return SuiteResult("conv2d", instances, worst, TOLERANCE)


def check_relu(seed: int, instances: int = 10) -> SuiteResult:
    worst = 0.0
    for t in range(instances):
        rng = stream(seed, "gradcheck.relu", t)
        x = _away_from_zero(rng, (2, 6, 6))
        u = rng.standard_normal(x.shape)

        def loss_fn(ps):
            return float(np.sum(u * relu_forward(ps[0])))

        worst = max(worst, finite_diff_check(loss_fn, [x], [relu_backward(x, u)], epsilon=EPSILON))
    return SuiteResult("relu", instances, worst, TOLERANCE)


def check_maxpool(seed: int, instances: int = 10) -> SuiteResult:
    worst = 0.0
    for t in range(instances):
        rng = stream(seed, "gradcheck.maxpool", t)
        while True:
            x = rng.uniform(-1.0, 1.0, size=(2, 8, 8))
            if _pool_gap_ok(x, 2, 2):
                break
        out, cache = maxpool2d_forward(x, 2, 2)
        u = rng.standard_normal(out.shape)

        def loss_fn(ps):
            return float(np.sum(u * maxpool2d_forward(ps[0], 2, 2)[0]))

        worst = max(worst, finite_diff_check(loss_fn, [x], [maxpool2d_backward(cache, u)], epsilon=EPSILON))
    return SuiteResult("maxpool", instances, worst, TOLERANCE)


def check_dropout(seed: int, instances: int = 10) -> SuiteResult:
    worst = 0.0
    for t in range(instances):
        rng = stream(seed, "gradcheck.dropout", t)
        x = rng.standard_normal((3, 5, 5))
        _, mask = dropout_forward(x, 0.5, rng)
        u = rng.standard_normal(x.shape)

        def loss_fn(ps):
            return float(np.sum(u * (ps[0] * mask)))

        worst = max(worst, finite_diff_check(loss_fn, [x], [dropout_backward(mask, u)], epsilon=EPSILON))
    return SuiteResult("dropout", instances, worst, TOLERANCE)


def check_aggregation(seed: int, kind: str, instances: int = 15) -> SuiteResult:
    rs = (1.0, 2.5, 5.0, 10.0)
    worst = 0.0
    for t in range(instances):
        rng = stream(seed, f"gradcheck.agg.{kind}", t)
        agg = Aggregator(kind=kind, r=rs[t % len(rs)])
        while True:
            planes = rng.uniform(-2.0, 2.0, size=(4, 6, 6))
            if kind != "max":
                break
            gaps = np.sort(planes.reshape(4, -1), axis=1)
            if np.all(gaps[:, -1] - gaps[:, -2] > 1e-3):
                break
        u = rng.standard_normal(4)

        def loss_fn(ps):
            return float(np.sum(u * aggregate_forward(ps[0], agg)))

        analytic = aggregate_backward(planes, agg, u)
        worst = max(worst, finite_diff_check(loss_fn, [planes], [analytic], epsilon=EPSILON))
    return SuiteResult(f"agg-{kind}", instances, worst, TOLERANCE)


def _micro_spec(num_classes: int, with_pool: bool) -> NetworkSpec:
    stem: tuple = (ConvLayer(3, 3, kernel=3),)
    if with_pool:
        stem = stem + (PoolLayer(2, 2),)
    stem = stem + (ConvLayer(3, 4, kernel=3),)
    head = (ConvLayer(4, 5, kernel=3), ConvLayer(5, num_classes, kernel=3, relu=False))
    return NetworkSpec(num_classes=num_classes, stem=stem, head=head, dropout_rate=0.0)


def _signature(cache) -> bytes:
    h = hashlib.blake2b(digest_size=16)
    for entry in cache:
        if entry[0] == "pool":
            h.update(entry[1].argmax.tobytes())
        else:
            pre = entry[4]
            if pre is not None:
                h.update((pre > 0).tobytes())
    return h.digest()


def check_end_to_end(seed: int, instances: int = 12, coords_per_tensor: int = 25) -> SuiteResult:
    """FD check of d(loss)/d(every parameter) through the whole pipeline
    (forward, aggregation, softmax NLL) on eval-mode micro networks."""
    worst = 0.0
    kinds = ("lse", "sum", "max", "lse")
    for t in range(instances):
        rng = stream(seed, "gradcheck.e2e", t)
        num_classes = int(rng.integers(2, 5))
        spec = _micro_spec(num_classes, with_pool=bool(t % 2))
        d, rf = spec.downsample, spec.receptive_field
        size = rf + d * int(rng.integers(2, 4))
        image = rng.standard_normal((3, size, size))
        label = int(rng.integers(0, num_classes))
        agg = Aggregator(kind=kinds[t % len(kinds)], r=4.0)
        params = build_network(spec, rng)

        _, grads = sample_loss_and_grads(image, label, params, spec, agg, mode="eval")
        base_sig = _signature(forward_full(image, params, spec, mode="eval")[1])

        def loss_and_sig(arrays):
            ps = [LayerParams(w, b) for w, b in zip(arrays[0::2], arrays[1::2])]
            planes, cache = forward_full(image, ps, spec, mode="eval")
            scores = aggregate_forward(planes, agg)
            return nll_loss(scores, label), _signature(cache)

        arrays = []
        analytic = []
        for p, (gw, gb) in zip(params, grads):
            arrays += [p.weights.copy(), p.bias.copy()]
            analytic += [gw, gb]
        for a, g in zip(arrays, analytic):
            flat, gflat = a.reshape(-1), g.reshape(-1)
            order = rng.permutation(flat.size)
            checked = 0
            for i in order:
                if checked >= coords_per_tensor:
                    break
                orig = flat[i]
                flat[i] = orig + EPSILON
                up, sig_up = loss_and_sig(arrays)
                flat[i] = orig - EPSILON
                down, sig_down = loss_and_sig(arrays)
                flat[i] = orig
                if sig_up != base_sig or sig_down != base_sig:
                    continue  # probe crossed a relu/pool decision boundary
                numeric = (up - down) / (2.0 * EPSILON)
                worst = max(worst, relative_error(gflat[i], numeric))
                checked += 1
    return SuiteResult("end-to-end", instances, worst, TOLERANCE)


def run_all(seed: int = 0) -> list[SuiteResult]:
    return [
        check_conv(seed),
        check_relu(seed),
        check_maxpool(seed),
        check_dropout(seed),
        check_aggregation(seed, "sum"),
        check_aggregation(seed, "max"),
        check_aggregation(seed, "lse"),
        check_end_to_end(seed),
    ]
