"""The segmentation network: a small trainable convolutional stem followed
by a four-layer head of 3x3 convolutions whose final layer emits one score
plane per class (background is class 0).

Training maximizes the image-level log-likelihood: the per-location score
planes are collapsed by an aggregator (see aggregation), the resulting
class scores pass through a softmax, and the negative log-likelihood of
the image label is minimized by stochastic gradient descent.  The final
layer carries no ReLU; dropout (inverted) acts only in train mode, on the
inputs of the layers flagged for it.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence, Union

import numpy as np

from .aggregation import Aggregator, aggregate_backward, aggregate_forward
from .tensor_ops import (
    LayerParams,
    OptimizerConfig,
    conv2d_backward,
    conv2d_forward,
    dropout_backward,
    dropout_forward,
    maxpool2d_backward,
    maxpool2d_forward,
    relu_backward,
    relu_forward,
    sgd_step,
)

CHECKPOINT_MAGIC = b"MILSEG01"


@dataclass(frozen=True)
class ConvLayer:
    """3x3 (or any square) valid convolution descriptor, stride 1."""

    in_channels: int
    out_channels: int
    kernel: int = 3
    relu: bool = True
    dropout: bool = False  # inverted dropout on this layer's input in train mode
    frozen: bool = False


@dataclass(frozen=True)
class PoolLayer:
    size: int = 2
    stride: int = 2


Layer = Union[ConvLayer, PoolLayer]


@dataclass(frozen=True)
class NetworkSpec:
    """Architecture description: stem layers, head conv layers, dropout rate,
    and the seed that fully determines initialization."""

    num_classes: int
    stem: tuple[Layer, ...]
    head: tuple[ConvLayer, ...]
    dropout_rate: float = 0.5
    seed: int = 0

    def __post_init__(self):
        if self.num_classes < 2:
            raise ValueError(f"need at least 2 classes (one shape class plus background), got {self.num_classes}")
        if not 0 <= self.dropout_rate < 1:
            raise ValueError(f"dropout_rate must be in [0, 1), got {self.dropout_rate}")
        convs = self.conv_layers
        if not convs:
            raise ValueError("network needs at least one convolutional layer")
        for prev, nxt in zip(convs, convs[1:]):
            if prev.out_channels != nxt.in_channels:
                raise ValueError(
                    f"channel chain mismatch: layer emitting {prev.out_channels} feeds layer expecting {nxt.in_channels}"
                )
        if not self.head:
            raise ValueError("head must contain at least one conv layer")
        if self.head[-1].out_channels != self.num_classes:
            raise ValueError(
                f"final head layer must output {self.num_classes} planes (one per class), got {self.head[-1].out_channels}"
            )
        if self.head[-1].relu:
            raise ValueError("final head layer must not apply ReLU (raw class scores)")

    @property
    def layers(self) -> tuple[Layer, ...]:
        return self.stem + self.head

    @property
    def conv_layers(self) -> tuple[ConvLayer, ...]:
        return tuple(l for l in self.layers if isinstance(l, ConvLayer))

    @property
    def downsample(self) -> int:
        """Output stride d: the product of all pooling strides."""
        d = 1
        for l in self.layers:
            if isinstance(l, PoolLayer):
                d *= l.stride
        return d

    @property
    def receptive_field(self) -> int:
        """Side length of the input patch feeding one output unit; also the
        minimum input size for a 1x1 output."""
        r, stride = 1, 1
        for l in self.layers:
            if isinstance(l, ConvLayer):
                r += (l.kernel - 1) * stride
            else:
                r += (l.size - 1) * stride
                stride *= l.stride
        return r

    @property
    def in_channels(self) -> int:
        return self.conv_layers[0].in_channels

    def output_size(self, h: int, w: int) -> tuple[int, int]:
        """Spatial output size for an h x w input; rejects undersized inputs."""
        r = self.receptive_field
        if h < r or w < r:
            raise ValueError(f"input {h}x{w} below the required minimum {r}x{r} (receptive field)")
        d = self.downsample
        return (h - r) // d + 1, (w - r) // d + 1


def default_spec(
    num_classes: int = 4,
    stem_channels: Sequence[int] = (32, 64, 64),
    head_channels: Sequence[int] = (64, 64, 32),
    dropout_rate: float = 0.5,
    frozen_stem_layers: int = 0,
    seed: int = 0,
) -> NetworkSpec:
    """Standard desk-scale architecture.

    Stem: three 3x3 convs with one 2x2 max-pool after the second conv
    (output stride d=2).  Head: four 3x3 convs ending in num_classes
    planes, dropout on every head-layer input, no ReLU on the last.
    """
    if len(stem_channels) != 3 or len(head_channels) != 3:
        raise ValueError(
            f"stem_channels and head_channels each take exactly three entries, "
            f"got {len(stem_channels)} and {len(head_channels)}"
        )
    c1, c2, c3 = stem_channels
    stem: tuple[Layer, ...] = (
        ConvLayer(3, c1, frozen=frozen_stem_layers >= 1),
        ConvLayer(c1, c2, frozen=frozen_stem_layers >= 2),
        PoolLayer(2, 2),
        ConvLayer(c2, c3, frozen=frozen_stem_layers >= 3),
    )
    h1, h2, h3 = head_channels
    head = (
        ConvLayer(c3, h1, dropout=True),
        ConvLayer(h1, h2, dropout=True),
        ConvLayer(h2, h3, dropout=True),
        ConvLayer(h3, num_classes, relu=False, dropout=True),
    )
    return NetworkSpec(num_classes, stem, head, dropout_rate, seed)


def build_network(spec: NetworkSpec, rng: np.random.Generator | None = None) -> list[LayerParams]:
    """Initialize parameters: weights uniform in [-1/sqrt(fan_in), +1/sqrt(fan_in)],
    biases zero, velocities zero; fully determined by spec.seed."""
    if rng is None:
        from .rng import STREAM_INIT, stream

        rng = stream(spec.seed, STREAM_INIT)
    params = []
    for layer in spec.conv_layers:
        fan_in = layer.in_channels * layer.kernel * layer.kernel
        bound = 1.0 / np.sqrt(fan_in)
        w = rng.uniform(-bound, bound, size=(layer.out_channels, layer.in_channels, layer.kernel, layer.kernel))
        b = np.zeros(layer.out_channels)
        params.append(LayerParams(weights=w, bias=b, frozen=layer.frozen))
    return params


def forward_full(
    image: np.ndarray,
    params: Sequence[LayerParams],
    spec: NetworkSpec,
    mode: str = "eval",
    dropout_rng: np.random.Generator | None = None,
):
    """Run the network and keep per-layer intermediates for backprop.

    Returns (score planes (num_classes, ho, wo), cache).  Dropout fires
    only in train mode and only on layers flagged for it.
    """
    if mode not in ("train", "eval"):
        raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 3 or image.shape[0] != spec.in_channels:
        raise ValueError(f"expected ({spec.in_channels}, h, w) input, got {image.shape}")
    spec.output_size(image.shape[1], image.shape[2])  # raises with the required minimum
    use_dropout = mode == "train" and spec.dropout_rate > 0.0
    if use_dropout and any(l.dropout for l in spec.conv_layers) and dropout_rng is None:
        raise ValueError("train-mode forward with dropout needs an rng stream")

    x = image
    cache = []
    conv_idx = 0
    for layer in spec.layers:
        if isinstance(layer, PoolLayer):
            x, pool_cache = maxpool2d_forward(x, layer.size, layer.stride)
            cache.append(("pool", pool_cache))
            continue
        mask = None
        if use_dropout and layer.dropout:
            x, mask = dropout_forward(x, spec.dropout_rate, dropout_rng)
        pre = conv2d_forward(x, params[conv_idx], stride=1)
        cache.append(("conv", conv_idx, x, mask, pre if layer.relu else None))
        x = relu_forward(pre) if layer.relu else pre
        conv_idx += 1
    return x, cache


def forward(
    image: np.ndarray,
    params: Sequence[LayerParams],
    spec: NetworkSpec,
    mode: str = "eval",
    dropout_rng: np.random.Generator | None = None,
) -> np.ndarray:
    """Score planes (num_classes, ho, wo) for one image."""
    scores, _ = forward_full(image, params, spec, mode, dropout_rng)
    return scores


def backward_from_scores(
    grad_scores: np.ndarray, cache, params: Sequence[LayerParams], spec: NetworkSpec
) -> list[tuple[np.ndarray, np.ndarray]]:
    """Backpropagate a gradient w.r.t. the score planes down through the
    cached forward pass; returns per-conv-layer (grad_weights, grad_bias)."""
    grads: list = [None] * len(params)
    g = grad_scores
    for entry in reversed(cache):
        if entry[0] == "pool":
            g = maxpool2d_backward(entry[1], g)
            continue
        _, conv_idx, conv_in, mask, pre = entry
        if pre is not None:
            g = relu_backward(pre, g)
        g, gw, gb = conv2d_backward(conv_in, params[conv_idx], g, stride=1)
        if mask is not None:
            g = dropout_backward(mask, g)
        grads[conv_idx] = (gw, gb)
    return grads


def class_posteriors(scores: np.ndarray) -> np.ndarray:
    """Softmax over the image-level class scores (all classes, background included)."""
    scores = np.asarray(scores, dtype=np.float64)
    e = np.exp(scores - scores.max())
    return e / e.sum()


def nll_loss(scores: np.ndarray, k_star: int) -> float:
    """Negative log-likelihood of class k_star: log sum_c e^{s_c} - s_{k*} >= 0."""
    scores = np.asarray(scores, dtype=np.float64)
    if not 0 <= k_star < scores.shape[0]:
        raise ValueError(f"class index {k_star} out of range for {scores.shape[0]} classes")
    m = scores.max()
    return float(m + np.log(np.exp(scores - m).sum()) - scores[k_star])


def nll_gradient(scores: np.ndarray, k_star: int) -> np.ndarray:
    """d(nll_loss)/d(scores) = softmax(scores) - onehot(k_star)."""
    g = class_posteriors(scores)
    g[k_star] -= 1.0
    return g


def sample_loss_and_grads(
    image: np.ndarray,
    label: int,
    params: Sequence[LayerParams],
    spec: NetworkSpec,
    agg: Aggregator,
    dropout_rng: np.random.Generator | None = None,
    mode: str = "train",
):
    """Full-pipeline loss and parameter gradients for one (image, label) pair:
    forward -> aggregate -> softmax NLL -> backward through everything."""
    planes, cache = forward_full(image, params, spec, mode, dropout_rng)
    scores = aggregate_forward(planes, agg)
    loss = nll_loss(scores, label)
    grad_planes = aggregate_backward(planes, agg, nll_gradient(scores, label))
    grads = backward_from_scores(grad_planes, cache, params, spec)
    return loss, grads


@dataclass
class OptimizerState:
    """Mutable single-owner training state: config plus the example counter
    that drives the learning-rate schedule."""

    config: OptimizerConfig = field(default_factory=OptimizerConfig)
    examples_seen: int = 0

    @property
    def learning_rate(self) -> float:
        return self.config.effective_rate(self.examples_seen)


def train_step(
    batch: Sequence[tuple[np.ndarray, int]],
    params: Sequence[LayerParams],
    spec: NetworkSpec,
    agg: Aggregator,
    state: OptimizerState,
    dropout_rngs: Sequence[np.random.Generator] | None = None,
) -> tuple[list[LayerParams], float]:
    """One SGD update from the mean gradient of a batch of (image, label)
    pairs.  Returns (updated params, pre-update mean loss); advances the
    learning-rate schedule by len(batch) examples.  Gradients are reduced
    in sample-index order for bit reproducibility."""
    if len(batch) == 0:
        raise ValueError("empty batch")
    shape0 = np.asarray(batch[0][0]).shape
    total: list | None = None
    losses = []
    for i, (image, label) in enumerate(batch):
        if np.asarray(image).shape != shape0:
            raise ValueError(f"batch images must share one size, got {np.asarray(image).shape} vs {shape0}")
        rng = dropout_rngs[i] if dropout_rngs is not None else None
        loss, grads = sample_loss_and_grads(image, int(label), params, spec, agg, rng)
        losses.append(loss)
        if total is None:
            total = [[gw, gb] for gw, gb in grads]
        else:
            for t, (gw, gb) in zip(total, grads):
                t[0] += gw
                t[1] += gb
    mean_grads = [(gw / len(batch), gb / len(batch)) for gw, gb in total]
    lr = state.learning_rate
    new_params = sgd_step(params, mean_grads, state.config, lr=lr)
    state.examples_seen += len(batch)
    return new_params, float(np.mean(losses))


def image_scores(
    image: np.ndarray, params: Sequence[LayerParams], spec: NetworkSpec, agg: Aggregator
) -> np.ndarray:
    """Image-level class scores: eval forward plus aggregation."""
    return aggregate_forward(forward(image, params, spec, mode="eval"), agg)


def classify(image: np.ndarray, params: Sequence[LayerParams], spec: NetworkSpec, agg: Aggregator) -> int:
    """Image-level class prediction (argmax of image_scores, first on ties)."""
    return int(np.argmax(image_scores(image, params, spec, agg)))


def _pack_layer(layer: Layer) -> bytes:
    if isinstance(layer, ConvLayer):
        return struct.pack(
            "<7I", 1, layer.in_channels, layer.out_channels, layer.kernel,
            int(layer.relu), int(layer.dropout), int(layer.frozen),
        )
    return struct.pack("<3I", 2, layer.size, layer.stride)


def save_checkpoint(path: str | Path, spec: NetworkSpec, params: Sequence[LayerParams]) -> None:
    """Write the architecture table and parameter tensors (little-endian,
    raw float64, layer order); round-trips bit-exactly."""
    convs = spec.conv_layers
    if len(params) != len(convs):
        raise ValueError(f"{len(params)} parameter sets for {len(convs)} conv layers")
    blob = bytearray()
    blob += CHECKPOINT_MAGIC
    blob += struct.pack("<I", spec.num_classes)
    blob += struct.pack("<d", spec.dropout_rate)
    blob += struct.pack("<Q", spec.seed & (2**64 - 1))
    blob += struct.pack("<2I", len(spec.stem), len(spec.head))
    for layer in spec.layers:
        blob += _pack_layer(layer)
    for layer, p in zip(convs, params):
        expect = (layer.out_channels, layer.in_channels, layer.kernel, layer.kernel)
        if p.weights.shape != expect:
            raise ValueError(f"weights {p.weights.shape} do not match layer table entry {expect}")
        blob += np.ascontiguousarray(p.weights, dtype="<f8").tobytes()
        blob += np.ascontiguousarray(p.bias, dtype="<f8").tobytes()
    Path(path).write_bytes(bytes(blob))


def load_checkpoint(path: str | Path) -> tuple[NetworkSpec, list[LayerParams]]:
    data = Path(path).read_bytes()
    if data[:8] != CHECKPOINT_MAGIC:
        raise ValueError(f"{path}: not a checkpoint (bad magic {data[:8]!r})")
    off = 8
    (num_classes,) = struct.unpack_from("<I", data, off); off += 4
    (dropout_rate,) = struct.unpack_from("<d", data, off); off += 8
    (seed,) = struct.unpack_from("<Q", data, off); off += 8
    n_stem, n_head = struct.unpack_from("<2I", data, off); off += 8
    layers: list[Layer] = []
    for _ in range(n_stem + n_head):
        (kind,) = struct.unpack_from("<I", data, off)
        if kind == 1:
            _, ic, oc, k, relu, dropout, frozen = struct.unpack_from("<7I", data, off)
            off += 28
            layers.append(ConvLayer(ic, oc, k, bool(relu), bool(dropout), bool(frozen)))
        elif kind == 2:
            _, size, stride = struct.unpack_from("<3I", data, off)
            off += 12
            layers.append(PoolLayer(size, stride))
        else:
            raise ValueError(f"{path}: unknown layer kind {kind}")
    head = tuple(layers[n_stem:])
    if not all(isinstance(l, ConvLayer) for l in head):
        raise ValueError(f"{path}: head table contains non-conv layers")
    spec = NetworkSpec(num_classes, tuple(layers[:n_stem]), head, dropout_rate, seed)
    params = []
    for layer in spec.conv_layers:
        nw = layer.out_channels * layer.in_channels * layer.kernel * layer.kernel
        w = np.frombuffer(data, dtype="<f8", count=nw, offset=off).reshape(
            layer.out_channels, layer.in_channels, layer.kernel, layer.kernel
        )
        off += nw * 8
        b = np.frombuffer(data, dtype="<f8", count=layer.out_channels, offset=off)
        off += layer.out_channels * 8
        params.append(LayerParams(weights=w.copy(), bias=b.copy(), frozen=layer.frozen))
    if off != len(data):
        raise ValueError(f"{path}: {len(data) - off} trailing bytes after parameters")
    return spec, params
