"""Dense float64 layer operations with explicit forward/backward pairs.

All tensors are plain numpy float64 arrays; images and activations use the
channels-first layout (C, H, W).  Every backward function computes exact
analytic gradients of its forward partner and is verified against central
finite differences (see finite_diff_check and the gradcheck suites).
Convolutions are valid (no implicit padding); any padding is done by the
caller.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable, NamedTuple, Sequence

import numpy as np


@dataclass(frozen=True)
class LayerParams:
    """One convolutional layer's learnable state: weights (O, C, kh, kw),
    per-output-channel bias (O,), and the matching momentum buffers."""

    weights: np.ndarray
    bias: np.ndarray
    vel_weights: np.ndarray = field(default=None)  # type: ignore[assignment]
    vel_bias: np.ndarray = field(default=None)  # type: ignore[assignment]
    frozen: bool = False

    def __post_init__(self):
        if self.vel_weights is None:
            object.__setattr__(self, "vel_weights", np.zeros_like(self.weights))
        if self.vel_bias is None:
            object.__setattr__(self, "vel_bias", np.zeros_like(self.bias))
        if self.vel_weights.shape != self.weights.shape or self.vel_bias.shape != self.bias.shape:
            raise ValueError("velocity shapes must mirror weight/bias shapes")


@dataclass(frozen=True)
class OptimizerConfig:
    """SGD with momentum, weight decay, and stepwise learning-rate decay.

    The effective rate after n completed decay intervals (measured in
    training examples seen) is learning_rate * decay_factor**n.
    """

    learning_rate: float = 0.001
    momentum: float = 0.9
    weight_decay: float = 0.00005
    decay_factor: float = 0.8
    decay_interval: int = 50_000

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError(f"learning_rate must be positive, got {self.learning_rate}")
        if not 0 <= self.momentum < 1:
            raise ValueError(f"momentum must be in [0, 1), got {self.momentum}")
        if self.weight_decay < 0:
            raise ValueError(f"weight_decay must be nonnegative, got {self.weight_decay}")
        if not 0 < self.decay_factor <= 1:
            raise ValueError(f"decay_factor must be in (0, 1], got {self.decay_factor}")
        if self.decay_interval <= 0:
            raise ValueError(f"decay_interval must be positive, got {self.decay_interval}")

    def effective_rate(self, examples_seen: int) -> float:
        return self.learning_rate * self.decay_factor ** (examples_seen // self.decay_interval)


def _conv_windows(x: np.ndarray, kh: int, kw: int, stride: int):
    """View of x as (C, Ho, Wo, kh, kw) sliding windows (no copy)."""
    c, h, w = x.shape
    ho = (h - kh) // stride + 1
    wo = (w - kw) // stride + 1
    s0, s1, s2 = x.strides
    shape = (c, ho, wo, kh, kw)
    strides = (s0, stride * s1, stride * s2, s1, s2)
    return np.lib.stride_tricks.as_strided(x, shape, strides), ho, wo


def conv2d_forward(x: np.ndarray, params: LayerParams, stride: int = 1) -> np.ndarray:
    """Valid cross-correlation of (C, H, W) with (O, C, kh, kw) kernels.

    Output (O, H', W') with H' = (H - kh)//stride + 1; each element is the
    windowed dot product plus the output channel's bias.
    """
    w = params.weights
    if x.ndim != 3 or w.ndim != 4:
        raise ValueError(f"conv2d expects (C,H,W) input and (O,C,kh,kw) kernel, got {x.shape} and {w.shape}")
    if x.shape[0] != w.shape[1]:
        raise ValueError(f"channel mismatch: input has {x.shape[0]} channels, kernel expects {w.shape[1]}")
    if stride <= 0:
        raise ValueError(f"stride must be positive, got {stride}")
    kh, kw = w.shape[2], w.shape[3]
    if x.shape[1] < kh or x.shape[2] < kw:
        raise ValueError(
            f"input {x.shape[1]}x{x.shape[2]} smaller than kernel {kh}x{kw} (valid convolution needs at least the kernel size)"
        )
    windows, _, _ = _conv_windows(x, kh, kw, stride)
    out = np.tensordot(windows, w, axes=([0, 3, 4], [1, 2, 3]))  # (Ho, Wo, O)
    return np.ascontiguousarray(out.transpose(2, 0, 1)) + params.bias[:, None, None]


def conv2d_backward(
    x: np.ndarray, params: LayerParams, grad_out: np.ndarray, stride: int = 1
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Gradients of conv2d_forward w.r.t. input, weights, and bias."""
    w = params.weights
    o, _, kh, kw = w.shape
    windows, ho, wo = _conv_windows(x, kh, kw, stride)
    if grad_out.shape != (o, ho, wo):
        raise ValueError(f"grad_out shape {grad_out.shape} does not match forward output {(o, ho, wo)}")
    grad_bias = grad_out.sum(axis=(1, 2))
    # (C, Ho, Wo, kh, kw) x (O, Ho, Wo) -> (C, kh, kw, O)
    grad_w = np.tensordot(windows, grad_out, axes=([1, 2], [1, 2]))
    grad_weights = np.ascontiguousarray(grad_w.transpose(3, 0, 1, 2))
    grad_x = np.zeros_like(x)
    for i in range(kh):
        for j in range(kw):
            # every output cell pulls x[c, y*stride+i, x*stride+j] through w[:, c, i, j]
            contrib = np.tensordot(w[:, :, i, j], grad_out, axes=([0], [0]))  # (C, Ho, Wo)
            grad_x[:, i : i + stride * ho : stride, j : j + stride * wo : stride] += contrib
    return grad_x, grad_weights, grad_bias


def relu_forward(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0)


def relu_backward(x: np.ndarray, grad_out: np.ndarray) -> np.ndarray:
    """Pass gradient where x > 0; kink at exactly 0 takes the zero branch."""
    return np.where(x > 0.0, grad_out, 0.0)


class PoolCache(NamedTuple):
    """Winner bookkeeping from maxpool2d_forward, consumed by the backward pass."""

    argmax: np.ndarray  # (C, Ho, Wo) flat index of the winner inside its k*k window
    input_shape: tuple[int, int, int]
    k: int
    stride: int


def maxpool2d_forward(x: np.ndarray, k: int, stride: int) -> tuple[np.ndarray, PoolCache]:
    """Window maxima over (C, H, W); ties go to the first cell in row-major scan order."""
    if k <= 0 or stride <= 0:
        raise ValueError(f"pool size and stride must be positive, got k={k} stride={stride}")
    if x.ndim != 3 or x.shape[1] < k or x.shape[2] < k:
        raise ValueError(f"input {x.shape} too small for {k}x{k} pooling")
    windows, ho, wo = _conv_windows(x, k, k, stride)
    flat = windows.reshape(x.shape[0], ho, wo, k * k)
    argmax = np.argmax(flat, axis=3)  # np.argmax returns the first maximum
    out = np.take_along_axis(flat, argmax[..., None], axis=3)[..., 0]
    return np.ascontiguousarray(out), PoolCache(argmax, x.shape, k, stride)


def maxpool2d_backward(cache: PoolCache, grad_out: np.ndarray) -> np.ndarray:
    """Route each upstream gradient to its recorded winner cell."""
    c, ho, wo = cache.argmax.shape
    if grad_out.shape != (c, ho, wo):
        raise ValueError(f"grad_out shape {grad_out.shape} does not match pooled output {(c, ho, wo)}")
    grad_x = np.zeros(cache.input_shape)
    ci, oy, ox = np.indices((c, ho, wo))
    y = oy * cache.stride + cache.argmax // cache.k
    x = ox * cache.stride + cache.argmax % cache.k
    np.add.at(grad_x, (ci, y, x), grad_out)
    return grad_x


def dropout_forward(
    x: np.ndarray, rate: float, rng: np.random.Generator
) -> tuple[np.ndarray, np.ndarray]:
    """Inverted dropout: survivors are scaled by 1/(1-rate) at train time,
    so the inference path needs no rescaling.  Returns (output, mask) where
    mask already carries the survivor scaling."""
    if not 0 <= rate < 1:
        raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
    keep = rng.random(x.shape) >= rate
    mask = keep / (1.0 - rate)
    return x * mask, mask


def dropout_backward(mask: np.ndarray, grad_out: np.ndarray) -> np.ndarray:
    return grad_out * mask


def sgd_step(
    params: Sequence[LayerParams],
    grads: Sequence[tuple[np.ndarray, np.ndarray]],
    cfg: OptimizerConfig,
    lr: float | None = None,
) -> list[LayerParams]:
    """One momentum-SGD update; returns new parameter values.

    v <- momentum*v - lr*(g + weight_decay*w), then w <- w + v.  Weight
    decay applies to weights only, never to biases.  Frozen layers pass
    through unchanged.
    """
    if len(params) != len(grads):
        raise ValueError(f"got {len(grads)} gradients for {len(params)} layers")
    rate = cfg.learning_rate if lr is None else lr
    updated = []
    for p, (gw, gb) in zip(params, grads):
        if p.frozen:
            updated.append(p)
            continue
        if gw.shape != p.weights.shape or gb.shape != p.bias.shape:
            raise ValueError(f"gradient shapes {gw.shape}/{gb.shape} do not mirror params {p.weights.shape}/{p.bias.shape}")
        vw = cfg.momentum * p.vel_weights - rate * (gw + cfg.weight_decay * p.weights)
        vb = cfg.momentum * p.vel_bias - rate * gb
        updated.append(replace(p, weights=p.weights + vw, bias=p.bias + vb, vel_weights=vw, vel_bias=vb))
    return updated


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-3) -> float:
    """Worst elementwise |a - n| / max(|a|, |n|, floor).

    The floor keeps finite-difference roundoff on near-zero coordinates
    from registering as disagreement while leaving genuine gradient bugs
    (which perturb coordinates at the gradient's own scale) visible.
    """
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
    return float(np.max(np.abs(a - n) / denom)) if a.size else 0.0


def finite_diff_check(
    loss_fn: Callable[[list[np.ndarray]], float],
    params: Sequence[np.ndarray],
    analytic_grads: Sequence[np.ndarray],
    epsilon: float = 1e-5,
    max_coords_per_tensor: int | None = None,
    rng: np.random.Generator | None = None,
) -> float:
    """Compare analytic gradients against central finite differences.

    loss_fn must be deterministic in its parameter list (dropout disabled
    or masks frozen).  Returns the worst relative error over all checked
    coordinates; optionally subsamples coordinates of large tensors.
    """
    work = [np.array(p, dtype=np.float64) for p in params]
    worst = 0.0
    for t, grad in enumerate(analytic_grads):
        n = work[t].size
        if max_coords_per_tensor is not None and n > max_coords_per_tensor:
            if rng is None:
                rng = np.random.default_rng(0)
            coords = rng.choice(n, size=max_coords_per_tensor, replace=False)
        else:
            coords = range(n)
        flat = work[t].reshape(-1)
        gflat = np.asarray(grad).reshape(-1)
        for i in coords:
            orig = flat[i]
            flat[i] = orig + epsilon
            up = loss_fn(work)
            flat[i] = orig - epsilon
            down = loss_fn(work)
            flat[i] = orig
            numeric = (up - down) / (2.0 * epsilon)
            worst = max(worst, relative_error(gflat[i], numeric))
    return worst
