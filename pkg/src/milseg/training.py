"""The training loop shared by the command-line surface and the estimator.

Reproducibility contract: given (samples, config values, master seed) the
loop is bit-deterministic.  All randomness comes from named counter-based
streams keyed off the master seed — weight init, one shuffle stream per
epoch, and one jitter plus one dropout stream per sample occurrence (a
global counter), so results cannot depend on batch assembly order or
thread count.

The loop never looks at ground-truth masks: samples are reduced to
(image, label) on entry.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, NamedTuple, Sequence

import numpy as np

from .aggregation import Aggregator
from .network import NetworkSpec, OptimizerState, build_network, train_step
from .rng import STREAM_DATA, STREAM_DROPOUT, STREAM_INIT, STREAM_JITTER, stream
from .synthetic import JitterSpec, Sample, apply_jitter, center_crop, normalize_image
from .tensor_ops import OptimizerConfig


class LossRow(NamedTuple):
    """One loss-log line: 1-based step, cumulative examples after the step,
    the learning rate the step used, and the pre-update batch mean loss."""

    step: int
    examples_seen: int
    lr: float
    mean_loss: float


@dataclass
class TrainResult:
    params: list
    spec: NetworkSpec
    loss_log: list[LossRow] = field(default_factory=list)
    diverged_at: int | None = None  # step whose loss went non-finite, if any

    @property
    def ok(self) -> bool:
        return self.diverged_at is None


def prepare_input(sample: Sample, crop_size: int, jitter: JitterSpec | None,
                  jitter_rng: np.random.Generator | None) -> np.ndarray:
    """Augment (optional), center-crop, normalize; the network-ready tensor."""
    s = sample.without_mask()
    if jitter is not None:
        if jitter_rng is None:
            raise ValueError("jitter requested without an rng")
        s = apply_jitter(s, jitter, jitter_rng)
    s = center_crop(s, crop_size)
    return normalize_image(s.image)


def train_model(
    samples: Sequence[Sample],
    spec: NetworkSpec,
    agg: Aggregator,
    opt: OptimizerConfig,
    jitter: JitterSpec,
    batch_size: int,
    train_steps: int,
    seed: int,
    crop_size: int,
    on_step: Callable[[LossRow], None] | None = None,
) -> TrainResult:
    """Run the budgeted loop.  A non-finite batch loss aborts immediately and
    the result carries the parameters from before the failing update."""
    if len(samples) == 0:
        raise ValueError("no training samples")
    if batch_size <= 0:
        raise ValueError(f"batch_size must be positive, got {batch_size}")
    if train_steps < 0:
        raise ValueError(f"train_steps must be nonnegative, got {train_steps}")
    labels = [s.label for s in samples]
    for i, lab in enumerate(labels):
        if not 0 <= lab < spec.num_classes:
            raise ValueError(f"sample {i}: label {lab} outside [0, {spec.num_classes})")

    params = build_network(spec, stream(seed, STREAM_INIT))
    state = OptimizerState(config=opt)
    result = TrainResult(params=params, spec=spec)

    n = len(samples)
    epoch = 0
    order = stream(seed, STREAM_DATA, epoch).permutation(n)
    cursor = 0
    occurrence = 0

    for step in range(1, train_steps + 1):
        batch = []
        dropout_rngs = []
        for _ in range(batch_size):
            if cursor == n:
                epoch += 1
                order = stream(seed, STREAM_DATA, epoch).permutation(n)
                cursor = 0
            s = samples[order[cursor]]
            cursor += 1
            x = prepare_input(s, crop_size, jitter, stream(seed, STREAM_JITTER, occurrence))
            batch.append((x, s.label))
            dropout_rngs.append(stream(seed, STREAM_DROPOUT, occurrence))
            occurrence += 1
        lr_used = state.learning_rate
        new_params, mean_loss = train_step(batch, result.params, spec, agg, state, dropout_rngs)
        if not np.isfinite(mean_loss):
            result.diverged_at = step
            return result  # params stay at the last finite step
        result.params = new_params
        row = LossRow(step=step, examples_seen=state.examples_seen, lr=lr_used, mean_loss=float(mean_loss))
        result.loss_log.append(row)
        if on_step is not None:
            on_step(row)
    return result


def loss_log_csv(rows: Sequence[LossRow]) -> str:
    lines = ["step,examples_seen,lr,mean_loss"]
    lines += [f"{r.step},{r.examples_seen},{r.lr!r},{r.mean_loss!r}" for r in rows]
    return "\n".join(lines) + "\n"
