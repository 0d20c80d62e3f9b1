"""Analytic cost accounting and runtime measurement.

Counting conventions, applied uniformly:

* parameters: conv ``out*in*k + out``; batch-norm ``2*out`` (affine pair;
  running statistics are buffers, not parameters); linear ``out*in + out``;
  bidirectional LSTM ``2 * 4 * (hidden*(in+hidden) + hidden)`` (one bias
  vector per direction).
* FLOPs at inference, one window: 2 per multiply-accumulate, so conv
  ``2*T*out*in*k``, linear ``2*out*in``, LSTM ``2*4*hidden*(in+hidden)``
  per timestep per direction (recurrence matmuls only; bias adds and gate
  point-wise ops uncounted); explicit activation and normalization layers
  cost 1 FLOP per element.

These formulas are deliberately independent of the tensor library; a test
cross-checks the parameter total against the live model's tensor count.
"""

from __future__ import annotations

import hashlib
import time
from dataclasses import dataclass

import numpy as np
import torch
from torch import nn

from .exceptions import ConfigError
from .models import (
    EncoderSpec,
    ModelSpec,
    VARIANT_CONTRALIGHT,
    VARIANT_INERTIAL,
    VARIANT_LIGHT,
    VARIANT_MULTILIGHT,
)

GRAPH_INFERENCE = "inference"
GRAPH_TRAINING = "training"
SUPPORTED_GRAPHS = (GRAPH_INFERENCE, GRAPH_TRAINING)


def conv_params(out_channels: int, in_channels: int, kernel: int) -> int:
    return out_channels * in_channels * kernel + out_channels


def norm_params(channels: int) -> int:
    return 2 * channels


def linear_params(out_features: int, in_features: int) -> int:
    return out_features * in_features + out_features


def bilstm_params(hidden: int, in_features: int) -> int:
    return 2 * 4 * (hidden * (in_features + hidden) + hidden)


def encoder_params(spec: EncoderSpec) -> int:
    total = 0
    in_ch = spec.in_channels
    for _ in range(spec.n_conv_blocks):
        total += conv_params(spec.conv_channels, in_ch, spec.conv_kernel)
        total += norm_params(spec.conv_channels)
        in_ch = spec.conv_channels
    total += bilstm_params(spec.lstm_hidden, spec.conv_channels)
    total += linear_params(spec.embed_dim, 2 * spec.lstm_hidden)
    return total


def head_params(spec: ModelSpec) -> int:
    return (linear_params(spec.classifier_hidden, spec.classifier_in)
            + linear_params(spec.num_classes, spec.classifier_hidden))


def count_params(spec: ModelSpec, graph: str = GRAPH_INFERENCE) -> int:
    """Total learnable parameters of a variant's chosen graph.

    ContraLight drops its ALS encoder at inference, so its two graphs
    differ; every other variant deploys exactly what it trains.
    """
    if graph not in (GRAPH_INFERENCE, GRAPH_TRAINING):
        raise ConfigError(f"unknown graph {graph!r}")
    total = head_params(spec)
    use_als = spec.als_encoder is not None
    if spec.variant == VARIANT_CONTRALIGHT and graph == GRAPH_INFERENCE:
        use_als = False
    if use_als:
        total += encoder_params(spec.als_encoder)
    if spec.imu_encoder is not None:
        total += encoder_params(spec.imu_encoder)
    return total


def conv_flops(steps: int, out_channels: int, in_channels: int,
               kernel: int) -> int:
    return 2 * steps * out_channels * in_channels * kernel


def linear_flops(out_features: int, in_features: int) -> int:
    return 2 * out_features * in_features


def bilstm_flops(steps: int, hidden: int, in_features: int) -> int:
    return steps * 2 * (2 * 4 * hidden * (in_features + hidden))


def encoder_flops(spec: EncoderSpec, steps: int) -> int:
    total = 0
    in_ch = spec.in_channels
    for _ in range(spec.n_conv_blocks):
        total += conv_flops(steps, spec.conv_channels, in_ch, spec.conv_kernel)
        total += steps * spec.conv_channels      # batch-norm
        total += steps * spec.conv_channels      # ReLU
        in_ch = spec.conv_channels
    total += bilstm_flops(steps, spec.lstm_hidden, spec.conv_channels)
    total += linear_flops(spec.embed_dim, 2 * spec.lstm_hidden)
    return total


def head_flops(spec: ModelSpec) -> int:
    return (linear_flops(spec.classifier_hidden, spec.classifier_in)
            + spec.classifier_hidden                       # ReLU
            + linear_flops(spec.num_classes, spec.classifier_hidden)
            + spec.num_classes)                            # softmax


def count_flops(spec: ModelSpec, steps: int | None = None,
                graph: str = GRAPH_INFERENCE) -> int:
    """Inference FLOPs for one window of ``steps`` samples (default: the
    spec's window length)."""
    if graph not in SUPPORTED_GRAPHS:
        raise ConfigError(f"unknown graph {graph!r}")
    steps = spec.window_len if steps is None else int(steps)
    if steps < 1:
        raise ConfigError("steps must be positive")
    total = head_flops(spec)
    use_als = spec.als_encoder is not None
    if spec.variant == VARIANT_CONTRALIGHT and graph == GRAPH_INFERENCE:
        use_als = False
    if use_als:
        total += encoder_flops(spec.als_encoder, steps)
    if spec.imu_encoder is not None:
        total += encoder_flops(spec.imu_encoder, steps)
    return total


def model_param_total(model: nn.Module) -> int:
    """Sum of elements over the model's named parameter tensors."""
    return sum(p.numel() for _, p in model.named_parameters())


@dataclass(frozen=True)
class LatencyStats:
    """Single-window inference timing over repeated passes."""

    median_ms: float
    p95_ms: float
    std_ms: float
    n_passes: int
    warmup: int

    def to_dict(self) -> dict:
        return {"median_ms": self.median_ms, "p95_ms": self.p95_ms,
                "std_ms": self.std_ms, "n_passes": self.n_passes,
                "warmup": self.warmup}


def measure_latency(fn, n_passes: int = 1000,
                    warmup: int = 50) -> LatencyStats:
    """Median/p95/std wall time of ``fn()`` after a warmup, in ms."""
    if n_passes < 1 or warmup < 0:
        raise ConfigError("n_passes must be >= 1 and warmup >= 0")
    for _ in range(warmup):
        fn()
    times = np.empty(n_passes)
    for i in range(n_passes):
        t0 = time.perf_counter()
        fn()
        times[i] = time.perf_counter() - t0
    times *= 1e3
    return LatencyStats(median_ms=float(np.median(times)),
                        p95_ms=float(np.percentile(times, 95)),
                        std_ms=float(times.std()),
                        n_passes=n_passes, warmup=warmup)


def state_hash(model: nn.Module) -> str:
    """Digest of every named state tensor (parameters and buffers)."""
    digest = hashlib.sha256()
    state = model.state_dict()
    for name in sorted(state):
        tensor = state[name].detach().cpu().contiguous()
        digest.update(name.encode())
        digest.update(str(tensor.dtype).encode())
        digest.update(str(tuple(tensor.shape)).encode())
        digest.update(tensor.numpy().tobytes())
    return digest.hexdigest()


def trace_touched_modules(model: nn.Module, fn) -> set:
    """Names of submodules whose forward ran while ``fn()`` executed."""
    touched: set[str] = set()
    handles = []
    for name, module in model.named_modules():
        if not name:
            continue

        def _hook(mod, args, out, _name=name):
            touched.add(_name)

        handles.append(module.register_forward_hook(_hook))
    try:
        fn()
    finally:
        for handle in handles:
            handle.remove()
    return touched
