"""Window encoders and the four classifier variants.

Every variant shares one encoder design per modality: three Conv1d blocks
(64 filters, kernel 5, same padding, each followed by batch-norm, dropout
and ReLU), a bidirectional LSTM with 128 units per direction whose final
states are projected to a 256-d embedding, and a two-layer softmax head.

The recurrent layer is implemented here rather than with nn.LSTM because
it carries a single bias vector per direction; the stock module keeps two
and would change the parameter inventory.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field, asdict

import torch
from torch import nn

from .exceptions import ConfigError, InputError, ShapeError

VARIANT_LIGHT = "light"
VARIANT_INERTIAL = "inertial"
VARIANT_MULTILIGHT = "multilight"
VARIANT_CONTRALIGHT = "contralight"
VARIANTS = (VARIANT_LIGHT, VARIANT_INERTIAL, VARIANT_MULTILIGHT,
            VARIANT_CONTRALIGHT)

ALS_CHANNELS = 1
IMU_CHANNELS = 3
NUM_CLASSES = 10
WINDOW_LEN = 60
CONV_BLOCKS = 3


@dataclass(frozen=True)
class EncoderSpec:
    """Sizes of one modality encoder."""

    in_channels: int
    conv_channels: int = 64
    conv_kernel: int = 5
    n_conv_blocks: int = CONV_BLOCKS
    dropout: float = 0.2
    lstm_hidden: int = 128
    embed_dim: int = 256

    def __post_init__(self):
        if self.in_channels < 1 or self.conv_channels < 1:
            raise ConfigError("channel counts must be positive")
        if self.conv_kernel < 1 or self.conv_kernel % 2 == 0:
            raise ConfigError("conv kernel must be odd and positive")
        if self.n_conv_blocks != CONV_BLOCKS:
            raise ConfigError(f"encoder uses exactly {CONV_BLOCKS} conv blocks")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError("dropout must lie in [0, 1)")
        if self.lstm_hidden < 1 or self.embed_dim < 1:
            raise ConfigError("hidden sizes must be positive")


@dataclass(frozen=True)
class ModelSpec:
    """Full architecture description of one variant."""

    variant: str
    window_len: int = WINDOW_LEN
    num_classes: int = NUM_CLASSES
    als_encoder: EncoderSpec | None = None
    imu_encoder: EncoderSpec | None = None
    classifier_hidden: int = 128
    margin: float = 1.0

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ConfigError(f"variant must be one of {VARIANTS}")
        if self.window_len < 1 or self.num_classes < 2:
            raise ConfigError("window_len and num_classes out of range")
        if self.classifier_hidden < 1:
            raise ConfigError("classifier_hidden must be positive")
        if self.margin <= 0:
            raise ConfigError("margin must be strictly positive")
        needs_als = self.variant in (VARIANT_LIGHT, VARIANT_MULTILIGHT,
                                     VARIANT_CONTRALIGHT)
        needs_imu = self.variant in (VARIANT_INERTIAL, VARIANT_MULTILIGHT,
                                     VARIANT_CONTRALIGHT)
        if needs_als != (self.als_encoder is not None):
            raise ConfigError(f"{self.variant} ALS encoder mis-specified")
        if needs_imu != (self.imu_encoder is not None):
            raise ConfigError(f"{self.variant} IMU encoder mis-specified")
        if (self.als_encoder is not None and self.imu_encoder is not None
                and self.als_encoder.embed_dim != self.imu_encoder.embed_dim):
            raise ConfigError("encoder embedding widths must match")

    @property
    def embed_dim(self) -> int:
        enc = self.als_encoder or self.imu_encoder
        return enc.embed_dim

    @property
    def classifier_in(self) -> int:
        if self.variant == VARIANT_MULTILIGHT:
            return 2 * self.embed_dim
        return self.embed_dim

    def to_dict(self) -> dict:
        payload = asdict(self)
        return payload

    @classmethod
    def from_dict(cls, payload: dict) -> "ModelSpec":
        payload = dict(payload)
        for key in ("als_encoder", "imu_encoder"):
            if payload.get(key) is not None:
                payload[key] = EncoderSpec(**payload[key])
        return cls(**payload)


def spec_hash(spec: ModelSpec) -> str:
    """Stable digest of a spec's canonical JSON form."""
    text = json.dumps(spec.to_dict(), sort_keys=True)
    return hashlib.sha256(text.encode()).hexdigest()


def default_model_spec(variant: str, **overrides) -> ModelSpec:
    """The published architecture for a variant, with optional size tweaks.

    ``overrides`` may adjust EncoderSpec fields (conv_channels, lstm_hidden,
    embed_dim, dropout, conv_kernel) and ModelSpec fields (window_len,
    num_classes, classifier_hidden, margin).
    """
    enc_keys = {"conv_channels", "conv_kernel", "dropout", "lstm_hidden",
                "embed_dim"}
    enc_over = {k: v for k, v in overrides.items() if k in enc_keys}
    top_over = {k: v for k, v in overrides.items() if k not in enc_keys}
    unknown = set(top_over) - {"window_len", "num_classes",
                               "classifier_hidden", "margin"}
    if unknown:
        raise ConfigError(f"unknown spec overrides {sorted(unknown)}")
    als = EncoderSpec(in_channels=ALS_CHANNELS, **enc_over)
    imu = EncoderSpec(in_channels=IMU_CHANNELS, **enc_over)
    if variant == VARIANT_LIGHT:
        return ModelSpec(variant=variant, als_encoder=als, **top_over)
    if variant == VARIANT_INERTIAL:
        return ModelSpec(variant=variant, imu_encoder=imu, **top_over)
    if variant in (VARIANT_MULTILIGHT, VARIANT_CONTRALIGHT):
        return ModelSpec(variant=variant, als_encoder=als, imu_encoder=imu,
                         **top_over)
    raise ConfigError(f"variant must be one of {VARIANTS}")


class ConvBlock(nn.Module):
    def __init__(self, in_channels: int, out_channels: int, kernel: int,
                 dropout: float):
        super().__init__()
        self.conv = nn.Conv1d(in_channels, out_channels, kernel,
                              padding=kernel // 2)
        self.norm = nn.BatchNorm1d(out_channels)
        self.drop = nn.Dropout(dropout)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return torch.relu(self.drop(self.norm(self.conv(x))))


class _LstmFinalState(torch.autograd.Function):
    """Recurrence over pre-projected gate inputs, returning the last state.

    Takes xp of shape (D, B, T, 4H) where xp[d, :, t] = x_t @ W_ih_d^T + b_d,
    and the per-direction recurrent weights stacked as (D, 4H, H).  Running
    the loop through one Function keeps the autograd graph at two nodes
    instead of ~10 per timestep; the backward below is checked against the
    plain-loop autograd in the test suite.
    """

    @staticmethod
    def forward(ctx, xp: torch.Tensor, w_hh: torch.Tensor) -> torch.Tensor:
        d, batch, steps, gates4 = xp.shape
        hidden = gates4 // 4
        w_t = w_hh.transpose(1, 2)
        acts = torch.empty_like(xp)
        cs = xp.new_zeros(d, batch, steps + 1, hidden)
        hs = xp.new_zeros(d, batch, steps + 1, hidden)
        two_h = 2 * hidden
        three_h = 3 * hidden
        h = hs[:, :, 0]
        for t in range(steps):
            # activations land directly in the saved buffer
            gates = acts[:, :, t]
            gates.copy_(xp[:, :, t])
            gates.baddbmm_(h, w_t)
            gates[:, :, :two_h].sigmoid_()
            gates[:, :, two_h:three_h].tanh_()
            gates[:, :, three_h:].sigmoid_()
            i = gates[:, :, :hidden]
            f = gates[:, :, hidden:two_h]
            g = gates[:, :, two_h:three_h]
            o = gates[:, :, three_h:]
            c = cs[:, :, t + 1]
            torch.mul(i, g, out=c)
            c.addcmul_(f, cs[:, :, t])
            h = hs[:, :, t + 1]
            torch.tanh(c, out=h)
            h.mul_(o)
        ctx.save_for_backward(acts, cs, hs, w_hh)
        return h.clone()

    @staticmethod
    def backward(ctx, grad_h: torch.Tensor):
        acts, cs, hs, w_hh = ctx.saved_tensors
        d, batch, steps, gates4 = acts.shape
        hidden = gates4 // 4
        dxp = torch.empty_like(acts)
        dh = grad_h
        dc = torch.zeros_like(grad_h)
        for t in range(steps - 1, -1, -1):
            i, f, g, o = acts[:, :, t].chunk(4, dim=2)
            tc = torch.tanh(cs[:, :, t + 1])
            dc = dc + dh * o * (1.0 - tc * tc)
            d_i = dc * g * i * (1.0 - i)
            d_f = dc * cs[:, :, t] * f * (1.0 - f)
            d_g = dc * i * (1.0 - g * g)
            d_o = dh * tc * o * (1.0 - o)
            dgates = torch.cat([d_i, d_f, d_g, d_o], dim=2)
            dxp[:, :, t] = dgates
            dh = torch.bmm(dgates, w_hh)
            dc = dc * f
        dw_hh = torch.bmm(
            dxp.reshape(d, batch * steps, gates4).transpose(1, 2),
            hs[:, :, :steps].reshape(d, batch * steps, hidden))
        return dxp, dw_hh


class BiLstm(nn.Module):
    """Bidirectional LSTM with one combined bias vector per direction.

    Returns the concatenated final hidden states of both directions,
    shape (batch, 2 * hidden).
    """

    def __init__(self, in_features: int, hidden: int):
        super().__init__()
        self.in_features = in_features
        self.hidden = hidden
        gates = 4 * hidden
        self.weight_ih_fw = nn.Parameter(torch.empty(gates, in_features))
        self.weight_hh_fw = nn.Parameter(torch.empty(gates, hidden))
        self.bias_fw = nn.Parameter(torch.empty(gates))
        self.weight_ih_bw = nn.Parameter(torch.empty(gates, in_features))
        self.weight_hh_bw = nn.Parameter(torch.empty(gates, hidden))
        self.bias_bw = nn.Parameter(torch.empty(gates))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if x.ndim != 3 or x.shape[2] != self.in_features:
            raise ShapeError(f"BiLstm expects (batch, steps, "
                             f"{self.in_features}), got {tuple(x.shape)}")
        batch, steps, _ = x.shape
        flat = x.reshape(batch * steps, -1)
        flat_rev = torch.flip(x, dims=[1]).reshape(batch * steps, -1)
        # project every timestep of both directions up front; the recurrence
        # only carries h and c
        xp = torch.stack([
            flat @ self.weight_ih_fw.t() + self.bias_fw,
            flat_rev @ self.weight_ih_bw.t() + self.bias_bw,
        ]).reshape(2, batch, steps, 4 * self.hidden)
        w_hh = torch.stack([self.weight_hh_fw, self.weight_hh_bw])
        h = _LstmFinalState.apply(xp, w_hh)
        return torch.cat([h[0], h[1]], dim=1)


class WindowEncoder(nn.Module):
    """Conv stack + BiLSTM + projection producing one embedding per window."""

    def __init__(self, spec: EncoderSpec):
        super().__init__()
        self.spec = spec
        channels = [spec.in_channels] + [spec.conv_channels] * spec.n_conv_blocks
        self.blocks = nn.ModuleList([
            ConvBlock(channels[i], channels[i + 1], spec.conv_kernel,
                      spec.dropout)
            for i in range(spec.n_conv_blocks)])
        self.lstm = BiLstm(spec.conv_channels, spec.lstm_hidden)
        self.project = nn.Linear(2 * spec.lstm_hidden, spec.embed_dim)

    def conv_features(self, x: torch.Tensor) -> torch.Tensor:
        # x: (batch, steps, channels) -> (batch, conv_channels, steps)
        h = x.transpose(1, 2)
        for block in self.blocks:
            h = block(h)
        return h

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        h = self.conv_features(x).transpose(1, 2)
        h = self.lstm(h)
        return self.project(h)


class SoftmaxHead(nn.Module):
    def __init__(self, in_features: int, hidden: int, num_classes: int):
        super().__init__()
        self.dense = nn.Linear(in_features, hidden)
        self.out = nn.Linear(hidden, num_classes)

    def forward(self, z: torch.Tensor) -> torch.Tensor:
        return torch.softmax(self.out(torch.relu(self.dense(z))), dim=1)


def _check_input(x: torch.Tensor, steps: int, channels: int,
                 name: str) -> None:
    if x.ndim != 3 or x.shape[1] != steps or x.shape[2] != channels:
        raise ShapeError(f"{name} must have shape (batch, {steps}, "
                         f"{channels}), got {tuple(x.shape)}")
    if x.shape[0] == 0:
        raise ShapeError(f"{name} has zero rows")
    if not torch.isfinite(x).all():
        raise InputError(f"{name} contains non-finite values")


class UnimodalNet(nn.Module):
    """LightHAR / InertialHAR: one encoder, one softmax head."""

    def __init__(self, spec: ModelSpec):
        super().__init__()
        if spec.variant not in (VARIANT_LIGHT, VARIANT_INERTIAL):
            raise ConfigError("UnimodalNet covers light/inertial only")
        self.spec = spec
        enc_spec = spec.als_encoder or spec.imu_encoder
        if spec.variant == VARIANT_LIGHT:
            self.als_encoder = WindowEncoder(enc_spec)
        else:
            self.imu_encoder = WindowEncoder(enc_spec)
        self.classifier = SoftmaxHead(spec.classifier_in,
                                      spec.classifier_hidden, spec.num_classes)

    @property
    def _encoder(self) -> WindowEncoder:
        return (self.als_encoder if self.spec.variant == VARIANT_LIGHT
                else self.imu_encoder)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        enc = self._encoder
        _check_input(x, self.spec.window_len, enc.spec.in_channels, "x")
        return self.classifier(enc(x))


class FusionNet(nn.Module):
    """MultiLight: both encoders, concatenated embeddings, one head."""

    def __init__(self, spec: ModelSpec):
        super().__init__()
        if spec.variant != VARIANT_MULTILIGHT:
            raise ConfigError("FusionNet covers multilight only")
        self.spec = spec
        self.als_encoder = WindowEncoder(spec.als_encoder)
        self.imu_encoder = WindowEncoder(spec.imu_encoder)
        self.classifier = SoftmaxHead(spec.classifier_in,
                                      spec.classifier_hidden, spec.num_classes)

    def forward(self, als: torch.Tensor, imu: torch.Tensor) -> torch.Tensor:
        _check_input(als, self.spec.window_len,
                     self.spec.als_encoder.in_channels, "als")
        _check_input(imu, self.spec.window_len,
                     self.spec.imu_encoder.in_channels, "imu")
        z = torch.cat([self.als_encoder(als), self.imu_encoder(imu)], dim=1)
        return self.classifier(z)


class ContrastiveNet(nn.Module):
    """ContraLight: paired encoders sharing one head.

    Training touches both encoders; inference (plain forward) runs the IMU
    path only, so the ALS branch can be dropped from a deployed model.
    """

    def __init__(self, spec: ModelSpec):
        super().__init__()
        if spec.variant != VARIANT_CONTRALIGHT:
            raise ConfigError("ContrastiveNet covers contralight only")
        self.spec = spec
        self.als_encoder = WindowEncoder(spec.als_encoder)
        self.imu_encoder = WindowEncoder(spec.imu_encoder)
        self.classifier = SoftmaxHead(spec.classifier_in,
                                      spec.classifier_hidden, spec.num_classes)

    def forward_train(self, als: torch.Tensor, imu: torch.Tensor):
        """Return (z_als, z_imu, probs_als, probs_imu)."""
        _check_input(als, self.spec.window_len,
                     self.spec.als_encoder.in_channels, "als")
        _check_input(imu, self.spec.window_len,
                     self.spec.imu_encoder.in_channels, "imu")
        z_als = self.als_encoder(als)
        z_imu = self.imu_encoder(imu)
        return z_als, z_imu, self.classifier(z_als), self.classifier(z_imu)

    def forward(self, imu: torch.Tensor) -> torch.Tensor:
        _check_input(imu, self.spec.window_len,
                     self.spec.imu_encoder.in_channels, "imu")
        return self.classifier(self.imu_encoder(imu))


def build_model(spec: ModelSpec) -> nn.Module:
    if spec.variant in (VARIANT_LIGHT, VARIANT_INERTIAL):
        return UnimodalNet(spec)
    if spec.variant == VARIANT_MULTILIGHT:
        return FusionNet(spec)
    return ContrastiveNet(spec)


def _fan_in(name: str, tensor: torch.Tensor) -> int:
    if tensor.ndim == 3:
        return tensor.shape[1] * tensor.shape[2]
    if tensor.ndim == 2:
        return tensor.shape[1]
    return tensor.shape[0]


def init_parameters(model: nn.Module, seed: int) -> nn.Module:
    """Seeded init: uniform fan-in scaling for weights, zeros for biases.

    Batch-norm scales start at one.  Iteration follows registration order,
    which is fixed by construction, so the draw is reproducible.
    """
    gen = torch.Generator().manual_seed(int(seed))
    with torch.no_grad():
        for name, p in model.named_parameters():
            base = name.rsplit(".", 1)[-1]
            if base.startswith("bias"):
                p.zero_()
            elif ".norm." in name:
                p.fill_(1.0)
            else:
                bound = 1.0 / float(_fan_in(name, p)) ** 0.5
                values = torch.empty_like(p).uniform_(-bound, bound,
                                                      generator=gen)
                p.copy_(values)
        for name, buf in model.named_buffers():
            if name.endswith("running_mean"):
                buf.zero_()
            elif name.endswith("running_var"):
                buf.fill_(1.0)
            elif name.endswith("num_batches_tracked"):
                buf.zero_()
    return model


def new_model(spec: ModelSpec, seed: int) -> nn.Module:
    """Build a variant and initialize it reproducibly."""
    return init_parameters(build_model(spec), seed)
