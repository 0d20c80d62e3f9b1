"""Training objectives and a finite-difference gradient checker.

Three pieces: batch-mean cross entropy over probability outputs, a
cross-modal contrastive objective over paired embeddings, and their
unweighted sum.  All run under autograd.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from .exceptions import (
    ConfigError,
    EmptyBatchError,
    InputError,
    ShapeError,
)

# floor under the log so a collapsed probability cannot produce -inf
LOG_CLAMP = 1e-12

PROB_SUM_TOL = 1e-4


def _as_label_tensor(labels, batch: int, num_classes: int) -> torch.Tensor:
    labels = torch.as_tensor(labels)
    if labels.ndim != 1 or labels.shape[0] != batch:
        raise ShapeError(f"labels must have shape ({batch},), "
                         f"got {tuple(labels.shape)}")
    if labels.dtype not in (torch.int64, torch.int32, torch.int16):
        raise InputError("labels must be integer class ids")
    labels = labels.to(torch.int64)
    if batch and (labels.min() < 0 or labels.max() >= num_classes):
        raise InputError(f"labels outside [0, {num_classes})")
    return labels


def cross_entropy(probs: torch.Tensor, labels) -> torch.Tensor:
    """Mean negative log-probability of the true class.

    ``probs`` rows must be probability vectors (non-negative, summing to
    one within 1e-4); values are clamped at 1e-12 before the log.
    """
    if not isinstance(probs, torch.Tensor):
        probs = torch.as_tensor(probs)
    if probs.ndim != 2:
        raise ShapeError(f"probs must be 2-dimensional, got shape "
                         f"{tuple(probs.shape)}")
    batch, num_classes = probs.shape
    if batch == 0:
        raise EmptyBatchError("cross_entropy received an empty batch")
    if not torch.isfinite(probs).all():
        raise InputError("probs contain non-finite values")
    if (probs < 0).any():
        raise InputError("probs contain negative values")
    sums = probs.sum(dim=1)
    if (sums - 1.0).abs().max().item() > PROB_SUM_TOL:
        raise InputError("probs rows must sum to 1")
    labels = _as_label_tensor(labels, batch, num_classes)
    picked = probs[torch.arange(batch), labels]
    return -torch.log(picked.clamp(min=LOG_CLAMP)).mean()


def contrastive_loss(z_a: torch.Tensor, z_b: torch.Tensor, labels_a,
                     labels_b, margin: float = 1.0,
                     literal: bool = False) -> torch.Tensor:
    """Cross-modal pairwise embedding objective, averaged over all pairs.

    For every ordered pair (i, j) across the two embedding batches
    (including i = j) with squared distance d2:

    * same class:      d2            (pull together)
    * different class: max(0, margin - d2)   (push apart)

    ``literal=True`` swaps the two roles, matching a published variant of
    the formula; the default is the behavior described in prose.
    """
    for name, z in (("z_a", z_a), ("z_b", z_b)):
        if not isinstance(z, torch.Tensor) or z.ndim != 2:
            raise ShapeError(f"{name} must be a 2-dimensional tensor")
        if z.shape[0] == 0:
            raise EmptyBatchError(f"{name} has zero rows")
        if not torch.isfinite(z).all():
            raise InputError(f"{name} contains non-finite values")
    if z_a.shape[1] != z_b.shape[1]:
        raise ShapeError(f"embedding widths differ: {z_a.shape[1]} vs "
                         f"{z_b.shape[1]}")
    if margin <= 0:
        raise ConfigError("margin must be strictly positive")
    labels_a = _as_label_tensor(labels_a, z_a.shape[0], torch.iinfo(torch.int64).max)
    labels_b = _as_label_tensor(labels_b, z_b.shape[0], torch.iinfo(torch.int64).max)
    diff = z_a[:, None, :] - z_b[None, :, :]
    d2 = (diff * diff).sum(dim=2)
    same = labels_a[:, None] == labels_b[None, :]
    pull = d2
    push = torch.relu(margin - d2)
    if literal:
        pull, push = push, pull
    per_pair = torch.where(same, pull, push)
    return per_pair.mean()


@dataclass(frozen=True)
class LossReport:
    """Scalar loss components of one step; the total re-adds the parts."""

    l_co: float
    l_ce_light: float
    l_ce_imu: float
    l_total: float

    def to_dict(self) -> dict:
        return {"l_co": self.l_co, "l_ce_light": self.l_ce_light,
                "l_ce_imu": self.l_ce_imu, "l_total": self.l_total}


def total_loss(l_co, l_ce_light, l_ce_imu) -> LossReport:
    """Unweighted sum of the three components, in a fixed order."""
    parts = []
    for name, value in (("l_co", l_co), ("l_ce_light", l_ce_light),
                        ("l_ce_imu", l_ce_imu)):
        if isinstance(value, torch.Tensor):
            value = value.item()
        value = float(value)
        if not np.isfinite(value):
            raise InputError(f"{name} must be finite")
        if value < 0:
            raise InputError(f"{name} must be non-negative")
        parts.append(value)
    l_co_f, l_light_f, l_imu_f = parts
    return LossReport(l_co=l_co_f, l_ce_light=l_light_f, l_ce_imu=l_imu_f,
                      l_total=l_co_f + l_light_f + l_imu_f)


@dataclass(frozen=True)
class GradCheckReport:
    """Outcome of a finite-difference gradient comparison."""

    max_rel_err: float
    n_checked: int
    n_excluded: int

    @property
    def ok(self) -> bool:
        return self.n_checked > 0 and self.max_rel_err < 1e-3


def grad_check(fn, inputs, epsilon: float = 1e-3, max_coords: int = 200,
               seed: int = 0, kink_rel_gap: float = 0.25) -> GradCheckReport:
    """Compare autograd gradients of ``fn`` against central differences.

    ``fn(*inputs)`` must return a scalar tensor and be re-evaluable; the
    inputs are perturbed in place (and restored) one coordinate at a time.
    Up to ``max_coords`` coordinates are sampled with the seed.  A
    coordinate whose one-sided differences disagree by more than
    ``kink_rel_gap`` relative to their scale sits on a non-smooth point
    (a hinge or ReLU boundary); it is excluded from the error, not failed.

    Relative error uses ``|ad - fd| / max(|ad|, |fd|, 1)`` so near-zero
    gradients cannot inflate it.
    """
    if epsilon <= 0:
        raise ConfigError("epsilon must be positive")
    inputs = list(inputs)
    if not inputs:
        raise InputError("grad_check needs at least one input tensor")
    for x in inputs:
        x.requires_grad_(True)
    loss = fn(*inputs)
    if loss.ndim != 0:
        raise ShapeError("fn must return a scalar")
    f0 = float(loss.detach())
    grads = torch.autograd.grad(loss, inputs, allow_unused=True)

    coords = [(k, i) for k, x in enumerate(inputs) for i in range(x.numel())]
    rng = np.random.default_rng(seed)
    if len(coords) > max_coords:
        picked = rng.choice(len(coords), size=max_coords, replace=False)
        coords = [coords[i] for i in sorted(picked)]

    max_rel = 0.0
    checked = 0
    excluded = 0
    for k, flat in coords:
        x = inputs[k]
        with torch.no_grad():
            base = x.view(-1)[flat].item()
            x.view(-1)[flat] = base + epsilon
            f_plus = float(fn(*inputs))
            x.view(-1)[flat] = base - epsilon
            f_minus = float(fn(*inputs))
            x.view(-1)[flat] = base
        d_plus = (f_plus - f0) / epsilon
        d_minus = (f0 - f_minus) / epsilon
        gap = abs(d_plus - d_minus)
        if gap > kink_rel_gap * max(abs(d_plus), abs(d_minus), 1.0):
            excluded += 1
            continue
        fd = (f_plus - f_minus) / (2.0 * epsilon)
        ad = 0.0 if grads[k] is None else grads[k].view(-1)[flat].item()
        rel = abs(ad - fd) / max(abs(ad), abs(fd), 1.0)
        max_rel = max(max_rel, rel)
        checked += 1
    return GradCheckReport(max_rel_err=max_rel, n_checked=checked,
                           n_excluded=excluded)
