"""The four classifier variants behind a fit/predict estimator API.

All variants share one training loop: Adam (lr 0.001, betas 0.9/0.999,
eps 1e-8), batches of 64, early stopping with patience 10 and best-weight
restore, a hard cap of 300 epochs, and full determinism under a seed
(initialization, batch order, dropout draws).  The early-stopping signal
is the validation cross entropy under each variant's deployment
condition (light channel zeroed for the fusion model, accelerometer only
for the contrastive one), so model selection optimizes the quantity the
model is evaluated on.

Differences live in how a variant consumes a window batch:

* ``LightActivityClassifier``   X: (n, 60, 1) ambient-light windows.
* ``InertialActivityClassifier``X: (n, 60, 3) accelerometer windows.
* ``FusionActivityClassifier``  X: (n, 60, 4) as [light | accel]; training
  triples the set so every window is seen with each modality zeroed, and
  validation runs with the light channel zeroed, matching deployment.
* ``ContrastiveActivityClassifier`` trains on (n, 60, 4) with a pairwise
  embedding loss tying the two encoders, then predicts from accelerometer
  windows alone.

Inputs are expected pre-normalized (see ``windowing``); zeroed channels
encode an absent modality.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np
import torch
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.exceptions import NotFittedError
from torch import nn

from .checkpoint import load_checkpoint, save_checkpoint
from .exceptions import ConfigError, DivergenceError, InputError
from .losses import contrastive_loss, cross_entropy, total_loss
from .models import (
    ModelSpec,
    VARIANT_CONTRALIGHT,
    VARIANT_INERTIAL,
    VARIANT_LIGHT,
    VARIANT_MULTILIGHT,
    default_model_spec,
    new_model,
)
from .validation import check_label_array, check_window_array

ADAM_BETAS = (0.9, 0.999)
ADAM_EPS = 1e-8

CHECKPOINT_DIR = "checkpoint"
TRAIN_RECORD_FILE = "train_record.json"
TRAIN_LOG_FILE = "train_log.jsonl"
LOSS_LOG_FILE = "loss_log.jsonl"


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_loss: float
    val_acc: float
    seconds: float

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class TrainRecord:
    """What happened during one fit: per-epoch curves and stopping info."""

    variant: str
    seed: int
    epochs: list = field(default_factory=list)
    best_epoch: int = 0
    stopped_epoch: int = 0
    best_val_loss: float = float("inf")
    best_step: int = 0
    total_steps: int = 0
    wall_time_s: float = 0.0

    def to_dict(self) -> dict:
        payload = asdict(self)
        payload["epochs"] = [e.to_dict() if isinstance(e, EpochRecord) else e
                             for e in self.epochs]
        return payload

    @classmethod
    def from_dict(cls, payload: dict) -> "TrainRecord":
        payload = dict(payload)
        payload["epochs"] = [EpochRecord(**e) for e in payload.get("epochs", [])]
        return cls(**payload)


def _epoch_rng(seed: int, epoch: int) -> np.random.Generator:
    return np.random.default_rng([int(seed), int(epoch)])


def _batch_slices(n: int, batch_size: int, perm: np.ndarray) -> list:
    """Index batches in permutation order; a trailing singleton is dropped
    because batch statistics need at least two rows."""
    batches = [perm[i:i + batch_size] for i in range(0, n, batch_size)]
    if batches and len(batches[-1]) == 1:
        batches.pop()
    return batches


class _StatsComplete(Exception):
    """Internal: all norm layers have reported for the current batch."""


def _recompute_norm_stats(model: nn.Module, batches, forward) -> None:
    """Set batch-norm running statistics to exact training-set moments.

    Runs one pass over the training batches in a fixed canonical order
    (dropout off, batch statistics active) while accumulating every norm
    layer's input moments, then overwrites running mean/var with the
    population values.  The stored statistics are therefore a pure
    function of the weights and the training set, so a frozen model sees
    a frozen validation loss.
    """
    norms = [m for m in model.modules() if isinstance(m, nn.BatchNorm1d)]
    if not norms:
        return
    sums = {id(m): None for m in norms}
    seen = [0]
    handles = []

    def _make_hook(mod):
        def _hook(module, args, output):
            x = args[0].detach().to(torch.float64)
            # (batch, channels, steps) -> per-channel moments
            s1 = x.sum(dim=(0, 2))
            s2 = (x * x).sum(dim=(0, 2))
            count = x.shape[0] * x.shape[2]
            prev = sums[id(module)]
            if prev is None:
                sums[id(module)] = [s1, s2, count]
            else:
                prev[0] += s1
                prev[1] += s2
                prev[2] += count
            seen[0] += 1
            if seen[0] == len(norms):
                # nothing downstream of the last norm layer affects the
                # statistics, so skip the rest of the forward
                raise _StatsComplete
        return _hook

    for m in norms:
        handles.append(m.register_forward_hook(_make_hook(m)))
    was_training = model.training
    model.train()
    for m in model.modules():
        if isinstance(m, nn.Dropout):
            m.eval()
    try:
        with torch.no_grad():
            for batch in batches:
                seen[0] = 0
                try:
                    forward(batch)
                except _StatsComplete:
                    pass
    finally:
        for h in handles:
            h.remove()
        model.train(was_training)
    with torch.no_grad():
        for m in norms:
            s1, s2, count = sums[id(m)]
            mean = s1 / count
            var = (s2 / count - mean * mean).clamp(min=0.0)
            m.running_mean.copy_(mean.to(m.running_mean.dtype))
            m.running_var.copy_(var.to(m.running_var.dtype))


class _ActivityClassifier(ClassifierMixin, BaseEstimator):
    """Shared training loop; subclasses define the variant and batch use."""

    _variant = ""

    def __init__(self, learning_rate=0.001, max_epochs=300, patience=10,
                 batch_size=64, validation_fraction=0.1, seed=0,
                 window_len=60, conv_channels=64, lstm_hidden=128,
                 embed_dim=256, classifier_hidden=128, dropout=0.2,
                 verbose=0):
        self.learning_rate = learning_rate
        self.max_epochs = max_epochs
        self.patience = patience
        self.batch_size = batch_size
        self.validation_fraction = validation_fraction
        self.seed = seed
        self.window_len = window_len
        self.conv_channels = conv_channels
        self.lstm_hidden = lstm_hidden
        self.embed_dim = embed_dim
        self.classifier_hidden = classifier_hidden
        self.dropout = dropout
        self.verbose = verbose

    # ------------------------------------------------------------------
    # variant hooks

    def _input_channels(self) -> int:
        raise NotImplementedError

    def _build_spec(self) -> ModelSpec:
        return default_model_spec(
            self._variant, window_len=self.window_len,
            conv_channels=self.conv_channels, lstm_hidden=self.lstm_hidden,
            embed_dim=self.embed_dim, classifier_hidden=self.classifier_hidden,
            dropout=self.dropout, **self._spec_extra())

    def _spec_extra(self) -> dict:
        return {}

    def _expand_train(self, X: np.ndarray, y: np.ndarray):
        return X, y

    def _batch_loss(self, model, xb: torch.Tensor, yb: torch.Tensor):
        """Return (loss tensor, LossReport)."""
        raise NotImplementedError

    def _val_forward(self, model, xb: torch.Tensor) -> torch.Tensor:
        """Probabilities under the variant's deployment condition."""
        raise NotImplementedError

    def _stats_forward(self, model, xb: torch.Tensor) -> None:
        """Drive every norm layer once; nothing past the conv stacks runs."""
        for name in ("als_encoder", "imu_encoder"):
            enc = getattr(model, name, None)
            if enc is not None:
                enc.conv_features(self._encoder_slice(name, xb))

    def _encoder_slice(self, encoder_name: str, xb: torch.Tensor):
        return xb

    def _predict_forward(self, model, xb: torch.Tensor) -> torch.Tensor:
        return self._val_forward(model, xb)

    def _check_predict_input(self, X) -> np.ndarray:
        return check_window_array(X, self._input_channels(), self.window_len)

    # ------------------------------------------------------------------

    def _validate_config(self):
        if self.learning_rate < 0:
            raise ConfigError("learning_rate must be non-negative")
        if self.max_epochs < 1:
            raise ConfigError("max_epochs must be at least 1")
        if self.patience < 1:
            raise ConfigError("patience must be at least 1")
        if self.batch_size < 2:
            raise ConfigError("batch_size must be at least 2")
        if not 0.0 < self.validation_fraction < 1.0:
            raise ConfigError("validation_fraction must lie in (0, 1)")

    def fit(self, X, y, validation_data=None):
        """Train until validation loss stalls for ``patience`` epochs.

        ``validation_data`` may supply an explicit (X_val, y_val) pair;
        otherwise a seeded window-level split holds out
        ``floor(n * validation_fraction)`` rows.
        """
        self._validate_config()
        t_start = time.perf_counter()
        X = check_window_array(X, self._input_channels(), self.window_len)
        y = check_label_array(y, X.shape[0])

        torch.manual_seed(int(self.seed))
        spec = self._build_spec()
        model = new_model(spec, int(self.seed))

        if validation_data is not None:
            X_val, y_val = validation_data
            X_val = check_window_array(X_val, self._input_channels(),
                                       self.window_len, name="X_val")
            y_val = check_label_array(y_val, X_val.shape[0], name="y_val")
            X_tr, y_tr = X, y
        else:
            n_val = int(X.shape[0] * self.validation_fraction)
            if n_val < 1:
                raise ConfigError(
                    "too few windows for a validation split; pass "
                    "validation_data explicitly")
            perm = np.random.default_rng(int(self.seed)).permutation(X.shape[0])
            X_val, y_val = X[perm[:n_val]], y[perm[:n_val]]
            X_tr, y_tr = X[perm[n_val:]], y[perm[n_val:]]
        if X_tr.shape[0] < 2:
            raise ConfigError("need at least 2 training windows")

        X_tr, y_tr = self._expand_train(X_tr, y_tr)
        xt = torch.from_numpy(np.ascontiguousarray(X_tr, dtype=np.float32))
        yt = torch.from_numpy(y_tr)
        xv = torch.from_numpy(np.ascontiguousarray(X_val, dtype=np.float32))
        yv = torch.from_numpy(y_val)

        optimizer = torch.optim.Adam(model.parameters(),
                                     lr=self.learning_rate,
                                     betas=ADAM_BETAS, eps=ADAM_EPS)
        record = TrainRecord(variant=self._variant, seed=int(self.seed))
        loss_log: list[dict] = []
        n_tr = xt.shape[0]
        canonical = _batch_slices(n_tr, int(self.batch_size),
                                  np.arange(n_tr))
        step = 0
        best_state = None
        best_val = float("inf")
        since_best = 0

        for epoch in range(1, int(self.max_epochs) + 1):
            t_epoch = time.perf_counter()
            perm = _epoch_rng(self.seed, epoch).permutation(n_tr)
            model.train()
            train_loss_sum = 0.0
            train_rows = 0
            for idx in _batch_slices(n_tr, int(self.batch_size), perm):
                bi = torch.from_numpy(idx)
                xb = xt[bi]
                yb = yt[bi]
                try:
                    loss, report = self._batch_loss(model, xb, yb)
                except InputError as exc:
                    # inputs were validated up front, so a non-finite forward
                    # mid-training means the optimization blew up
                    raise DivergenceError(str(exc), step) from exc
                if not torch.isfinite(loss):
                    raise DivergenceError("training loss is non-finite", step)
                optimizer.zero_grad(set_to_none=True)
                loss.backward()
                optimizer.step()
                step += 1
                entry = {"step": step}
                entry.update(report.to_dict())
                loss_log.append(entry)
                train_loss_sum += float(loss.detach()) * len(idx)
                train_rows += len(idx)

            _recompute_norm_stats(
                model, canonical,
                lambda idx: self._stats_forward(model, xt[torch.from_numpy(idx)]))

            val_loss, val_acc = self._validation_pass(model, xv, yv)
            record.epochs.append(EpochRecord(
                epoch=epoch, train_loss=train_loss_sum / max(train_rows, 1),
                val_loss=val_loss, val_acc=val_acc,
                seconds=time.perf_counter() - t_epoch))
            if self.verbose:
                print(f"epoch {epoch}: train {record.epochs[-1].train_loss:.4f} "
                      f"val {val_loss:.4f} acc {val_acc:.3f}")

            if val_loss < best_val:
                best_val = val_loss
                record.best_epoch = epoch
                record.best_val_loss = val_loss
                record.best_step = step
                best_state = {k: v.detach().clone()
                              for k, v in model.state_dict().items()}
                since_best = 0
            else:
                since_best += 1
            record.stopped_epoch = epoch
            if since_best >= int(self.patience):
                break

        model.load_state_dict(best_state)
        model.eval()
        record.total_steps = step
        record.wall_time_s = time.perf_counter() - t_start

        self.model_ = model
        self.spec_ = spec
        self.record_ = record
        self.loss_log_ = loss_log
        self.classes_ = np.arange(spec.num_classes)
        return self

    def _validation_pass(self, model, xv: torch.Tensor, yv: torch.Tensor):
        """Validation loss and accuracy without touching model state.

        The loss is the cross entropy of the deployment-condition forward,
        not the training objective, so model selection tracks the risk the
        model is actually reported under (for the fusion and contrastive
        variants those differ).
        """
        model.eval()
        loss_sum = 0.0
        correct = 0
        n = xv.shape[0]
        with torch.no_grad():
            for i in range(0, n, int(self.batch_size)):
                xb = xv[i:i + int(self.batch_size)]
                yb = yv[i:i + int(self.batch_size)]
                probs = self._val_forward(model, xb)
                loss = cross_entropy(probs, yb)
                loss_sum += float(loss) * xb.shape[0]
                correct += int((probs.argmax(dim=1) == yb).sum())
        return loss_sum / n, correct / n

    # ------------------------------------------------------------------

    def _check_fitted(self):
        if not hasattr(self, "model_"):
            raise NotFittedError(
                f"{type(self).__name__} is not fitted yet; call fit first")

    def predict_proba(self, X) -> np.ndarray:
        """Class probabilities under the variant's deployment condition."""
        self._check_fitted()
        X = self._check_predict_input(X)
        xt = torch.from_numpy(np.ascontiguousarray(X, dtype=np.float32))
        self.model_.eval()
        out = []
        with torch.no_grad():
            for i in range(0, xt.shape[0], 512):
                out.append(self._predict_forward(self.model_, xt[i:i + 512]))
        return torch.cat(out).numpy().astype(np.float64)

    def predict(self, X) -> np.ndarray:
        probs = self.predict_proba(X)
        return self.classes_[probs.argmax(axis=1)]

    # ------------------------------------------------------------------

    def save(self, run_dir) -> None:
        """Write checkpoint, train record and logs under ``run_dir``."""
        self._check_fitted()
        run_dir = Path(run_dir)
        run_dir.mkdir(parents=True, exist_ok=True)
        save_checkpoint(run_dir / CHECKPOINT_DIR, self.model_, self.spec_,
                        seed=int(self.seed), step=self.record_.best_step)
        with open(run_dir / TRAIN_RECORD_FILE, "w") as fh:
            json.dump(self.record_.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")
        with open(run_dir / TRAIN_LOG_FILE, "w") as fh:
            for entry in self.record_.epochs:
                fh.write(json.dumps(entry.to_dict(), sort_keys=True) + "\n")
        with open(run_dir / LOSS_LOG_FILE, "w") as fh:
            for entry in self.loss_log_:
                fh.write(json.dumps(entry, sort_keys=True) + "\n")


class LightActivityClassifier(_ActivityClassifier):
    """Ambient-light-only classifier."""

    _variant = VARIANT_LIGHT

    def _input_channels(self) -> int:
        return 1

    def _batch_loss(self, model, xb, yb):
        probs = model(xb)
        ce = cross_entropy(probs, yb)
        return ce, total_loss(0.0, ce, 0.0)

    def _val_forward(self, model, xb):
        return model(xb)


class InertialActivityClassifier(_ActivityClassifier):
    """Accelerometer-only classifier."""

    _variant = VARIANT_INERTIAL

    def _input_channels(self) -> int:
        return 3

    def _batch_loss(self, model, xb, yb):
        probs = model(xb)
        ce = cross_entropy(probs, yb)
        return ce, total_loss(0.0, 0.0, ce)

    def _val_forward(self, model, xb):
        return model(xb)


def _split_channels(xb: torch.Tensor):
    return xb[:, :, :1], xb[:, :, 1:]


class FusionActivityClassifier(_ActivityClassifier):
    """Concatenation-fusion classifier with modality-dropout training.

    Channels stack as [light | ax | ay | az].  A zeroed light channel at
    predict time reproduces the light-sensor-absent deployment mode.
    """

    _variant = VARIANT_MULTILIGHT

    def __init__(self, learning_rate=0.001, max_epochs=300, patience=10,
                 batch_size=64, validation_fraction=0.1, seed=0,
                 window_len=60, conv_channels=64, lstm_hidden=128,
                 embed_dim=256, classifier_hidden=128, dropout=0.2,
                 verbose=0, expand_modalities=True):
        super().__init__(learning_rate=learning_rate, max_epochs=max_epochs,
                         patience=patience, batch_size=batch_size,
                         validation_fraction=validation_fraction, seed=seed,
                         window_len=window_len, conv_channels=conv_channels,
                         lstm_hidden=lstm_hidden, embed_dim=embed_dim,
                         classifier_hidden=classifier_hidden, dropout=dropout,
                         verbose=verbose)
        self.expand_modalities = expand_modalities

    def _input_channels(self) -> int:
        return 4

    def _expand_train(self, X, y):
        if not self.expand_modalities:
            return X, y
        n = X.shape[0]
        out = np.repeat(X, 3, axis=0)
        out[1::3, :, :1] = 0.0   # light zeroed
        out[2::3, :, 1:] = 0.0   # accel zeroed
        return out, np.repeat(y, 3)

    def _batch_loss(self, model, xb, yb):
        als, imu = _split_channels(xb)
        probs = model(als, imu)
        ce = cross_entropy(probs, yb)
        return ce, total_loss(0.0, 0.0, ce)

    def _val_forward(self, model, xb):
        # deployment condition: light sensor absent
        als, imu = _split_channels(xb)
        return model(torch.zeros_like(als), imu)

    def _predict_forward(self, model, xb):
        als, imu = _split_channels(xb)
        return model(als, imu)

    def _encoder_slice(self, encoder_name, xb):
        als, imu = _split_channels(xb)
        return als if encoder_name == "als_encoder" else imu


class ContrastiveActivityClassifier(_ActivityClassifier):
    """Cross-modal contrastive training; accelerometer-only inference.

    Fit consumes (n, 60, 4) stacked windows and ties the two encoders'
    embeddings with a pairwise loss plus a cross entropy per modality
    through the shared head.  Predict consumes (n, 60, 3) accelerometer
    windows (a 4-channel input is accepted and its light channel ignored).
    """

    _variant = VARIANT_CONTRALIGHT

    def __init__(self, learning_rate=0.001, max_epochs=300, patience=10,
                 batch_size=64, validation_fraction=0.1, seed=0,
                 window_len=60, conv_channels=64, lstm_hidden=128,
                 embed_dim=256, classifier_hidden=128, dropout=0.2,
                 verbose=0, margin=1.0, eq2_literal=False):
        super().__init__(learning_rate=learning_rate, max_epochs=max_epochs,
                         patience=patience, batch_size=batch_size,
                         validation_fraction=validation_fraction, seed=seed,
                         window_len=window_len, conv_channels=conv_channels,
                         lstm_hidden=lstm_hidden, embed_dim=embed_dim,
                         classifier_hidden=classifier_hidden, dropout=dropout,
                         verbose=verbose)
        self.margin = margin
        self.eq2_literal = eq2_literal

    def _input_channels(self) -> int:
        return 4

    def _spec_extra(self) -> dict:
        return {"margin": self.margin}

    def _validate_config(self):
        super()._validate_config()
        if self.margin <= 0:
            raise ConfigError("margin must be strictly positive")

    def _batch_loss(self, model, xb, yb):
        als, imu = _split_channels(xb)
        z_als, z_imu, p_als, p_imu = model.forward_train(als, imu)
        l_co = contrastive_loss(z_als, z_imu, yb, yb, margin=self.margin,
                                literal=self.eq2_literal)
        ce_light = cross_entropy(p_als, yb)
        ce_imu = cross_entropy(p_imu, yb)
        loss = l_co + ce_light + ce_imu
        return loss, total_loss(l_co, ce_light, ce_imu)

    def _val_forward(self, model, xb):
        _, imu = _split_channels(xb)
        return model(imu)

    def _encoder_slice(self, encoder_name, xb):
        als, imu = _split_channels(xb)
        return als if encoder_name == "als_encoder" else imu

    def _check_predict_input(self, X) -> np.ndarray:
        X = np.asarray(X)
        channels = X.shape[2] if X.ndim == 3 else 3
        if channels == 4:
            X = check_window_array(X, 4, self.window_len)
            return X[:, :, 1:]
        return check_window_array(X, 3, self.window_len)

    def _predict_forward(self, model, xb):
        if xb.shape[2] == 4:
            xb = xb[:, :, 1:]
        return model(xb)


VARIANT_CLASSIFIERS = {
    VARIANT_LIGHT: LightActivityClassifier,
    VARIANT_INERTIAL: InertialActivityClassifier,
    VARIANT_MULTILIGHT: FusionActivityClassifier,
    VARIANT_CONTRALIGHT: ContrastiveActivityClassifier,
}


def make_classifier(variant: str, **params) -> _ActivityClassifier:
    if variant not in VARIANT_CLASSIFIERS:
        raise ConfigError(f"unknown variant {variant!r}; expected one of "
                          f"{sorted(VARIANT_CLASSIFIERS)}")
    return VARIANT_CLASSIFIERS[variant](**params)


def load_classifier(run_dir) -> _ActivityClassifier:
    """Rebuild a fitted classifier from ``save()`` output."""
    run_dir = Path(run_dir)
    bundle = load_checkpoint(run_dir / CHECKPOINT_DIR)
    spec = bundle.spec
    enc = spec.als_encoder or spec.imu_encoder
    params = dict(seed=bundle.seed, window_len=spec.window_len,
                  conv_channels=enc.conv_channels,
                  lstm_hidden=enc.lstm_hidden, embed_dim=enc.embed_dim,
                  classifier_hidden=spec.classifier_hidden,
                  dropout=enc.dropout)
    if spec.variant == VARIANT_CONTRALIGHT:
        params["margin"] = spec.margin
    clf = make_classifier(spec.variant, **params)
    clf.model_ = bundle.model
    clf.spec_ = spec
    clf.classes_ = np.arange(spec.num_classes)
    record_path = run_dir / TRAIN_RECORD_FILE
    if record_path.exists():
        with open(record_path) as fh:
            clf.record_ = TrainRecord.from_dict(json.load(fh))
    return clf
