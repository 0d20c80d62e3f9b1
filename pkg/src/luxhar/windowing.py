"""Sliding windows, normalization statistics and subject-level splits."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Dict, Iterable, Mapping, Sequence

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.exceptions import NotFittedError

from .exceptions import (
    ConfigError,
    DegenerateDataError,
    MissingSubjectError,
    ValidationError,
)
from .ingest import NUM_CLASSES, SensorRecording

WINDOW_SIZE = 60
WINDOW_STEP = 15

ALS_TRANSFORM = "log1p"
STD_CONVENTION = "population"


@dataclass
class WindowSet:
    """A batch of fixed-length windows carrying both modalities.

    Arrays are index-aligned.  A modality marked absent holds an exact-zero
    placeholder so downstream code never reads stale values.

    Attributes
    ----------
    als : ndarray of shape (n, size, 1)
    imu : ndarray of shape (n, size, 3)
    labels : ndarray of shape (n,)
        Majority class id per window.
    als_present, imu_present : ndarray of shape (n,), bool
    subject_ids, scenarios, window_index : ndarray of shape (n,)
        Provenance: source subject, its scenario, and the window's
        position within its source recording.
    """

    als: np.ndarray
    imu: np.ndarray
    labels: np.ndarray
    als_present: np.ndarray
    imu_present: np.ndarray
    subject_ids: np.ndarray
    scenarios: np.ndarray
    window_index: np.ndarray

    def __post_init__(self):
        self.als = np.asarray(self.als, dtype=np.float64)
        self.imu = np.asarray(self.imu, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        self.als_present = np.asarray(self.als_present, dtype=bool)
        self.imu_present = np.asarray(self.imu_present, dtype=bool)
        self.subject_ids = np.asarray(self.subject_ids, dtype=np.int64)
        self.scenarios = np.asarray(self.scenarios, dtype=np.int64)
        self.window_index = np.asarray(self.window_index, dtype=np.int64)
        n = self.labels.shape[0]
        size = self.als.shape[1] if self.als.ndim == 3 else 0
        if self.als.shape != (n, size, 1) or self.imu.shape != (n, size, 3):
            raise ValidationError(
                f"window arrays disagree: als {self.als.shape}, "
                f"imu {self.imu.shape}, labels {self.labels.shape}")
        for name in ("als_present", "imu_present", "subject_ids",
                     "scenarios", "window_index"):
            if getattr(self, name).shape != (n,):
                raise ValidationError(f"{name} must have shape ({n},)")
        if n and ((self.labels < 0).any() or (self.labels >= NUM_CLASSES).any()):
            raise ValidationError("labels outside [0, 10)")
        if n and not self.als[~self.als_present].size == 0:
            if np.any(self.als[~self.als_present] != 0.0):
                raise ValidationError("absent ALS windows must be exactly zero")
        if n and not self.imu[~self.imu_present].size == 0:
            if np.any(self.imu[~self.imu_present] != 0.0):
                raise ValidationError("absent IMU windows must be exactly zero")

    def __len__(self) -> int:
        return self.labels.shape[0]

    @property
    def size(self) -> int:
        return self.als.shape[1]

    def __getitem__(self, index) -> "WindowSet":
        if isinstance(index, (int, np.integer)):
            index = slice(index, index + 1) if index != -1 else slice(-1, None)
        return WindowSet(
            als=self.als[index], imu=self.imu[index],
            labels=self.labels[index],
            als_present=self.als_present[index],
            imu_present=self.imu_present[index],
            subject_ids=self.subject_ids[index],
            scenarios=self.scenarios[index],
            window_index=self.window_index[index])

    @classmethod
    def concatenate(cls, parts: Sequence["WindowSet"]) -> "WindowSet":
        if not parts:
            raise ValidationError("cannot concatenate zero window sets")
        return cls(
            als=np.concatenate([p.als for p in parts]),
            imu=np.concatenate([p.imu for p in parts]),
            labels=np.concatenate([p.labels for p in parts]),
            als_present=np.concatenate([p.als_present for p in parts]),
            imu_present=np.concatenate([p.imu_present for p in parts]),
            subject_ids=np.concatenate([p.subject_ids for p in parts]),
            scenarios=np.concatenate([p.scenarios for p in parts]),
            window_index=np.concatenate([p.window_index for p in parts]))

    def class_histogram(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=NUM_CLASSES)


def _empty_window_set(size: int) -> WindowSet:
    return WindowSet(
        als=np.zeros((0, size, 1)), imu=np.zeros((0, size, 3)),
        labels=np.zeros(0, dtype=np.int64),
        als_present=np.zeros(0, dtype=bool),
        imu_present=np.zeros(0, dtype=bool),
        subject_ids=np.zeros(0, dtype=np.int64),
        scenarios=np.zeros(0, dtype=np.int64),
        window_index=np.zeros(0, dtype=np.int64))


def majority_label(labels: np.ndarray) -> int:
    """Most frequent class id; ties break toward the smallest id."""
    counts = np.bincount(np.asarray(labels, dtype=np.int64),
                         minlength=NUM_CLASSES)
    return int(counts.argmax())


def slide_windows(recording: SensorRecording, size: int = WINDOW_SIZE,
                  step: int = WINDOW_STEP) -> WindowSet:
    """Cut a recording into overlapping windows.

    Produces ``floor((n - size) / step) + 1`` windows for a recording of
    n >= size samples and an empty set otherwise.  Each window takes the
    majority label over its samples.
    """
    if size < 1 or step < 1:
        raise ConfigError("window size and step must be positive")
    n = len(recording)
    if n < size:
        return _empty_window_set(size)
    count = (n - size) // step + 1
    starts = np.arange(count) * step
    als = np.stack([recording.als[s:s + size] for s in starts])
    imu = np.stack([recording.imu[s:s + size] for s in starts])
    labels = np.array([majority_label(recording.labels[s:s + size])
                       for s in starts], dtype=np.int64)
    ones = np.ones(count, dtype=bool)
    return WindowSet(
        als=als, imu=imu, labels=labels,
        als_present=ones, imu_present=ones.copy(),
        subject_ids=np.full(count, recording.subject_id, dtype=np.int64),
        scenarios=np.full(count, recording.scenario, dtype=np.int64),
        window_index=np.arange(count, dtype=np.int64))


@dataclass
class NormStats:
    """Per-channel normalization statistics fit on training windows.

    ALS passes through log1p before its mean/std are taken; stds use the
    population convention (ddof 0).
    """

    als_mean: np.ndarray
    als_std: np.ndarray
    imu_mean: np.ndarray
    imu_std: np.ndarray
    als_transform: str = ALS_TRANSFORM
    std_convention: str = STD_CONVENTION

    def __post_init__(self):
        self.als_mean = np.asarray(self.als_mean, dtype=np.float64).reshape(1)
        self.als_std = np.asarray(self.als_std, dtype=np.float64).reshape(1)
        self.imu_mean = np.asarray(self.imu_mean, dtype=np.float64).reshape(3)
        self.imu_std = np.asarray(self.imu_std, dtype=np.float64).reshape(3)
        if self.als_transform != ALS_TRANSFORM:
            raise ConfigError(f"unknown als_transform {self.als_transform!r}")
        if self.std_convention != STD_CONVENTION:
            raise ConfigError(f"unknown std_convention {self.std_convention!r}")
        if (self.als_std <= 0).any() or (self.imu_std <= 0).any():
            raise DegenerateDataError("stds must be strictly positive")

    def to_json(self) -> str:
        payload = {
            "als_mean": self.als_mean.tolist(),
            "als_std": self.als_std.tolist(),
            "imu_mean": self.imu_mean.tolist(),
            "imu_std": self.imu_std.tolist(),
            "als_transform": self.als_transform,
            "std_convention": self.std_convention,
        }
        return json.dumps(payload, sort_keys=True, indent=2) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "NormStats":
        payload = json.loads(text)
        return cls(als_mean=payload["als_mean"], als_std=payload["als_std"],
                   imu_mean=payload["imu_mean"], imu_std=payload["imu_std"],
                   als_transform=payload.get("als_transform", ALS_TRANSFORM),
                   std_convention=payload.get("std_convention", STD_CONVENTION))

    def save(self, path) -> None:
        with open(path, "w") as fh:
            fh.write(self.to_json())

    @classmethod
    def load(cls, path) -> "NormStats":
        with open(path) as fh:
            return cls.from_json(fh.read())


def _degenerate(std: np.ndarray, mean: np.ndarray) -> bool:
    # accumulated rounding can leave a constant channel with std ~1e-14
    return bool(np.any(std <= 1e-12 * np.maximum(1.0, np.abs(mean))))


def fit_norm_stats(windows: WindowSet) -> NormStats:
    """Compute normalization statistics over fully-present windows."""
    if len(windows) == 0:
        raise ValidationError("cannot fit statistics on zero windows")
    if not (windows.als_present.all() and windows.imu_present.all()):
        raise ValidationError("statistics require both modalities present")
    if (windows.als < 0).any():
        raise ValidationError("lux windows must be non-negative")
    als_log = np.log1p(windows.als.reshape(-1))
    als_mean = als_log.mean()
    als_std = als_log.std()
    imu_flat = windows.imu.reshape(-1, 3)
    imu_mean = imu_flat.mean(axis=0)
    imu_std = imu_flat.std(axis=0)
    if _degenerate(np.array([als_std]), np.array([als_mean])) \
            or _degenerate(imu_std, imu_mean):
        raise DegenerateDataError("a channel has (near) zero variance")
    return NormStats(als_mean=[als_mean], als_std=[als_std],
                     imu_mean=imu_mean, imu_std=imu_std)


def normalize(windows: WindowSet, stats: NormStats) -> WindowSet:
    """Standardize present modalities; absent placeholders stay exact zero."""
    als = np.zeros_like(windows.als)
    p = windows.als_present
    if (windows.als[p] < 0).any():
        raise ValidationError("lux windows must be non-negative")
    als[p] = (np.log1p(windows.als[p]) - stats.als_mean) / stats.als_std
    imu = np.zeros_like(windows.imu)
    q = windows.imu_present
    imu[q] = (windows.imu[q] - stats.imu_mean) / stats.imu_std
    return WindowSet(
        als=als, imu=imu, labels=windows.labels.copy(),
        als_present=p.copy(), imu_present=q.copy(),
        subject_ids=windows.subject_ids.copy(),
        scenarios=windows.scenarios.copy(),
        window_index=windows.window_index.copy())


def denormalize(windows: WindowSet, stats: NormStats) -> WindowSet:
    """Invert normalize(); the round trip is lossless to float precision."""
    als = np.zeros_like(windows.als)
    p = windows.als_present
    als[p] = np.expm1(windows.als[p] * stats.als_std + stats.als_mean)
    imu = np.zeros_like(windows.imu)
    q = windows.imu_present
    imu[q] = windows.imu[q] * stats.imu_std + stats.imu_mean
    return WindowSet(
        als=als, imu=imu, labels=windows.labels.copy(),
        als_present=p.copy(), imu_present=q.copy(),
        subject_ids=windows.subject_ids.copy(),
        scenarios=windows.scenarios.copy(),
        window_index=windows.window_index.copy())


class WindowNormalizer(TransformerMixin, BaseEstimator):
    """Transformer wrapper around fit_norm_stats / normalize."""

    def fit(self, X: WindowSet, y=None) -> "WindowNormalizer":
        self.stats_ = fit_norm_stats(X)
        return self

    def transform(self, X: WindowSet) -> WindowSet:
        self._check_fitted()
        return normalize(X, self.stats_)

    def inverse_transform(self, X: WindowSet) -> WindowSet:
        self._check_fitted()
        return denormalize(X, self.stats_)

    def _check_fitted(self):
        if not hasattr(self, "stats_"):
            raise NotFittedError("WindowNormalizer is not fitted yet")


def expand_modality_dropout(windows: WindowSet) -> WindowSet:
    """Triple a window set for modality-dropout training.

    Every input window yields three consecutive outputs: both modalities
    present, ALS zeroed, IMU zeroed.  Inputs must be fully present.
    """
    if not (windows.als_present.all() and windows.imu_present.all()):
        raise ValidationError("expansion requires both modalities present")
    n = len(windows)
    size = windows.size
    als = np.zeros((3 * n, size, 1))
    imu = np.zeros((3 * n, size, 3))
    als_present = np.zeros(3 * n, dtype=bool)
    imu_present = np.zeros(3 * n, dtype=bool)
    als[0::3] = windows.als
    als[2::3] = windows.als
    imu[0::3] = windows.imu
    imu[1::3] = windows.imu
    als_present[0::3] = True
    als_present[2::3] = True
    imu_present[0::3] = True
    imu_present[1::3] = True

    def _triple(arr):
        return np.repeat(arr, 3, axis=0)

    return WindowSet(
        als=als, imu=imu, labels=_triple(windows.labels),
        als_present=als_present, imu_present=imu_present,
        subject_ids=_triple(windows.subject_ids),
        scenarios=_triple(windows.scenarios),
        window_index=_triple(windows.window_index))


@dataclass
class SplitSpec:
    """Which subjects feed each split, and the train/val ratio."""

    train_subjects: tuple = tuple(range(1, 8))
    val_fraction: float = 0.1
    test_sets: Mapping[str, tuple] = field(default_factory=lambda: {
        "test1": (8, 9, 10),
        "test2": (11, 12, 13),
        "test3": (14, 15, 16),
    })

    def __post_init__(self):
        if not 0.0 < self.val_fraction < 1.0:
            raise ConfigError("val_fraction must lie in (0, 1)")
        claimed: list = []
        claimed.extend(self.train_subjects)
        for subjects in self.test_sets.values():
            claimed.extend(subjects)
        if len(set(claimed)) != len(claimed):
            raise ConfigError("a subject appears in more than one split")


def make_splits(recordings: Iterable[SensorRecording],
                spec: SplitSpec | None = None, seed: int = 0,
                size: int = WINDOW_SIZE,
                step: int = WINDOW_STEP) -> Dict[str, WindowSet]:
    """Window all recordings and split by subject, then 9:1 train/val.

    Training subjects' windows are pooled, shuffled with the seed and split
    at window level; the validation side takes ``floor(n * val_fraction)``
    windows and the remainder stays in train.  Test splits keep recording
    order.
    """
    spec = spec or SplitSpec()
    by_subject = {}
    for rec in recordings:
        if rec.subject_id in by_subject:
            raise ValidationError(f"duplicate recording for subject "
                                  f"{rec.subject_id}")
        by_subject[rec.subject_id] = rec

    def _windows_for(subjects) -> WindowSet:
        parts = []
        for sid in subjects:
            if sid not in by_subject:
                raise MissingSubjectError(f"no recording for subject {sid}")
            parts.append(slide_windows(by_subject[sid], size, step))
        return WindowSet.concatenate(parts)

    pool = _windows_for(spec.train_subjects)
    if len(pool) == 0:
        raise ValidationError("training subjects produced zero windows")
    rng = np.random.default_rng(seed)
    perm = rng.permutation(len(pool))
    n_val = int(len(pool) * spec.val_fraction)
    splits = {"val": pool[perm[:n_val]], "train": pool[perm[n_val:]]}
    for name, subjects in spec.test_sets.items():
        splits[name] = _windows_for(subjects)
    return splits


def split_manifest(splits: Mapping[str, WindowSet]) -> dict:
    """JSON-ready mapping: split name -> list of [subject_id, window_index]."""
    return {
        name: [[int(s), int(w)] for s, w in
               zip(ws.subject_ids, ws.window_index)]
        for name, ws in splits.items()
    }


def write_split_manifest(splits: Mapping[str, WindowSet], path) -> None:
    with open(path, "w") as fh:
        json.dump(split_manifest(splits), fh, sort_keys=True)
        fh.write("\n")


def stack_channels(windows: WindowSet) -> tuple:
    """Return (X, y) with channels stacked as [als | imu] -> (n, size, 4)."""
    X = np.concatenate([windows.als, windows.imu], axis=2)
    return X, windows.labels.copy()


_WINDOW_FIELDS = ("als", "imu", "labels", "als_present", "imu_present",
                  "subject_ids", "scenarios", "window_index")


def save_window_splits(splits: Mapping[str, WindowSet], path) -> None:
    """Persist named window sets into one npz archive."""
    arrays = {"splits": np.array(sorted(splits), dtype="U32")}
    for name, ws in splits.items():
        for fld in _WINDOW_FIELDS:
            arrays[f"{name}__{fld}"] = getattr(ws, fld)
    np.savez(path, **arrays)


def load_window_splits(path) -> Dict[str, WindowSet]:
    with np.load(path) as archive:
        if "splits" not in archive:
            raise ValidationError(f"{path}: not a window-split archive")
        out = {}
        for name in archive["splits"]:
            name = str(name)
            out[name] = WindowSet(**{
                fld: archive[f"{name}__{fld}"] for fld in _WINDOW_FIELDS})
    return out
