"""Loading, resampling and alignment of paired light/inertial recordings.

A recording session produces one ambient-light stream (lux) and one
accelerometer stream (m/s^2 on three axes), each timestamped on its own
clock, plus an interval label track.  This module parses the on-disk CSV
formats, estimates the clock offset between the two streams, resamples
both onto a shared 30 Hz grid and attaches per-sample class labels.
"""

from __future__ import annotations

import csv
import json
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple, Sequence

import numpy as np

from .exceptions import (
    DegenerateDataError,
    SchemaError,
    StreamParseError,
    ValidationError,
)

RATE_HZ = 30.0

MODALITY_ALS = "als"
MODALITY_IMU = "imu"

ALS_COLUMNS = ("timestamp_s", "lux")
IMU_COLUMNS = ("timestamp_s", "ax", "ay", "az")
LABEL_COLUMNS = ("start_s", "end_s", "class_id")

NUM_CLASSES = 10
NULL_CLASS = 0

CLASS_NAMES = (
    "null",
    "boxing",
    "biceps_curls",
    "chest_press",
    "shoulder_and_chest_press",
    "arm_hold_and_shoulder_press",
    "arm_opener",
    "sweeping_table",
    "answering_telephone",
    "wearing_headset",
)

SCENARIOS = (1, 2, 3)

# head room for float error when counting grid points on a span
_GRID_EPS = 1e-9

_CHANNELS = {MODALITY_ALS: 1, MODALITY_IMU: 3}
_HEADERS = {MODALITY_ALS: ALS_COLUMNS, MODALITY_IMU: IMU_COLUMNS}


@dataclass
class RawStream:
    """A timestamped sensor stream from a single modality.

    Attributes
    ----------
    modality : str
        Either ``"als"`` (1 channel, lux) or ``"imu"`` (3 channels).
    timestamps : ndarray of shape (n,)
        Strictly increasing sample times in seconds.
    values : ndarray of shape (n, channels)
        Sensor readings; lux values must be non-negative.
    """

    modality: str
    timestamps: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        if self.modality not in _CHANNELS:
            raise ValidationError(f"unknown modality {self.modality!r}")
        self.timestamps = np.asarray(self.timestamps, dtype=np.float64)
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.timestamps.ndim != 1:
            raise ValidationError("timestamps must be 1-dimensional")
        want = _CHANNELS[self.modality]
        if self.values.ndim != 2 or self.values.shape[1] != want:
            raise SchemaError(
                f"{self.modality} stream must have {want} channel(s), "
                f"got array of shape {self.values.shape}")
        if self.values.shape[0] != self.timestamps.shape[0]:
            raise ValidationError("timestamps and values disagree on length")
        if self.timestamps.shape[0] < 2:
            raise ValidationError("a stream needs at least 2 samples")
        if not np.isfinite(self.timestamps).all():
            raise ValidationError("timestamps contain non-finite values")
        if not np.isfinite(self.values).all():
            raise ValidationError("values contain non-finite entries")
        if not (np.diff(self.timestamps) > 0).all():
            raise ValidationError("timestamps must be strictly increasing")
        if self.modality == MODALITY_ALS and (self.values < 0).any():
            raise ValidationError("lux values must be non-negative")

    def __len__(self) -> int:
        return self.timestamps.shape[0]

    @property
    def duration_s(self) -> float:
        return float(self.timestamps[-1] - self.timestamps[0])


def parse_stream_csv(path, modality: str) -> RawStream:
    """Parse an ``als`` or ``imu`` CSV file into a RawStream.

    The first row must match the modality's header exactly.  Rows with the
    wrong number of fields raise SchemaError; rows with unparseable numbers
    raise StreamParseError carrying the 1-based line number.
    """
    if modality not in _HEADERS:
        raise ValidationError(f"unknown modality {modality!r}")
    header = _HEADERS[modality]
    rows = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            first = next(reader)
        except StopIteration:
            raise SchemaError(f"{path}: empty file") from None
        if tuple(first) != header:
            raise SchemaError(
                f"{path}: expected header {','.join(header)}, "
                f"got {','.join(first)}")
        for line_number, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise SchemaError(
                    f"{path}: line {line_number}: expected "
                    f"{len(header)} fields, got {len(row)}")
            try:
                rows.append([float(cell) for cell in row])
            except ValueError as exc:
                raise StreamParseError(f"{path}: {exc}", line_number) from None
    if len(rows) < 2:
        raise ValidationError(f"{path}: a stream needs at least 2 samples")
    data = np.asarray(rows, dtype=np.float64)
    return RawStream(modality, data[:, 0], data[:, 1:])


def resample_30hz(stream: RawStream, t_start: float | None = None,
                  t_stop: float | None = None) -> RawStream:
    """Linearly interpolate a stream onto a uniform 30 Hz grid.

    The grid starts at ``t_start`` (default: first timestamp) and places
    ``floor(span * 30) + 1`` samples up to ``t_stop`` (default: last
    timestamp).  Resampling an already-uniform 30 Hz stream reproduces it
    exactly.
    """
    t0 = float(stream.timestamps[0]) if t_start is None else float(t_start)
    t1 = float(stream.timestamps[-1]) if t_stop is None else float(t_stop)
    if t0 < stream.timestamps[0] - _GRID_EPS or t1 > stream.timestamps[-1] + _GRID_EPS:
        raise ValidationError("resample grid extends beyond the stream")
    span = t1 - t0
    if span <= 0:
        raise ValidationError("resample span must be positive")
    n = int(math.floor(span * RATE_HZ + _GRID_EPS)) + 1
    grid = t0 + np.arange(n, dtype=np.float64) / RATE_HZ
    out = np.empty((n, stream.values.shape[1]), dtype=np.float64)
    for c in range(stream.values.shape[1]):
        out[:, c] = np.interp(grid, stream.timestamps, stream.values[:, c])
    return RawStream(stream.modality, grid, out)


def _is_uniform_30hz(stream: RawStream) -> bool:
    diffs = np.diff(stream.timestamps)
    return bool(np.all(np.abs(diffs - 1.0 / RATE_HZ) < 1e-6))


def _envelope(stream: RawStream) -> np.ndarray:
    """Motion envelope used for cross-modal correlation.

    ALS: absolute deviation of lux from its mean.  IMU: acceleration
    magnitude minus its mean.  Both emphasise rhythmic activity while
    discarding the static offset, so the two modalities become comparable.
    """
    if stream.modality == MODALITY_ALS:
        x = stream.values[:, 0]
        return np.abs(x - x.mean())
    mag = np.linalg.norm(stream.values, axis=1)
    return mag - mag.mean()


class SyncEstimate(NamedTuple):
    """Clock offset estimate with its normalized correlation score."""

    offset_s: float
    score: float


def estimate_sync_offset(reference: RawStream, target: RawStream,
                         max_offset_s: float = 2.0) -> SyncEstimate:
    """Estimate the clock offset of ``target`` relative to ``reference``.

    Slides the target's motion envelope against the reference's over integer
    sample lags in ``[-max_offset_s, +max_offset_s]`` and picks the lag with
    the highest normalized cross-correlation; ties break toward the smallest
    absolute lag.  Adding ``offset_s`` to the target's timestamps aligns it
    with the reference clock.  Both streams must already be on the 30 Hz
    grid.
    """
    for stream in (reference, target):
        if not _is_uniform_30hz(stream):
            raise ValidationError("sync estimation needs 30 Hz streams; "
                                  "resample first")
    if max_offset_s <= 0:
        raise ValidationError("max_offset_s must be positive")
    ref_env = _envelope(reference)
    tgt_env = _envelope(target)
    max_lag = int(round(max_offset_s * RATE_HZ))
    lags = sorted(range(-max_lag, max_lag + 1), key=lambda l: (abs(l), l))
    best_lag = 0
    best_score = -np.inf
    for lag in lags:
        # overlap of ref[i] with tgt[i - lag]
        lo = max(0, lag)
        hi = min(len(ref_env), len(tgt_env) + lag)
        if hi - lo < 8:
            continue
        a = ref_env[lo:hi]
        b = tgt_env[lo - lag:hi - lag]
        sa = a.std()
        sb = b.std()
        if sa < 1e-12 or sb < 1e-12:
            score = 0.0
        else:
            score = float(np.mean((a - a.mean()) * (b - b.mean())) / (sa * sb))
        if score > best_score:
            best_score = score
            best_lag = lag
    if not np.isfinite(best_score):
        raise DegenerateDataError("no usable overlap for sync estimation")
    # tgt[i] matches ref[i + lag], so its timestamps shift by +lag/rate
    return SyncEstimate(offset_s=best_lag / RATE_HZ, score=best_score)


def shift_stream(stream: RawStream, offset_s: float) -> RawStream:
    """Return a copy of the stream with all timestamps shifted by offset_s."""
    return RawStream(stream.modality, stream.timestamps + float(offset_s),
                     stream.values.copy())


@dataclass
class LabelTrack:
    """Interval class annotations over a session.

    ``intervals`` holds (start_s, end_s, class_id) rows with half-open
    spans [start, end); anything not covered is the null class 0.
    """

    intervals: list = field(default_factory=list)

    def __post_init__(self):
        cleaned = []
        for row in self.intervals:
            start, end, class_id = row
            start = float(start)
            end = float(end)
            class_id = int(class_id)
            if not (np.isfinite(start) and np.isfinite(end)):
                raise ValidationError("label interval bounds must be finite")
            if end <= start:
                raise ValidationError(
                    f"label interval [{start}, {end}) is empty or reversed")
            if not 0 <= class_id < NUM_CLASSES:
                raise ValidationError(
                    f"class id {class_id} outside [0, {NUM_CLASSES})")
            cleaned.append((start, end, class_id))
        cleaned.sort()
        for (s0, e0, _), (s1, _, _) in zip(cleaned, cleaned[1:]):
            if s1 < e0:
                raise ValidationError("label intervals overlap")
        self.intervals = cleaned

    def labels_at(self, timestamps: np.ndarray) -> np.ndarray:
        """Class id for each timestamp; null (0) outside all intervals."""
        timestamps = np.asarray(timestamps, dtype=np.float64)
        labels = np.zeros(timestamps.shape[0], dtype=np.int64)
        if not self.intervals:
            return labels
        starts = np.array([iv[0] for iv in self.intervals])
        ends = np.array([iv[1] for iv in self.intervals])
        ids = np.array([iv[2] for iv in self.intervals], dtype=np.int64)
        idx = np.searchsorted(starts, timestamps, side="right") - 1
        valid = idx >= 0
        inside = np.zeros_like(valid)
        inside[valid] = timestamps[valid] < ends[idx[valid]]
        labels[inside] = ids[idx[inside]]
        return labels


def parse_label_csv(path) -> LabelTrack:
    """Parse a label CSV with header ``start_s,end_s,class_id``."""
    rows = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            first = next(reader)
        except StopIteration:
            raise SchemaError(f"{path}: empty file") from None
        if tuple(first) != LABEL_COLUMNS:
            raise SchemaError(
                f"{path}: expected header {','.join(LABEL_COLUMNS)}, "
                f"got {','.join(first)}")
        for line_number, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 3:
                raise SchemaError(
                    f"{path}: line {line_number}: expected 3 fields, "
                    f"got {len(row)}")
            try:
                rows.append((float(row[0]), float(row[1]), int(row[2])))
            except ValueError as exc:
                raise StreamParseError(f"{path}: {exc}", line_number) from None
    return LabelTrack(rows)


@dataclass
class SensorRecording:
    """Both modalities of one session on a shared 30 Hz grid, labelled.

    Attributes
    ----------
    subject_id : int
    scenario : int
        Recording environment, one of 1 (stable indoor lighting),
        2 (dark room with dynamic light sources), 3 (cloudy outdoor).
    t0 : float
        Time of the first grid sample, seconds.
    als : ndarray of shape (n, 1)
        Lux readings.
    imu : ndarray of shape (n, 3)
        Acceleration readings.
    labels : ndarray of shape (n,)
        Per-sample class ids in [0, 10).
    """

    subject_id: int
    scenario: int
    t0: float
    als: np.ndarray
    imu: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        if self.scenario not in SCENARIOS:
            raise ValidationError(f"scenario must be one of {SCENARIOS}")
        self.als = np.asarray(self.als, dtype=np.float64)
        self.imu = np.asarray(self.imu, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        n = self.labels.shape[0]
        if self.als.shape != (n, 1) or self.imu.shape != (n, 3):
            raise ValidationError(
                f"modalities disagree on shape: als {self.als.shape}, "
                f"imu {self.imu.shape}, labels {self.labels.shape}")
        if n == 0:
            raise ValidationError("recording is empty")
        if (self.labels < 0).any() or (self.labels >= NUM_CLASSES).any():
            raise ValidationError("labels outside [0, 10)")
        if (self.als < 0).any():
            raise ValidationError("lux values must be non-negative")

    def __len__(self) -> int:
        return self.labels.shape[0]

    @property
    def timestamps(self) -> np.ndarray:
        return self.t0 + np.arange(len(self)) / RATE_HZ


def assemble_recording(subject_id: int, scenario: int, als: RawStream,
                       imu: RawStream, track: LabelTrack,
                       sync_offset_s: float = 0.0) -> SensorRecording:
    """Align, resample and label one session's streams.

    The ALS stream is shifted by ``sync_offset_s`` onto the IMU clock, both
    streams are resampled onto a common 30 Hz grid over their overlap, and
    per-sample labels are read off the track (interpreted on the IMU clock).
    """
    als = shift_stream(als, sync_offset_s)
    t0 = max(float(als.timestamps[0]), float(imu.timestamps[0]))
    t1 = min(float(als.timestamps[-1]), float(imu.timestamps[-1]))
    if t1 - t0 <= 1.0 / RATE_HZ:
        raise ValidationError("streams do not overlap after sync")
    als_u = resample_30hz(als, t0, t1)
    imu_u = resample_30hz(imu, t0, t1)
    labels = track.labels_at(imu_u.timestamps)
    return SensorRecording(subject_id=subject_id, scenario=scenario, t0=t0,
                           als=als_u.values, imu=imu_u.values, labels=labels)


@dataclass
class SubjectManifest:
    """Pointers to one subject's raw files plus the known sync offset."""

    subject_id: int
    scenario: int
    als_csv: str
    imu_csv: str
    labels_csv: str
    sync_offset_s: float = 0.0

    def to_dict(self) -> dict:
        return {
            "subject_id": self.subject_id,
            "scenario": self.scenario,
            "als_csv": self.als_csv,
            "imu_csv": self.imu_csv,
            "labels_csv": self.labels_csv,
            "sync_offset_s": self.sync_offset_s,
        }

    @classmethod
    def from_dict(cls, payload: dict) -> "SubjectManifest":
        missing = {f for f in ("subject_id", "scenario", "als_csv", "imu_csv",
                               "labels_csv") if f not in payload}
        if missing:
            raise SchemaError(f"manifest missing fields {sorted(missing)}")
        return cls(subject_id=int(payload["subject_id"]),
                   scenario=int(payload["scenario"]),
                   als_csv=str(payload["als_csv"]),
                   imu_csv=str(payload["imu_csv"]),
                   labels_csv=str(payload["labels_csv"]),
                   sync_offset_s=float(payload.get("sync_offset_s", 0.0)))


def write_subject_manifest(manifest: SubjectManifest, path) -> None:
    with open(path, "w") as fh:
        json.dump(manifest.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")


def read_subject_manifest(path) -> SubjectManifest:
    with open(path) as fh:
        try:
            payload = json.load(fh)
        except json.JSONDecodeError as exc:
            raise SchemaError(f"{path}: {exc}") from None
    return SubjectManifest.from_dict(payload)


def load_recording(manifest_path, estimate_sync: bool = False) -> SensorRecording:
    """Load one subject from its manifest file.

    With ``estimate_sync=True`` the manifest's offset is ignored and
    re-estimated from the data; otherwise the recorded offset is applied.
    """
    manifest_path = Path(manifest_path)
    manifest = read_subject_manifest(manifest_path)
    root = manifest_path.parent
    als = parse_stream_csv(root / manifest.als_csv, MODALITY_ALS)
    imu = parse_stream_csv(root / manifest.imu_csv, MODALITY_IMU)
    track = parse_label_csv(root / manifest.labels_csv)
    offset = manifest.sync_offset_s
    if estimate_sync:
        imu_u = resample_30hz(imu)
        als_u = resample_30hz(als)
        offset = estimate_sync_offset(imu_u, als_u).offset_s
    return assemble_recording(manifest.subject_id, manifest.scenario,
                              als, imu, track, sync_offset_s=offset)


def _num_workers() -> int:
    raw = os.environ.get("HAR_NUM_WORKERS", "")
    try:
        value = int(raw)
    except ValueError:
        return 1
    return max(1, value)


def load_study(root, estimate_sync: bool = False) -> list[SensorRecording]:
    """Load every ``subject_*/manifest.json`` under a study directory.

    Subjects load concurrently when the HAR_NUM_WORKERS environment
    variable is set above 1; results come back ordered by subject id.
    """
    root = Path(root)
    manifest_paths = sorted(root.glob("subject_*/manifest.json"))
    if not manifest_paths:
        raise ValidationError(f"no subject manifests under {root}")
    workers = _num_workers()
    if workers == 1:
        recordings = [load_recording(p, estimate_sync) for p in manifest_paths]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            recordings = list(pool.map(
                lambda p: load_recording(p, estimate_sync), manifest_paths))
    recordings.sort(key=lambda r: r.subject_id)
    seen = [r.subject_id for r in recordings]
    if len(set(seen)) != len(seen):
        raise ValidationError(f"duplicate subject ids in study: {seen}")
    return recordings


def _format_float(x: float) -> str:
    # repr round-trips doubles exactly, so rewriting a file is lossless
    return repr(float(x))


def write_stream_csv(stream: RawStream, path) -> None:
    """Write a RawStream in the same CSV format parse_stream_csv reads."""
    header = _HEADERS[stream.modality]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for t, row in zip(stream.timestamps, stream.values):
            writer.writerow([_format_float(t)] + [_format_float(v) for v in row])


def write_label_csv(track: LabelTrack, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(LABEL_COLUMNS)
        for start, end, class_id in track.intervals:
            writer.writerow([_format_float(start), _format_float(end),
                             str(class_id)])


def save_recordings_npz(recordings: Sequence[SensorRecording], path) -> None:
    """Bundle aligned recordings into one npz archive."""
    arrays = {}
    meta = []
    for rec in recordings:
        key = f"s{rec.subject_id:03d}"
        arrays[f"{key}_als"] = rec.als
        arrays[f"{key}_imu"] = rec.imu
        arrays[f"{key}_labels"] = rec.labels
        meta.append((rec.subject_id, rec.scenario, rec.t0))
    arrays["meta"] = np.array(meta, dtype=np.float64)
    np.savez(path, **arrays)


def load_recordings_npz(path) -> list[SensorRecording]:
    with np.load(path) as archive:
        if "meta" not in archive:
            raise SchemaError(f"{path}: not a recordings archive")
        out = []
        for subject_id, scenario, t0 in archive["meta"]:
            key = f"s{int(subject_id):03d}"
            out.append(SensorRecording(
                subject_id=int(subject_id), scenario=int(scenario),
                t0=float(t0), als=archive[f"{key}_als"],
                imu=archive[f"{key}_imu"],
                labels=archive[f"{key}_labels"].astype(np.int64)))
    return out


def subjects_by_scenario(recordings: Sequence[SensorRecording]) -> dict:
    """Map scenario id to the sorted subject ids recorded in it."""
    out: dict[int, list[int]] = {s: [] for s in SCENARIOS}
    for rec in recordings:
        out[rec.scenario].append(rec.subject_id)
    return {s: sorted(ids) for s, ids in out.items()}
