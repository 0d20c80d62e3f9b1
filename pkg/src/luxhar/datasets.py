"""Deterministic synthetic study generator.

Produces paired light/accelerometer sessions with known ground truth for
the full 16-subject study layout: subjects 1-10 under stable indoor
lighting (scenario 1), 11-13 in a dark room with dynamically switching
light sources (scenario 2), 14-16 outdoors under clouds (scenario 3).

Signal model, per subject and activity segment:

* accelerometer: per-class sinusoid mixtures (base + first harmonic) with
  per-subject frequency/amplitude jitter and random segment phase, iid
  Gaussian sensor noise, gravity on the z axis;
* ambient light: a scenario-dependent baseline multiplied by
  ``1 + depth_c * envelope(t)``, where the envelope is a rectified
  oscillation at the activity frequency and ``depth_c`` is a per-class
  modulation depth, plus sensor noise.  Scenario 1 keeps the baseline
  static, scenario 2 applies large abrupt log-level steps, scenario 3
  drifts slowly with high amplitude.

Everything derives from ``default_rng([seed, subject_id, scenario])``, so
any single recording regenerates bit-identically in isolation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .exceptions import ConfigError
from .ingest import (
    LabelTrack,
    MODALITY_ALS,
    MODALITY_IMU,
    RATE_HZ,
    RawStream,
    SensorRecording,
    SubjectManifest,
    write_label_csv,
    write_stream_csv,
    write_subject_manifest,
)

STUDY_SCENARIOS = {
    1: tuple(range(1, 11)),
    2: (11, 12, 13),
    3: (14, 15, 16),
}


@dataclass(frozen=True)
class ClassTemplate:
    """Motion and light-coupling parameters of one activity class."""

    frequency_hz: float
    axis_amplitude: tuple
    light_depth: float

    def __post_init__(self):
        if self.frequency_hz <= 0:
            raise ConfigError("frequency_hz must be positive")
        if len(self.axis_amplitude) != 3:
            raise ConfigError("axis_amplitude needs 3 entries")
        if self.light_depth < 0:
            raise ConfigError("light_depth must be non-negative")


def _default_templates() -> tuple:
    # classes 1..9; adjacent pairs share near-identical motion frequencies
    # but differ strongly in light coupling
    return (
        ClassTemplate(1.00, (2.0, 0.6, 0.8), 0.12),
        ClassTemplate(1.04, (1.9, 0.7, 0.75), 0.45),
        ClassTemplate(1.60, (0.8, 1.8, 0.5), 0.18),
        ClassTemplate(1.66, (0.85, 1.7, 0.6), 0.40),
        ClassTemplate(2.20, (1.2, 1.2, 1.5), 0.10),
        ClassTemplate(2.26, (1.15, 1.3, 1.4), 0.50),
        ClassTemplate(2.80, (0.5, 0.9, 2.0), 0.25),
        ClassTemplate(3.10, (1.6, 0.4, 1.1), 0.33),
        ClassTemplate(3.40, (0.9, 2.1, 0.9), 0.20),
    )


@dataclass(frozen=True)
class SynthConfig:
    """Knobs of the generator; defaults give a desk-scale study."""

    seed: int = 0
    session_seconds: float = 120.0
    gap_seconds: tuple = (1.2, 1.8)
    templates: tuple = field(default_factory=_default_templates)
    harmonic_scale: float = 0.35
    imu_noise_std: float = 0.5
    gravity: float = 9.81
    freq_jitter: float = 0.03
    amp_jitter: float = 0.08
    # scenario 1: stable indoor
    indoor_lux: float = 320.0
    indoor_flicker: float = 0.015
    # scenario 2: dark room, dynamic sources
    dark_lux: float = 40.0
    dark_step_seconds: tuple = (2.0, 5.0)
    dark_step_log_amp: float = 1.0
    dark_flicker: float = 0.04
    # scenario 3: cloudy outdoor, mid-level light with slow cloud drift
    outdoor_lux: float = 150.0
    outdoor_drift_log_amp: float = 0.4
    outdoor_flicker: float = 0.02
    lux_noise_std: float = 1.5
    sync_offset_samples: int = 0

    def __post_init__(self):
        if self.session_seconds < 30:
            raise ConfigError("session_seconds must be at least 30")
        if len(self.templates) != 9:
            raise ConfigError("need one template per non-null class")
        lo, hi = self.gap_seconds
        if not 0 < lo <= hi:
            raise ConfigError("gap_seconds must be an increasing positive pair")
        if self.imu_noise_std < 0 or self.lux_noise_std < 0:
            raise ConfigError("noise stds must be non-negative")


def with_light_depth(config: SynthConfig, depth: float) -> SynthConfig:
    """Copy of the config with every class's light coupling set to
    ``depth``; depth 0 severs the light/activity link entirely."""
    templates = tuple(replace(t, light_depth=float(depth))
                      for t in config.templates)
    return replace(config, templates=templates)


def _subject_rng(config: SynthConfig, subject_id: int,
                 scenario: int) -> np.random.Generator:
    return np.random.default_rng([int(config.seed), int(subject_id),
                                  int(scenario)])


def _schedule(config: SynthConfig, rng: np.random.Generator) -> LabelTrack:
    """Null-separated segments covering all nine activity classes."""
    gaps = rng.uniform(*config.gap_seconds, size=9)
    act_total = config.session_seconds - gaps.sum()
    act_dur = act_total / 9.0
    if act_dur < 2.0:
        raise ConfigError("session too short for nine activity segments")
    order = rng.permutation(np.arange(1, 10))
    intervals = []
    t = 0.0
    for gap, class_id in zip(gaps, order):
        t += gap
        intervals.append((t, t + act_dur, int(class_id)))
        t += act_dur
    return LabelTrack(intervals)


def _baseline(config: SynthConfig, scenario: int, t: np.ndarray,
              rng: np.random.Generator) -> np.ndarray:
    """Activity-independent lux level over the session."""
    n = t.shape[0]
    level = rng.uniform(0.85, 1.15)
    if scenario == 1:
        flicker = 1.0 + config.indoor_flicker * rng.standard_normal(n)
        return config.indoor_lux * level * flicker
    if scenario == 2:
        log_mult = np.zeros(n)
        pos = 0.0
        while pos < config.session_seconds:
            length = rng.uniform(*config.dark_step_seconds)
            value = rng.uniform(-config.dark_step_log_amp,
                                config.dark_step_log_amp)
            mask = (t >= pos) & (t < pos + length)
            log_mult[mask] = value
            pos += length
        flicker = 1.0 + config.dark_flicker * rng.standard_normal(n)
        return config.dark_lux * level * np.exp(log_mult) * flicker
    if scenario == 3:
        p1 = rng.uniform(25.0, 40.0)
        p2 = rng.uniform(50.0, 80.0)
        ph1 = rng.uniform(0, 2 * math.pi)
        ph2 = rng.uniform(0, 2 * math.pi)
        drift = config.outdoor_drift_log_amp * (
            0.6 * np.sin(2 * math.pi * t / p1 + ph1)
            + 0.4 * np.sin(2 * math.pi * t / p2 + ph2))
        flicker = 1.0 + config.outdoor_flicker * rng.standard_normal(n)
        return config.outdoor_lux * level * np.exp(drift) * flicker
    raise ConfigError(f"unknown scenario {scenario}")


def generate_recording_with_latents(config: SynthConfig, subject_id: int,
                                    scenario: int):
    """Generate one session and return (recording, latents).

    ``latents`` exposes the generator's hidden state for tests:
    ``baseline`` (pre-modulation lux), ``modulation`` (the depth-scaled
    activity envelope) and ``track`` (the ground-truth schedule).
    """
    if scenario not in STUDY_SCENARIOS:
        raise ConfigError(f"scenario must be one of {sorted(STUDY_SCENARIOS)}")
    rng = _subject_rng(config, subject_id, scenario)
    track = _schedule(config, rng)
    n = int(round(config.session_seconds * RATE_HZ))
    t = np.arange(n) / RATE_HZ
    labels = track.labels_at(t)

    freq_factor = 1.0 + config.freq_jitter * rng.standard_normal()
    amp_factor = 1.0 + config.amp_jitter * rng.standard_normal()

    imu = np.zeros((n, 3))
    imu[:, 2] = config.gravity
    modulation = np.zeros(n)
    for start, end, class_id in track.intervals:
        template = config.templates[class_id - 1]
        seg = (t >= start) & (t < end)
        tau = t[seg] - start
        f = template.frequency_hz * freq_factor
        phase = rng.uniform(0, 2 * math.pi)
        for axis in range(3):
            amp = template.axis_amplitude[axis] * amp_factor
            ph = phase + 2.1 * axis
            imu[seg, axis] += amp * (
                np.sin(2 * math.pi * f * tau + ph)
                + config.harmonic_scale * np.sin(4 * math.pi * f * tau + 2 * ph))
        envelope = 0.5 * (1.0 - np.cos(2 * math.pi * f * tau + phase))
        modulation[seg] = template.light_depth * envelope
    imu += config.imu_noise_std * rng.standard_normal((n, 3))

    baseline = _baseline(config, scenario, t, rng)
    lux = baseline * (1.0 + modulation)
    lux = lux + config.lux_noise_std * rng.standard_normal(n)
    lux = np.clip(lux, 0.0, None)

    recording = SensorRecording(subject_id=subject_id, scenario=scenario,
                                t0=0.0, als=lux[:, None], imu=imu,
                                labels=labels)
    latents = {"baseline": baseline, "modulation": modulation, "track": track}
    return recording, latents


def generate_recording(config: SynthConfig, subject_id: int,
                       scenario: int) -> SensorRecording:
    recording, _ = generate_recording_with_latents(config, subject_id,
                                                   scenario)
    return recording


def generate_study(config: SynthConfig) -> list:
    """All 16 subjects of the study layout, ordered by subject id."""
    recordings = []
    for scenario, subjects in STUDY_SCENARIOS.items():
        for subject_id in subjects:
            recordings.append(generate_recording(config, subject_id, scenario))
    recordings.sort(key=lambda r: r.subject_id)
    return recordings


def write_study(config: SynthConfig, out_dir) -> list:
    """Write the study as raw CSVs + manifests the ingest layer consumes.

    Each subject directory holds ``als.csv``, ``imu.csv``, ``labels.csv``
    and ``manifest.json``.  A configured sync offset displaces the ALS
    clock and is declared in the manifest, leaving alignment to the
    loader.  Returns the manifest paths.
    """
    out_dir = Path(out_dir)
    paths = []
    for scenario, subjects in STUDY_SCENARIOS.items():
        for subject_id in subjects:
            rec, latents = generate_recording_with_latents(config, subject_id,
                                                           scenario)
            sub_dir = out_dir / f"subject_{subject_id:02d}"
            sub_dir.mkdir(parents=True, exist_ok=True)
            offset = config.sync_offset_samples / RATE_HZ
            als = RawStream(MODALITY_ALS, rec.timestamps - offset, rec.als)
            imu = RawStream(MODALITY_IMU, rec.timestamps, rec.imu)
            write_stream_csv(als, sub_dir / "als.csv")
            write_stream_csv(imu, sub_dir / "imu.csv")
            write_label_csv(latents["track"], sub_dir / "labels.csv")
            manifest = SubjectManifest(
                subject_id=subject_id, scenario=scenario,
                als_csv="als.csv", imu_csv="imu.csv",
                labels_csv="labels.csv", sync_offset_s=offset)
            manifest_path = sub_dir / "manifest.json"
            write_subject_manifest(manifest, manifest_path)
            paths.append(manifest_path)
    return paths
