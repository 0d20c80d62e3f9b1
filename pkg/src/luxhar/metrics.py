"""Evaluation: confusion-based metrics, condition handling, comparisons.

Metrics are computed from an explicit 10x10 confusion matrix so every
number in a report traces back to integer counts.  Macro F1 always
averages over all ten classes; a class absent from both truth and
prediction contributes an F1 of zero by the 0/0 -> 0 convention.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np
import torch

from .exceptions import ConditionError, ShapeError, ValidationError
from .ingest import CLASS_NAMES, NUM_CLASSES
from .models import (
    VARIANT_CONTRALIGHT,
    VARIANT_INERTIAL,
    VARIANT_LIGHT,
    VARIANT_MULTILIGHT,
)
from .profiling import (
    GRAPH_INFERENCE,
    LatencyStats,
    count_flops,
    count_params,
    measure_latency,
)
from .windowing import WindowSet

CONDITION_NATIVE = "native"
CONDITION_ZERO_ALS = "imu_only_zero_als"
CONDITION_DISCARD = "imu_only_discard"
CONDITIONS = (CONDITION_NATIVE, CONDITION_ZERO_ALS, CONDITION_DISCARD)

# which conditions each variant can honestly serve
_VALID_CONDITIONS = {
    VARIANT_LIGHT: (CONDITION_NATIVE,),
    VARIANT_INERTIAL: (CONDITION_NATIVE,),
    VARIANT_MULTILIGHT: (CONDITION_NATIVE, CONDITION_ZERO_ALS),
    VARIANT_CONTRALIGHT: (CONDITION_NATIVE, CONDITION_DISCARD),
}


def confusion_matrix(y_true, y_pred, n_classes: int = NUM_CLASSES,
                     ) -> np.ndarray:
    """Counts[i, j] = windows of true class i predicted as class j."""
    y_true = np.asarray(y_true, dtype=np.int64)
    y_pred = np.asarray(y_pred, dtype=np.int64)
    if y_true.shape != y_pred.shape or y_true.ndim != 1:
        raise ShapeError("y_true and y_pred must be 1-d and equal length")
    if y_true.size == 0:
        raise ValidationError("cannot evaluate zero windows")
    for name, arr in (("y_true", y_true), ("y_pred", y_pred)):
        if arr.min() < 0 or arr.max() >= n_classes:
            raise ValidationError(f"{name} outside [0, {n_classes})")
    counts = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(counts, (y_true, y_pred), 1)
    return counts


def accuracy_from_confusion(counts: np.ndarray) -> float:
    return float(np.trace(counts) / counts.sum())


def per_class_f1(counts: np.ndarray) -> np.ndarray:
    """F1 per class with the 0/0 -> 0 convention."""
    tp = np.diag(counts).astype(np.float64)
    fp = counts.sum(axis=0) - tp
    fn = counts.sum(axis=1) - tp
    denom = 2 * tp + fp + fn
    out = np.zeros(counts.shape[0])
    nonzero = denom > 0
    out[nonzero] = 2 * tp[nonzero] / denom[nonzero]
    return out


def macro_f1(counts: np.ndarray) -> float:
    """Unweighted mean of per-class F1 over all classes."""
    return float(per_class_f1(counts).mean())


@dataclass
class EvalReport:
    """One model evaluated on one window set under one condition."""

    variant: str
    condition: str
    test_set: str
    scenario: int
    seed: int
    n_windows: int
    accuracy: float
    macro_f1: float
    per_class_f1: list
    confusion: list
    params: int
    flops: int
    latency: dict | None = None

    def to_dict(self) -> dict:
        return {
            "variant": self.variant,
            "condition": self.condition,
            "test_set": self.test_set,
            "scenario": self.scenario,
            "seed": self.seed,
            "n_windows": self.n_windows,
            "accuracy": self.accuracy,
            "macro_f1": self.macro_f1,
            "per_class_f1": self.per_class_f1,
            "confusion": self.confusion,
            "params": self.params,
            "flops": self.flops,
            "latency": self.latency,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n"

    @classmethod
    def from_dict(cls, payload: dict) -> "EvalReport":
        return cls(**payload)

    @classmethod
    def load(cls, path) -> "EvalReport":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def save(self, path) -> None:
        with open(path, "w") as fh:
            fh.write(self.to_json())


def default_condition(variant: str) -> str:
    """The deployment condition a variant is evaluated under by default."""
    if variant == VARIANT_MULTILIGHT:
        return CONDITION_ZERO_ALS
    if variant == VARIANT_CONTRALIGHT:
        return CONDITION_DISCARD
    return CONDITION_NATIVE


def check_condition(variant: str, condition: str) -> str:
    if condition not in CONDITIONS:
        raise ConditionError(f"unknown condition {condition!r}; expected one "
                             f"of {CONDITIONS}")
    if condition not in _VALID_CONDITIONS[variant]:
        raise ConditionError(f"condition {condition!r} is incompatible with "
                             f"variant {variant!r}")
    return condition


def _prediction_input(clf, windows: WindowSet, condition: str) -> np.ndarray:
    variant = clf.spec_.variant
    if variant == VARIANT_LIGHT:
        if not windows.als_present.all():
            raise ConditionError("light variant needs the ALS modality")
        return windows.als
    if variant == VARIANT_INERTIAL:
        if not windows.imu_present.all():
            raise ConditionError("inertial variant needs the IMU modality")
        return windows.imu
    if variant == VARIANT_MULTILIGHT:
        als = windows.als
        if condition == CONDITION_ZERO_ALS:
            als = np.zeros_like(als)
        elif not windows.als_present.all():
            raise ConditionError("native condition needs the ALS modality")
        return np.concatenate([als, windows.imu], axis=2)
    # contralight consumes accelerometer windows only, either condition
    if not windows.imu_present.all():
        raise ConditionError("contralight inference needs the IMU modality")
    return windows.imu


def evaluate(clf, windows: WindowSet, condition: str | None = None,
             test_set: str = "", measure_latency_passes: int = 0,
             latency_warmup: int = 50) -> EvalReport:
    """Evaluate a fitted classifier on labelled windows.

    The report is a deterministic function of model and data; latency is
    only measured (and only then included) when
    ``measure_latency_passes > 0``, because timing numbers would break
    byte-for-byte report reproducibility.
    """
    if len(windows) == 0:
        raise ValidationError("cannot evaluate zero windows")
    variant = clf.spec_.variant
    condition = check_condition(variant,
                                condition or default_condition(variant))
    X = _prediction_input(clf, windows, condition)
    y_pred = clf.predict(X)
    counts = confusion_matrix(windows.labels, y_pred)
    scenarios = np.unique(windows.scenarios)
    scenario = int(scenarios[0]) if scenarios.size == 1 else 0
    latency = None
    if measure_latency_passes > 0:
        single = torch.from_numpy(
            np.ascontiguousarray(X[:1], dtype=np.float32))
        model = clf.model_
        model.eval()
        fwd = clf._predict_forward

        def _one_pass():
            with torch.no_grad():
                fwd(model, single)

        latency = measure_latency(_one_pass, n_passes=measure_latency_passes,
                                  warmup=latency_warmup).to_dict()
    seed = int(getattr(clf, "seed", 0))
    return EvalReport(
        variant=variant, condition=condition, test_set=test_set,
        scenario=scenario, seed=seed, n_windows=len(windows),
        accuracy=accuracy_from_confusion(counts),
        macro_f1=macro_f1(counts),
        per_class_f1=[float(v) for v in per_class_f1(counts)],
        confusion=[[int(v) for v in row] for row in counts],
        params=count_params(clf.spec_, GRAPH_INFERENCE),
        flops=count_flops(clf.spec_, graph=GRAPH_INFERENCE),
        latency=latency)


def write_confusion_csv(report: EvalReport, path) -> None:
    """Confusion counts as CSV with named header row and column."""
    with open(path, "w") as fh:
        fh.write("true\\pred," + ",".join(CLASS_NAMES) + "\n")
        for name, row in zip(CLASS_NAMES, report.confusion):
            fh.write(name + "," + ",".join(str(v) for v in row) + "\n")


@dataclass
class ComparisonRow:
    """One variant's aggregate over seeds on one test set."""

    variant: str
    condition: str
    test_set: str
    scenario: int
    seeds: list
    accuracy_mean: float
    accuracy_std: float
    macro_f1_mean: float
    macro_f1_std: float
    params: int
    flops: int
    delta_macro_f1: float | None = None
    beats_baseline: bool | None = None

    def to_dict(self) -> dict:
        return {
            "variant": self.variant, "condition": self.condition,
            "test_set": self.test_set, "scenario": self.scenario,
            "seeds": self.seeds,
            "accuracy_mean": self.accuracy_mean,
            "accuracy_std": self.accuracy_std,
            "macro_f1_mean": self.macro_f1_mean,
            "macro_f1_std": self.macro_f1_std,
            "params": self.params, "flops": self.flops,
            "delta_macro_f1": self.delta_macro_f1,
            "beats_baseline": self.beats_baseline,
        }


def compare_models(reports: Sequence[EvalReport],
                   baseline_variant: str | None = None) -> dict:
    """Aggregate reports over seeds per (variant, condition, test set).

    Means and stds (population convention) are taken across seeds.  With a
    baseline variant given, every other variant's row carries its macro-F1
    delta against the baseline on the same test set, and a flag for
    whether it comes out ahead.
    """
    if not reports:
        raise ValidationError("no reports to compare")
    groups: dict = {}
    for rep in reports:
        key = (rep.variant, rep.condition, rep.test_set)
        groups.setdefault(key, []).append(rep)
    rows = []
    for (variant, condition, test_set), members in sorted(groups.items()):
        seeds = sorted(int(m.seed) for m in members)
        if len(set(seeds)) != len(seeds):
            raise ValidationError(
                f"duplicate seed among reports for {variant}/{test_set}")
        acc = np.array([m.accuracy for m in members])
        f1 = np.array([m.macro_f1 for m in members])
        rows.append(ComparisonRow(
            variant=variant, condition=condition, test_set=test_set,
            scenario=members[0].scenario, seeds=seeds,
            accuracy_mean=float(acc.mean()), accuracy_std=float(acc.std()),
            macro_f1_mean=float(f1.mean()), macro_f1_std=float(f1.std()),
            params=members[0].params, flops=members[0].flops))
    if baseline_variant is not None:
        base = {row.test_set: row for row in rows
                if row.variant == baseline_variant}
        if not base:
            raise ValidationError(
                f"baseline variant {baseline_variant!r} has no reports")
        for row in rows:
            if row.variant == baseline_variant or row.test_set not in base:
                continue
            ref = base[row.test_set]
            row.delta_macro_f1 = row.macro_f1_mean - ref.macro_f1_mean
            row.beats_baseline = row.macro_f1_mean > ref.macro_f1_mean
    return {
        "baseline": baseline_variant,
        "rows": [row.to_dict() for row in rows],
    }


def format_comparison(comparison: Mapping) -> str:
    """Fixed-width text table for a comparison dict."""
    headers = ("variant", "condition", "test", "macro_f1", "accuracy",
               "params", "MFLOP", "d_f1", "ahead")
    lines = ["  ".join(f"{h:>12}" for h in headers)]
    for row in comparison["rows"]:
        f1 = f"{row['macro_f1_mean']:.4f}+-{row['macro_f1_std']:.4f}"
        acc = f"{row['accuracy_mean']:.4f}+-{row['accuracy_std']:.4f}"
        delta = ("" if row["delta_macro_f1"] is None
                 else f"{row['delta_macro_f1']:+.4f}")
        ahead = ("" if row["beats_baseline"] is None
                 else ("yes" if row["beats_baseline"] else "no"))
        cells = (row["variant"], row["condition"], row["test_set"], f1, acc,
                 str(row["params"]), f"{row['flops'] / 1e6:.3f}", delta, ahead)
        lines.append("  ".join(f"{c:>12}" for c in cells))
    if comparison.get("baseline"):
        lines.append(f"baseline: {comparison['baseline']}")
    return "\n".join(lines) + "\n"
