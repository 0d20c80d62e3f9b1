"""Command-line pipeline: synth -> ingest -> window -> train -> eval.

Every subcommand that writes artifacts also writes a ``run.json`` next to
them recording the resolved parameters and a digest of each produced
file, so a run can be audited and repeated.  Errors print a one-line JSON
record to stderr and exit 1; usage errors exit 2.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
from pathlib import Path

import numpy as np
import torch

from . import __version__
from .datasets import SynthConfig, write_study
from .estimators import load_classifier, make_classifier
from .exceptions import ConfigError
from .ingest import (
    load_recordings_npz,
    load_study,
    save_recordings_npz,
)
from .metrics import (
    CONDITION_DISCARD,
    CONDITION_NATIVE,
    CONDITION_ZERO_ALS,
    EvalReport,
    compare_models,
    evaluate,
    format_comparison,
    write_confusion_csv,
)
from .models import VARIANTS, default_model_spec
from .profiling import (
    GRAPH_INFERENCE,
    GRAPH_TRAINING,
    count_flops,
    count_params,
    measure_latency,
)
from .windowing import (
    SplitSpec,
    fit_norm_stats,
    load_window_splits,
    make_splits,
    normalize,
    save_window_splits,
    write_split_manifest,
)

MODEL_CHOICES = ("light", "inertial", "multilight", "contralight")
CONDITION_CHOICES = ("native", "zero-als", "discard-als")

_CONDITION_BY_FLAG = {
    "native": CONDITION_NATIVE,
    "zero-als": CONDITION_ZERO_ALS,
    "discard-als": CONDITION_DISCARD,
}

_TRAIN_CONFIG_KEYS = {
    "learning_rate", "max_epochs", "patience", "batch_size",
    "validation_fraction", "seed", "margin", "eq2_literal",
    "expand_modalities", "conv_channels", "lstm_hidden", "embed_dim",
    "classifier_hidden", "dropout", "window_len",
}


def _sha256_file(path: Path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def _write_run_record(out_dir: Path, command: str, parameters: dict,
                      artifacts) -> None:
    record = {
        "command": command,
        "parameters": parameters,
        "version": __version__,
        "artifacts": {
            str(p.relative_to(out_dir)): _sha256_file(p)
            for p in sorted(artifacts)
        },
    }
    with open(out_dir / "run.json", "w") as fh:
        json.dump(record, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _load_json_config(path) -> dict:
    if path is None:
        return {}
    with open(path) as fh:
        payload = json.load(fh)
    if not isinstance(payload, dict):
        raise ConfigError(f"{path}: config must be a JSON object")
    return payload


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


# ----------------------------------------------------------------------
# subcommands


def _cmd_synth(args) -> int:
    out = _out_dir(args)
    overrides = _load_json_config(args.config)
    overrides["seed"] = args.seed
    if args.session_seconds is not None:
        overrides["session_seconds"] = args.session_seconds
    config = SynthConfig(**overrides)
    data_dir = out / "data"
    manifest_paths = write_study(config, data_dir)
    artifacts = [p for mp in manifest_paths for p in mp.parent.iterdir()]
    _write_run_record(out, "synth",
                      {"seed": args.seed, "config": overrides}, artifacts)
    print(f"wrote {len(manifest_paths)} subjects under {data_dir}")
    return 0


def _cmd_ingest(args) -> int:
    out = _out_dir(args)
    recordings = load_study(args.data, estimate_sync=args.estimate_sync)
    npz_path = out / "recordings.npz"
    save_recordings_npz(recordings, npz_path)
    _write_run_record(out, "ingest",
                      {"data": str(args.data),
                       "estimate_sync": bool(args.estimate_sync)},
                      [npz_path])
    print(f"ingested {len(recordings)} subjects -> {npz_path}")
    return 0


def _load_recordings_anywhere(data) -> list:
    data = Path(data)
    if data.is_file():
        return load_recordings_npz(data)
    if (data / "recordings.npz").exists():
        return load_recordings_npz(data / "recordings.npz")
    if (data / "data").is_dir():
        return load_study(data / "data")
    return load_study(data)


def _cmd_window(args) -> int:
    out = _out_dir(args)
    recordings = _load_recordings_anywhere(args.data)
    spec = SplitSpec(val_fraction=args.val_fraction)
    splits = make_splits(recordings, spec, seed=args.seed,
                         size=args.size, step=args.step)
    stats = fit_norm_stats(splits["train"])
    normalized = {name: normalize(ws, stats) for name, ws in splits.items()}
    windows_path = out / "windows.npz"
    save_window_splits(normalized, windows_path)
    stats_path = out / "norm_stats.json"
    stats.save(stats_path)
    splits_path = out / "splits.json"
    write_split_manifest(splits, splits_path)
    _write_run_record(out, "window",
                      {"data": str(args.data), "seed": args.seed,
                       "size": args.size, "step": args.step,
                       "val_fraction": args.val_fraction},
                      [windows_path, stats_path, splits_path])
    sizes = {name: len(ws) for name, ws in sorted(splits.items())}
    print(f"windows: {sizes}")
    return 0


def _training_matrix(variant: str, windows) -> tuple:
    """(X, y) for fit, matching the variant's input channels."""
    if variant == "light":
        return windows.als, windows.labels
    if variant == "inertial":
        return windows.imu, windows.labels
    X = np.concatenate([windows.als, windows.imu], axis=2)
    return X, windows.labels


def _cmd_train(args) -> int:
    out = _out_dir(args)
    splits = load_window_splits(Path(args.data) / "windows.npz")
    params = _load_json_config(args.config)
    unknown = set(params) - _TRAIN_CONFIG_KEYS
    if unknown:
        raise ConfigError(f"unknown config keys {sorted(unknown)}")
    for flag, key in (("seed", "seed"), ("lr", "learning_rate"),
                      ("epochs", "max_epochs"), ("patience", "patience"),
                      ("batch_size", "batch_size"), ("margin", "margin")):
        value = getattr(args, flag)
        if value is not None:
            params[key] = value
    if args.eq2_literal:
        params["eq2_literal"] = True
    params.setdefault("seed", 0)
    if args.model != "contralight":
        params.pop("margin", None)
        params.pop("eq2_literal", None)
    if args.model != "multilight":
        params.pop("expand_modalities", None)
    clf = make_classifier(args.model, **params)
    X_train, y_train = _training_matrix(args.model, splits["train"])
    X_val, y_val = _training_matrix(args.model, splits["val"])
    clf.fit(X_train, y_train, validation_data=(X_val, y_val))
    clf.save(out)
    checkpoint_files = sorted((out / "checkpoint").iterdir())
    _write_run_record(out, "train",
                      {"data": str(args.data), "model": args.model,
                       "config": params},
                      checkpoint_files)
    rec = clf.record_
    print(f"{args.model}: best epoch {rec.best_epoch} "
          f"(val loss {rec.best_val_loss:.4f}), stopped at "
          f"{rec.stopped_epoch}, {rec.total_steps} steps")
    return 0


def _cmd_eval(args) -> int:
    out = _out_dir(args)
    clf = load_classifier(args.run)
    splits = load_window_splits(Path(args.data) / "windows.npz")
    test_name = f"test{args.test_set}"
    if test_name not in splits:
        raise ConfigError(f"no split named {test_name!r}")
    condition = (_CONDITION_BY_FLAG[args.condition]
                 if args.condition else None)
    report = evaluate(clf, splits[test_name], condition=condition,
                      test_set=test_name)
    report_path = out / "report.json"
    report.save(report_path)
    confusion_path = out / "confusion.csv"
    write_confusion_csv(report, confusion_path)
    _write_run_record(out, "eval",
                      {"run": str(args.run), "data": str(args.data),
                       "test_set": args.test_set,
                       "condition": args.condition or "default"},
                      [report_path, confusion_path])
    print(f"{report.variant} on {test_name} [{report.condition}]: "
          f"accuracy {report.accuracy:.4f}, macro F1 {report.macro_f1:.4f}")
    return 0


def _cmd_bench(args) -> int:
    out = _out_dir(args)
    clf = load_classifier(args.run)
    spec = clf.spec_
    channels = 4 if spec.variant in ("multilight", "contralight") else (
        1 if spec.variant == "light" else 3)
    rng = np.random.default_rng(0)
    window = rng.standard_normal((1, spec.window_len, channels))
    window = np.ascontiguousarray(window, dtype=np.float32)
    xb = torch.from_numpy(window)
    model = clf.model_
    model.eval()

    def _one_pass():
        with torch.no_grad():
            clf._predict_forward(model, xb)

    stats = measure_latency(_one_pass, n_passes=args.passes,
                            warmup=args.warmup)
    payload = {
        "variant": spec.variant,
        "params": count_params(spec, GRAPH_INFERENCE),
        "flops": count_flops(spec, graph=GRAPH_INFERENCE),
        "latency": stats.to_dict(),
    }
    bench_path = out / "bench.json"
    with open(bench_path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")
    _write_run_record(out, "bench",
                      {"run": str(args.run), "passes": args.passes,
                       "warmup": args.warmup}, [bench_path])
    print(f"{spec.variant}: median {stats.median_ms:.3f} ms over "
          f"{stats.n_passes} passes")
    return 0


def _cmd_flops(args) -> int:
    variants = [args.model] if args.model else list(MODEL_CHOICES)
    rows = []
    for variant in variants:
        spec = default_model_spec(variant)
        rows.append({
            "variant": variant,
            "params_inference": count_params(spec, GRAPH_INFERENCE),
            "params_training": count_params(spec, GRAPH_TRAINING),
            "flops_per_window": count_flops(spec, graph=GRAPH_INFERENCE),
        })
    header = f"{'variant':>12}  {'params':>10}  {'train params':>12}  {'MFLOP':>10}"
    print(header)
    for row in rows:
        print(f"{row['variant']:>12}  {row['params_inference']:>10}  "
              f"{row['params_training']:>12}  "
              f"{row['flops_per_window'] / 1e6:>10.3f}")
    if args.out:
        out = _out_dir(args)
        flops_path = out / "flops.json"
        with open(flops_path, "w") as fh:
            json.dump({"rows": rows}, fh, indent=2, sort_keys=True)
            fh.write("\n")
        _write_run_record(out, "flops", {"model": args.model}, [flops_path])
    return 0


def _cmd_compare(args) -> int:
    reports = [EvalReport.load(p) for p in args.reports]
    comparison = compare_models(reports, baseline_variant=args.baseline)
    text = format_comparison(comparison)
    print(text, end="")
    if args.out:
        out = _out_dir(args)
        json_path = out / "comparison.json"
        with open(json_path, "w") as fh:
            json.dump(comparison, fh, indent=2, sort_keys=True)
            fh.write("\n")
        text_path = out / "comparison.txt"
        with open(text_path, "w") as fh:
            fh.write(text)
        _write_run_record(out, "compare",
                          {"reports": [str(p) for p in args.reports],
                           "baseline": args.baseline},
                          [json_path, text_path])
    return 0


# ----------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="luxhar",
        description="Activity recognition from ambient light and motion")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic study")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--config", default=None, help="JSON generator overrides")
    p.add_argument("--session-seconds", type=float, default=None)
    p.set_defaults(func=_cmd_synth)

    p = sub.add_parser("ingest", help="parse, sync and resample raw CSVs")
    p.add_argument("--data", required=True, help="study directory")
    p.add_argument("--out", required=True)
    p.add_argument("--estimate-sync", action="store_true",
                   help="re-estimate clock offsets instead of trusting "
                        "the manifests")
    p.set_defaults(func=_cmd_ingest)

    p = sub.add_parser("window", help="window, normalize and split")
    p.add_argument("--data", required=True,
                   help="study directory or ingest output")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--size", type=int, default=60)
    p.add_argument("--step", type=int, default=15)
    p.add_argument("--val-fraction", type=float, default=0.1)
    p.set_defaults(func=_cmd_window)

    p = sub.add_parser("train", help="train one variant")
    p.add_argument("--data", required=True, help="window output directory")
    p.add_argument("--model", required=True, choices=MODEL_CHOICES)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--config", default=None, help="JSON training config")
    p.add_argument("--lr", type=float, default=None)
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--patience", type=int, default=None)
    p.add_argument("--batch-size", type=int, default=None)
    p.add_argument("--margin", type=float, default=None)
    p.add_argument("--eq2-literal", action="store_true")
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("eval", help="evaluate a trained run on a test set")
    p.add_argument("--run", required=True, help="train output directory")
    p.add_argument("--data", required=True, help="window output directory")
    p.add_argument("--test-set", type=int, required=True, choices=(1, 2, 3))
    p.add_argument("--condition", choices=CONDITION_CHOICES, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("bench", help="measure single-window latency")
    p.add_argument("--run", required=True)
    p.add_argument("--passes", type=int, default=1000)
    p.add_argument("--warmup", type=int, default=50)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_bench)

    p = sub.add_parser("flops", help="print parameter and FLOP counts")
    p.add_argument("--model", choices=MODEL_CHOICES, default=None)
    p.add_argument("--out", default=None)
    p.set_defaults(func=_cmd_flops)

    p = sub.add_parser("compare", help="aggregate evaluation reports")
    p.add_argument("reports", nargs="+")
    p.add_argument("--baseline", choices=MODEL_CHOICES, default=None)
    p.add_argument("--out", default=None)
    p.set_defaults(func=_cmd_compare)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except Exception as exc:  # noqa: BLE001 - single reporting funnel
        record = {"error": type(exc).__name__, "message": str(exc)}
        print(json.dumps(record), file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
