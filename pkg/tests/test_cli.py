"""End-to-end checks for the command line interface.

Everything runs in process through ``main(argv)`` so exit codes, stdout
lines and the ``run.json`` provenance records are exercised exactly as a
shell user would see them.  The module fixture drives a full pipeline
(synth -> window -> train -> eval) once on a short session with a tiny
architecture; individual tests re-run only the cheap subcommands.
"""

import hashlib
import json

import numpy as np
import pytest

from luxhar.cli import main
from luxhar.estimators import load_classifier
from luxhar.metrics import EvalReport
from luxhar.windowing import load_window_splits

SESSION_SECONDS = 40.0

# small enough to train in seconds, big enough to exercise every layer
TINY_ARCH = {
    "conv_channels": 8,
    "lstm_hidden": 8,
    "embed_dim": 16,
    "classifier_hidden": 16,
}


def _sha256(path):
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _run_json(out_dir):
    with open(out_dir / "run.json") as fh:
        return json.load(fh)


def _stderr_record(capsys):
    err = capsys.readouterr().err.strip().splitlines()
    assert len(err) == 1, err
    return json.loads(err[0])


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    synth = root / "synth"
    assert main(["synth", "--out", str(synth), "--seed", "0",
                 "--session-seconds", str(SESSION_SECONDS)]) == 0

    windows = root / "windows"
    assert main(["window", "--data", str(synth), "--out", str(windows),
                 "--step", "30"]) == 0

    cfg_path = root / "train.json"
    cfg_path.write_text(json.dumps(TINY_ARCH))
    runs = {}
    for model, extra in (("inertial", []),
                         ("contralight", ["--margin", "2.0"])):
        run_dir = root / f"run_{model}"
        assert main(["train", "--data", str(windows), "--model", model,
                     "--out", str(run_dir), "--seed", "0",
                     "--config", str(cfg_path), "--epochs", "2",
                     "--lr", "0.002", "--batch-size", "64"] + extra) == 0
        runs[model] = run_dir

    evals = {}
    for model in runs:
        out = root / f"eval_{model}"
        assert main(["eval", "--run", str(runs[model]),
                     "--data", str(windows), "--test-set", "1",
                     "--out", str(out)]) == 0
        evals[model] = out

    return {"root": root, "synth": synth, "windows": windows,
            "runs": runs, "evals": evals}


class TestSynth:
    def test_study_layout(self, workspace):
        data = workspace["synth"] / "data"
        subjects = sorted(p.name for p in data.iterdir() if p.is_dir())
        assert len(subjects) == 16
        assert subjects[0] == "subject_01" and subjects[-1] == "subject_16"
        for sub in subjects:
            assert (data / sub / "manifest.json").exists()

    def test_run_record_digests(self, workspace):
        record = _run_json(workspace["synth"])
        assert record["command"] == "synth"
        assert record["parameters"]["seed"] == 0
        assert record["version"]
        assert record["artifacts"]
        for rel, digest in record["artifacts"].items():
            assert _sha256(workspace["synth"] / rel) == digest

    def test_same_seed_same_artifacts(self, workspace, tmp_path):
        again = tmp_path / "again"
        assert main(["synth", "--out", str(again), "--seed", "0",
                     "--session-seconds", str(SESSION_SECONDS)]) == 0
        assert (_run_json(again)["artifacts"]
                == _run_json(workspace["synth"])["artifacts"])

    def test_unknown_config_key_fails(self, tmp_path, capsys):
        cfg = tmp_path / "bad.json"
        cfg.write_text(json.dumps({"lunar_phase": 1}))
        code = main(["synth", "--out", str(tmp_path / "out"),
                     "--config", str(cfg)])
        assert code == 1
        record = _stderr_record(capsys)
        assert record["error"] == "TypeError"
        assert "lunar_phase" in record["message"]

    def test_config_must_be_object(self, tmp_path, capsys):
        cfg = tmp_path / "list.json"
        cfg.write_text("[1, 2]")
        assert main(["synth", "--out", str(tmp_path / "out"),
                     "--config", str(cfg)]) == 1
        assert _stderr_record(capsys)["error"] == "ConfigError"


class TestWindow:
    # session 40 s at 30 Hz, size 60, step 30: 39 windows per subject
    PER_SUBJECT = 39

    def test_outputs_present(self, workspace):
        out = workspace["windows"]
        for name in ("windows.npz", "norm_stats.json", "splits.json"):
            assert (out / name).exists()
        record = _run_json(out)
        assert sorted(record["artifacts"]) == [
            "norm_stats.json", "splits.json", "windows.npz"]
        for rel, digest in record["artifacts"].items():
            assert _sha256(out / rel) == digest

    def test_split_sizes(self, workspace):
        splits = load_window_splits(workspace["windows"] / "windows.npz")
        assert set(splits) == {"train", "val", "test1", "test2", "test3"}
        n = self.PER_SUBJECT
        assert len(splits["train"]) + len(splits["val"]) == 7 * n
        for name in ("test1", "test2", "test3"):
            assert len(splits[name]) == 3 * n

    def test_ingest_then_window_matches_study(self, workspace, tmp_path):
        ing = tmp_path / "ingested"
        assert main(["ingest", "--data", str(workspace["synth"] / "data"),
                     "--out", str(ing)]) == 0
        assert (ing / "recordings.npz").exists()
        record = _run_json(ing)
        assert record["command"] == "ingest"
        assert list(record["artifacts"]) == ["recordings.npz"]

        # the windower accepts the ingest directory and the npz itself
        from_dir = tmp_path / "w_dir"
        assert main(["window", "--data", str(ing), "--out", str(from_dir),
                     "--step", "30"]) == 0
        from_file = tmp_path / "w_file"
        assert main(["window", "--data", str(ing / "recordings.npz"),
                     "--out", str(from_file), "--step", "30"]) == 0

        base = load_window_splits(workspace["windows"] / "windows.npz")
        for alt_dir in (from_dir, from_file):
            alt = load_window_splits(alt_dir / "windows.npz")
            for name in base:
                assert np.array_equal(base[name].als, alt[name].als)
                assert np.array_equal(base[name].imu, alt[name].imu)
                assert np.array_equal(base[name].labels, alt[name].labels)

    def test_missing_data_dir_fails(self, tmp_path, capsys):
        code = main(["window", "--data", str(tmp_path / "nowhere"),
                     "--out", str(tmp_path / "out")])
        assert code == 1
        assert "error" in _stderr_record(capsys)


class TestTrain:
    def test_run_directory_contents(self, workspace):
        for run_dir in workspace["runs"].values():
            assert (run_dir / "checkpoint" / "spec.json").exists()
            assert (run_dir / "checkpoint" / "manifest.json").exists()
            assert (run_dir / "train_record.json").exists()
            assert (run_dir / "train_log.jsonl").exists()
            assert (run_dir / "loss_log.jsonl").exists()

    def test_run_record_covers_checkpoint(self, workspace):
        run_dir = workspace["runs"]["inertial"]
        record = _run_json(run_dir)
        assert record["command"] == "train"
        assert record["parameters"]["model"] == "inertial"
        assert record["parameters"]["config"]["conv_channels"] == 8
        assert record["artifacts"]
        for rel, digest in record["artifacts"].items():
            assert rel.startswith("checkpoint/")
            assert _sha256(run_dir / rel) == digest

    def test_margin_recorded_for_contralight(self, workspace):
        record = _run_json(workspace["runs"]["contralight"])
        assert record["parameters"]["config"]["margin"] == 2.0
        clf = load_classifier(workspace["runs"]["contralight"])
        assert clf.get_params()["margin"] == 2.0

    def test_trained_model_reloads(self, workspace):
        clf = load_classifier(workspace["runs"]["inertial"])
        assert clf.spec_.variant == "inertial"
        assert clf.record_.stopped_epoch <= 2
        assert clf.record_.best_epoch >= 1

    def test_unknown_config_key_fails(self, workspace, tmp_path, capsys):
        cfg = tmp_path / "bad.json"
        cfg.write_text(json.dumps({"conv_channels": 8, "wishful": 1}))
        code = main(["train", "--data", str(workspace["windows"]),
                     "--model", "inertial", "--out", str(tmp_path / "out"),
                     "--config", str(cfg)])
        assert code == 1
        record = _stderr_record(capsys)
        assert record["error"] == "ConfigError"
        assert "wishful" in record["message"]


class TestEval:
    def test_report_contents(self, workspace):
        report = EvalReport.load(workspace["evals"]["inertial"] /
                                 "report.json")
        assert report.variant == "inertial"
        assert report.test_set == "test1"
        assert report.condition == "native"
        assert 0.0 <= report.accuracy <= 1.0
        assert 0.0 <= report.macro_f1 <= 1.0
        confusion = np.asarray(report.confusion)
        assert confusion.shape == (10, 10)
        assert confusion.sum() == 3 * TestWindow.PER_SUBJECT

    def test_contralight_defaults_to_discard(self, workspace):
        report = EvalReport.load(workspace["evals"]["contralight"] /
                                 "report.json")
        assert report.condition == "imu_only_discard"

    def test_confusion_csv(self, workspace):
        lines = (workspace["evals"]["inertial"] /
                 "confusion.csv").read_text().strip().splitlines()
        assert len(lines) == 11
        assert lines[0].startswith("true\\pred,")
        total = sum(int(v) for line in lines[1:]
                    for v in line.split(",")[1:])
        assert total == 3 * TestWindow.PER_SUBJECT

    def test_run_record(self, workspace):
        record = _run_json(workspace["evals"]["inertial"])
        assert record["command"] == "eval"
        assert record["parameters"]["condition"] == "default"
        assert sorted(record["artifacts"]) == ["confusion.csv", "report.json"]

    def test_invalid_condition_for_variant(self, workspace, tmp_path,
                                           capsys):
        code = main(["eval", "--run", str(workspace["runs"]["inertial"]),
                     "--data", str(workspace["windows"]),
                     "--test-set", "1", "--condition", "zero-als",
                     "--out", str(tmp_path / "out")])
        assert code == 1
        assert _stderr_record(capsys)["error"] == "ConditionError"

    def test_explicit_condition_lands_in_report(self, workspace, tmp_path):
        out = tmp_path / "native"
        assert main(["eval", "--run", str(workspace["runs"]["contralight"]),
                     "--data", str(workspace["windows"]),
                     "--test-set", "2", "--condition", "native",
                     "--out", str(out)]) == 0
        report = EvalReport.load(out / "report.json")
        assert report.condition == "native"
        assert report.test_set == "test2"

    def test_missing_run_dir(self, workspace, tmp_path, capsys):
        code = main(["eval", "--run", str(tmp_path / "ghost"),
                     "--data", str(workspace["windows"]),
                     "--test-set", "1", "--out", str(tmp_path / "out")])
        assert code == 1
        assert "error" in _stderr_record(capsys)


class TestBench:
    def test_bench_payload(self, workspace, tmp_path, capsys):
        out = tmp_path / "bench"
        assert main(["bench", "--run", str(workspace["runs"]["inertial"]),
                     "--passes", "3", "--warmup", "1",
                     "--out", str(out)]) == 0
        stdout = capsys.readouterr().out
        assert "median" in stdout
        with open(out / "bench.json") as fh:
            payload = json.load(fh)
        assert payload["variant"] == "inertial"
        assert payload["params"] > 0
        assert payload["flops"] > 0
        assert payload["latency"]["n_passes"] == 3
        assert payload["latency"]["median_ms"] > 0
        assert list(_run_json(out)["artifacts"]) == ["bench.json"]


class TestFlops:
    def test_table_lists_all_variants(self, capsys):
        assert main(["flops"]) == 0
        lines = capsys.readouterr().out.strip().splitlines()
        assert len(lines) == 5
        assert lines[0].split() == ["variant", "params", "train", "params",
                                    "MFLOP"]
        by_variant = {line.split()[0]: line for line in lines[1:]}
        assert set(by_variant) == {"light", "inertial", "multilight",
                                   "contralight"}
        assert "339466" in by_variant["light"]
        assert "340106" in by_variant["inertial"]

    def test_single_model_with_out(self, tmp_path, capsys):
        out = tmp_path / "flops"
        assert main(["flops", "--model", "light", "--out", str(out)]) == 0
        capsys.readouterr()
        with open(out / "flops.json") as fh:
            rows = json.load(fh)["rows"]
        assert len(rows) == 1
        assert rows[0]["variant"] == "light"
        assert rows[0]["params_inference"] == 339466


class TestCompare:
    def _report_paths(self, workspace):
        return [str(workspace["evals"]["inertial"] / "report.json"),
                str(workspace["evals"]["contralight"] / "report.json")]

    def test_compare_with_baseline(self, workspace, tmp_path, capsys):
        out = tmp_path / "cmp"
        code = main(["compare", *self._report_paths(workspace),
                     "--baseline", "inertial", "--out", str(out)])
        assert code == 0
        stdout = capsys.readouterr().out
        assert "inertial" in stdout and "contralight" in stdout
        assert "baseline: inertial" in stdout
        assert (out / "comparison.txt").read_text() == stdout
        with open(out / "comparison.json") as fh:
            comparison = json.load(fh)
        variants = {row["variant"] for row in comparison["rows"]}
        assert variants == {"inertial", "contralight"}

    def test_missing_baseline_fails(self, workspace, tmp_path, capsys):
        code = main(["compare", *self._report_paths(workspace),
                     "--baseline", "light"])
        assert code == 1
        assert "error" in _stderr_record(capsys)

    def test_unreadable_report_fails(self, tmp_path, capsys):
        code = main(["compare", str(tmp_path / "missing.json")])
        assert code == 1
        assert "error" in _stderr_record(capsys)


class TestUsage:
    def test_no_arguments(self, capsys):
        with pytest.raises(SystemExit) as exc:
            main([])
        assert exc.value.code == 2
        capsys.readouterr()

    def test_unknown_subcommand(self, capsys):
        with pytest.raises(SystemExit) as exc:
            main(["transmogrify"])
        assert exc.value.code == 2
        capsys.readouterr()

    def test_train_requires_model(self, tmp_path, capsys):
        with pytest.raises(SystemExit) as exc:
            main(["train", "--data", str(tmp_path), "--out", str(tmp_path)])
        assert exc.value.code == 2
        capsys.readouterr()

    def test_test_set_choices(self, tmp_path, capsys):
        with pytest.raises(SystemExit) as exc:
            main(["eval", "--run", str(tmp_path), "--data", str(tmp_path),
                  "--test-set", "4", "--out", str(tmp_path)])
        assert exc.value.code == 2
        capsys.readouterr()
