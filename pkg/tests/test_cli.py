"""Command-line surface: configs, artifacts, determinism, exit codes."""

import json
import os

import numpy as np
import pytest

from glrcl.cli import main, resolve_config
from glrcl.errors import ConfigError
from glrcl.metrics import matrix_from_csv


def write_json(path, obj):
    path.write_text(json.dumps(obj, indent=2))
    return str(path)


def synth_spec(num_domains=2, train_per_class=40, eval_per_class=30, dim=4,
               **overrides):
    spec = {
        "num_domains": num_domains,
        "classes": 2,
        "dim": dim,
        "train_per_class": train_per_class,
        "eval_per_class": eval_per_class,
        "within_sd": 1.0,
        "seed": 99,
        "rotations_deg": [40.0 * t for t in range(num_domains)],
    }
    spec.update(overrides)
    return spec


def base_config(out_dir, method="naive", **overrides):
    cfg = {
        "seed": 7,
        "method": method,
        "stream": {"synthetic": synth_spec()},
        "train": {"epochs": 2, "batch_size": 16, "hidden_dims": [16, 8]},
        "gmm": {"k_max": 2},
        "out_dir": str(out_dir),
    }
    cfg.update(overrides)
    return cfg


class TestConfigValidation:
    def test_unknown_top_level_key(self):
        cfg = base_config("/tmp/x")
        cfg["surprise"] = 1
        with pytest.raises(ConfigError):
            resolve_config(cfg)

    def test_unknown_nested_key(self):
        cfg = base_config("/tmp/x")
        cfg["train"]["momentum"] = 0.9
        with pytest.raises(ConfigError):
            resolve_config(cfg)

    def test_bad_method(self):
        with pytest.raises(ConfigError):
            resolve_config(base_config("/tmp/x", method="magic"))

    def test_buffer_needs_capacity(self):
        with pytest.raises(ConfigError):
            resolve_config(base_config("/tmp/x", method="buffer_replay"))

    def test_capacity_only_for_buffer(self):
        with pytest.raises(ConfigError):
            resolve_config(base_config("/tmp/x", buffer_capacity=10))

    def test_stream_exactly_one_source(self):
        cfg = base_config("/tmp/x")
        cfg["stream"]["files"] = ["a.glrf", "b.glrf"]
        with pytest.raises(ConfigError):
            resolve_config(cfg)

    def test_defaults_materialized(self):
        resolved = resolve_config(base_config("/tmp/x"))
        assert resolved["train"]["replay_ratio"] == 1.0
        assert resolved["gmm"]["max_iter"] == 200
        assert resolved["stream"]["synthetic"]["scales"] == [1.0, 1.0]
        assert len(resolved["stream"]["synthetic"]["base_means"]) == 2

    def test_resolved_config_revalidates(self):
        resolved = resolve_config(base_config("/tmp/x"))
        assert resolve_config(resolved) == resolved


class TestRun:
    def test_naive_single_task_artifacts(self, tmp_path):
        out = tmp_path / "out"
        cfg = base_config(out, method="naive")
        cfg["stream"]["synthetic"] = synth_spec(num_domains=1)
        code = main(["run", "--config", write_json(tmp_path / "cfg.json", cfg)])
        assert code == 0
        mat = matrix_from_csv((out / "accuracy_matrix.csv").read_text())
        assert mat.values.shape == (1, 1)
        payload = json.loads((out / "metrics.json").read_text())
        assert payload["bwt"] is None
        assert payload["method"] == "naive"
        assert payload["T"] == 1
        report = json.loads((out / "run_report.json").read_text())
        assert report["privacy"]["retained_samples"] == 0

    def test_deterministic_rerun_byte_identical(self, tmp_path):
        out_a, out_b = tmp_path / "a", tmp_path / "b"
        cfg_a = base_config(out_a)
        cfg_b = base_config(out_b)
        assert main(["run", "--config", write_json(tmp_path / "a.json", cfg_a)]) == 0
        assert main(["run", "--config", write_json(tmp_path / "b.json", cfg_b)]) == 0
        assert (out_a / "accuracy_matrix.csv").read_bytes() == \
            (out_b / "accuracy_matrix.csv").read_bytes()
        assert (out_a / "metrics.json").read_bytes() == \
            (out_b / "metrics.json").read_bytes()

    def test_rerun_from_report_byte_identical(self, tmp_path):
        out = tmp_path / "out"
        cfg = base_config(out, method="glrcl")
        assert main(["run", "--config", write_json(tmp_path / "cfg.json", cfg)]) == 0
        first = (out / "accuracy_matrix.csv").read_bytes()
        first_pool = (out / "generator_pool.gmm").read_bytes()
        assert main(["run", "--config", str(out / "run_report.json")]) == 0
        assert (out / "accuracy_matrix.csv").read_bytes() == first
        assert (out / "generator_pool.gmm").read_bytes() == first_pool

    def test_glrcl_timeline_cross_check(self, tmp_path):
        out = tmp_path / "out"
        cfg = base_config(out, method="glrcl")
        cfg["stream"]["synthetic"] = synth_spec(num_domains=4)
        assert main(["run", "--config", write_json(tmp_path / "cfg.json", cfg)]) == 0
        mat = matrix_from_csv((out / "accuracy_matrix.csv").read_text())
        lines = (out / "timeline.csv").read_text().strip().splitlines()
        assert len(lines) == 4
        for line in lines:
            t_str, value = line.split(",")
            t = int(t_str)
            assert float(value) == pytest.approx(
                float(np.mean(mat.values[t - 1, :t])), abs=1e-12)

    def test_buffer_privacy_accounting(self, tmp_path):
        out = tmp_path / "out"
        cfg = base_config(out, method="buffer_replay", buffer_capacity=64)
        assert main(["run", "--config", write_json(tmp_path / "cfg.json", cfg)]) == 0
        privacy = json.loads((out / "run_report.json").read_text())["privacy"]
        assert privacy["retained_samples"] == 64
        assert privacy["retained_sample_bytes"] == 64 * (4 * 4 + 4)

    def test_glrcl_pool_file_and_privacy(self, tmp_path):
        out = tmp_path / "out"
        cfg = base_config(out, method="glrcl")
        assert main(["run", "--config", write_json(tmp_path / "cfg.json", cfg)]) == 0
        privacy = json.loads((out / "run_report.json").read_text())["privacy"]
        assert privacy["retained_samples"] == 0
        assert privacy["pool_file_bytes"] == (out / "generator_pool.gmm").stat().st_size

    def test_cumulative_accounting_grows_with_stream(self, tmp_path):
        # The accumulated training set costs sum(N_t) retained samples.
        out = tmp_path / "out"
        cfg = base_config(out, method="cumulative")
        assert main(["run", "--config", write_json(tmp_path / "cfg.json", cfg)]) == 0
        privacy = json.loads((out / "run_report.json").read_text())["privacy"]
        total_train = 2 * 40 * 2  # domains * per-class * classes
        assert privacy["retained_samples"] == total_train
        assert privacy["retained_sample_bytes"] == total_train * (4 * 4 + 4)

    def test_bad_config_exit_1(self, tmp_path, capsys):
        cfg = base_config(tmp_path / "out", method="nope")
        assert main(["run", "--config", write_json(tmp_path / "cfg.json", cfg)]) == 1
        assert "error" in capsys.readouterr().err

    def test_missing_config_exit_1(self, tmp_path):
        assert main(["run", "--config", str(tmp_path / "absent.json")]) == 1

    def test_runtime_failure_exit_2_no_partial_artifacts(self, tmp_path):
        out = tmp_path / "out"
        cfg = base_config(out)
        cfg["stream"] = {"files": [str(tmp_path / "no_t.glrf"),
                                   str(tmp_path / "no_e.glrf")]}
        (tmp_path / "no_t.glrf").write_bytes(b"XXXXgarbage")
        (tmp_path / "no_e.glrf").write_bytes(b"XXXXgarbage")
        assert main(["run", "--config", write_json(tmp_path / "c.json", cfg)]) == 2
        assert not (out / "accuracy_matrix.csv").exists()

    def test_joint_single_row_matrix(self, tmp_path):
        out = tmp_path / "out"
        cfg = base_config(out, method="joint")
        assert main(["run", "--config", write_json(tmp_path / "cfg.json", cfg)]) == 0
        mat = matrix_from_csv((out / "accuracy_matrix.csv").read_text())
        assert mat.values.shape == (1, 2)
        payload = json.loads((out / "metrics.json").read_text())
        assert payload["bwt"] is None and payload["ilm"] is None


class TestGenStream:
    def test_writes_2t_files_and_round_trips(self, tmp_path):
        spec = synth_spec(num_domains=3)
        spec_path = write_json(tmp_path / "spec.json", spec)
        stream_dir = tmp_path / "files"
        assert main(["gen-stream", "--spec", spec_path,
                     "--out", str(stream_dir)]) == 0
        files = sorted(os.listdir(stream_dir))
        assert len(files) == 6

        # An in-memory synthetic run and a run over the written files must
        # produce the same matrix bytes.
        out_mem = tmp_path / "mem"
        cfg_mem = base_config(out_mem, method="naive")
        cfg_mem["stream"]["synthetic"] = spec
        assert main(["run", "--config",
                     write_json(tmp_path / "mem.json", cfg_mem)]) == 0

        out_file = tmp_path / "filed"
        cfg_file = base_config(out_file, method="naive")
        ordered = []
        for t in range(3):
            ordered += [str(stream_dir / f"domain{t:02d}_train.glrf"),
                        str(stream_dir / f"domain{t:02d}_eval.glrf")]
        cfg_file["stream"] = {"files": ordered}
        assert main(["run", "--config",
                     write_json(tmp_path / "file.json", cfg_file)]) == 0
        assert (out_mem / "accuracy_matrix.csv").read_bytes() == \
            (out_file / "accuracy_matrix.csv").read_bytes()

    def test_stream_files_flag_overrides(self, tmp_path):
        spec = synth_spec(num_domains=2)
        spec_path = write_json(tmp_path / "spec.json", spec)
        stream_dir = tmp_path / "files"
        assert main(["gen-stream", "--spec", spec_path,
                     "--out", str(stream_dir)]) == 0
        cfg = base_config(tmp_path / "out", method="naive")
        ordered = []
        for t in range(2):
            ordered += [str(stream_dir / f"domain{t:02d}_train.glrf"),
                        str(stream_dir / f"domain{t:02d}_eval.glrf")]
        assert main(["run", "--config", write_json(tmp_path / "c.json", cfg),
                     "--stream-files", *ordered]) == 0
        report = json.loads((tmp_path / "out" / "run_report.json").read_text())
        assert report["config"]["stream"] == {"files": ordered}

    def test_invalid_spec_exit_1(self, tmp_path):
        spec = synth_spec()
        spec["classes"] = 1
        assert main(["gen-stream", "--spec", write_json(tmp_path / "s.json", spec),
                     "--out", str(tmp_path / "o")]) == 1


class TestInspect:
    def _pool_path(self, tmp_path):
        out = tmp_path / "out"
        cfg = base_config(out, method="glrcl")
        assert main(["run", "--config", write_json(tmp_path / "cfg.json", cfg)]) == 0
        return out / "generator_pool.gmm"

    def test_pool_listing(self, tmp_path, capsys):
        path = self._pool_path(tmp_path)
        capsys.readouterr()  # drop the run summary
        assert main(["inspect", str(path)]) == 0
        lines = capsys.readouterr().out.strip().splitlines()
        assert "4 entries" in lines[0]
        assert sum("domain=" in line for line in lines) == 4
        assert all("weight_sum=1.0" in line for line in lines if "domain=" in line)

    def test_truncated_pool_nonzero_exit(self, tmp_path, capsys):
        path = self._pool_path(tmp_path)
        blob = path.read_bytes()
        bad = tmp_path / "bad.gmm"
        bad.write_bytes(blob[:len(blob) // 2])
        assert main(["inspect", str(bad)]) == 1

    def test_missing_file(self, tmp_path):
        assert main(["inspect", str(tmp_path / "nope.gmm")]) == 1


class TestMetricsCommand:
    def test_recompute_from_csv(self, tmp_path, capsys):
        csv = tmp_path / "m.csv"
        csv.write_text("90.0,10.0,10.0\n80.0,95.0,20.0\n70.0,85.0,92.0\n")
        assert main(["metrics", "--matrix", str(csv)]) == 0
        payload = json.loads(capsys.readouterr().out)
        assert payload["avg_accuracy"] == pytest.approx(247.0 / 3.0)
        assert payload["bwt"] == pytest.approx(-15.0)
        assert payload["ilm"] == pytest.approx(512.0 / 6.0)

    def test_bad_csv_exit_1(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("")
        assert main(["metrics", "--matrix", str(path)]) == 1
