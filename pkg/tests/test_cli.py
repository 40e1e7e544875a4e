"""End-to-end CLI behavior: exit codes, determinism, artifact schemas."""

import json
import subprocess
import sys

import pytest

from cosimo.cli import main


def run_cli(*argv):
    return main(list(argv))


@pytest.fixture()
def complex_file(tmp_path):
    path = tmp_path / "complex.json"
    assert run_cli("generate", "--n", "20", "--seed", "7", "--out", str(path)) == 0
    return path


class TestGenerate:
    def test_reruns_are_byte_identical(self, tmp_path, capsys):
        a = tmp_path / "a.json"
        b = tmp_path / "b.json"
        assert run_cli("generate", "--n", "30", "--seed", "7", "--out", str(a)) == 0
        capsys.readouterr()
        assert run_cli("generate", "--n", "30", "--seed", "7", "--out", str(b)) == 0
        assert a.read_bytes() == b.read_bytes()
        summary = json.loads(capsys.readouterr().out)
        assert summary["euler_characteristic"] <= 1  # holes may open it up

    def test_too_few_points_is_usage_error(self, tmp_path, capsys):
        rc = run_cli("generate", "--n", "2", "--out", str(tmp_path / "c.json"))
        assert rc == 2
        assert "at least 3 points" in capsys.readouterr().err

    def test_default_holes_remove_triangles(self, tmp_path, capsys):
        full = tmp_path / "full.json"
        holed = tmp_path / "holed.json"
        removed = 0
        for seed in range(5):
            run_cli("generate", "--n", "30", "--seed", str(seed), "--holes", "[]",
                    "--out", str(full))
            run_cli("generate", "--n", "30", "--seed", str(seed), "--out", str(holed))
            n_full = len(json.loads(full.read_text())["triangles"])
            n_holed = len(json.loads(holed.read_text())["triangles"])
            removed += n_full - n_holed
        assert removed > 0

    def test_bad_holes_json(self, tmp_path, capsys):
        rc = run_cli("generate", "--holes", "not-json", "--out", str(tmp_path / "x.json"))
        assert rc == 2

    def test_unknown_flag_exits_two(self, tmp_path):
        with pytest.raises(SystemExit) as e:
            run_cli("generate", "--bogus", "1", "--out", str(tmp_path / "x.json"))
        assert e.value.code == 2


class TestInspect:
    def test_missing_file_exits_two(self, tmp_path, capsys):
        assert run_cli("inspect", "--complex", str(tmp_path / "nope.json")) == 2

    def test_reports_sorted_eigenvalues_and_entropy(self, complex_file, capsys):
        assert run_cli("inspect", "--complex", str(complex_file), "--level", "0") == 0
        report = json.loads(capsys.readouterr().out)
        w = report["eigenvalues_ascending"]
        assert w == sorted(w)
        assert report["spectral_entropy"] is not None
        ks = [report["suggested_K"][f"tau={t:g}"] for t in (0.01, 0.02, 0.05, 0.1, 0.2)]
        assert all(a >= b for a, b in zip(ks, ks[1:]))

    def test_filled_triangle_level0_lists_three(self, tmp_path, capsys):
        path = tmp_path / "tri.json"
        path.write_text(json.dumps({
            "vertices": [0, 1, 2], "edges": [[0, 1], [0, 2], [1, 2]],
            "triangles": [[0, 1, 2]], "positions": None,
        }))
        assert run_cli("inspect", "--complex", str(path), "--level", "0") == 0
        report = json.loads(capsys.readouterr().out)
        assert len(report["eigenvalues_ascending"]) == 3


class TestRun:
    def _write_config(self, tmp_path, payload):
        path = tmp_path / "config.json"
        path.write_text(json.dumps(payload))
        return path

    def test_oversmooth_smoke_and_strict(self, tmp_path, capsys):
        cfg = self._write_config(tmp_path, {
            "experiment": "oversmooth",
            "seed": 5,
            "realizations": 1,
            "oversmooth": {"layers": 12, "t_grid": [0.1]},
        })
        out = tmp_path / "res"
        rc = run_cli("run", "--config", str(cfg), "--out", str(out), "--strict",
                     "--jobs", "1")
        assert rc == 0
        lines = (out / "oversmooth_results.csv").read_text().splitlines()
        assert len(lines) == 1 + 12 * 2
        assert (out / "oversmooth_manifest.json").exists()

    def test_stability_grid_row_count(self, tmp_path, capsys):
        cfg = self._write_config(tmp_path, {
            "experiment": "stability",
            "seed": 6,
            "realizations": 2,
            "stability": {"snr_grid_db": [0, 20], "train_epochs": 0},
        })
        out = tmp_path / "res"
        assert run_cli("run", "--config", str(cfg), "--out", str(out), "--jobs", "1") == 0
        lines = (out / "stability_results.csv").read_text().splitlines()
        assert len(lines) == 1 + 2 * 2 * 2  # header + cells x realizations

    def test_config_mismatch_is_usage_error(self, tmp_path, capsys):
        cfg = self._write_config(tmp_path, {"experiment": "stability"})
        rc = run_cli("run", "--experiment", "oversmooth", "--config", str(cfg),
                     "--out", str(tmp_path / "o"))
        assert rc == 2

    def test_schema_violation_reported_with_path(self, tmp_path, capsys):
        cfg = self._write_config(tmp_path, {
            "experiment": "oversmooth", "realizations": 0,
        })
        rc = run_cli("run", "--config", str(cfg), "--out", str(tmp_path / "o"))
        assert rc == 2
        assert "$.realizations" in capsys.readouterr().err

    def test_rerun_byte_identical_csv(self, tmp_path, capsys):
        cfg = self._write_config(tmp_path, {
            "experiment": "trajectory",
            "seed": 8,
            "realizations": 1,
            "trajectory": {"epochs": 5, "n_trajectories": 40},
        })
        run_cli("run", "--config", str(cfg), "--out", str(tmp_path / "r1"), "--jobs", "1")
        run_cli("run", "--config", str(cfg), "--out", str(tmp_path / "r2"), "--jobs", "1")
        a = (tmp_path / "r1" / "trajectory_results.csv").read_bytes()
        b = (tmp_path / "r2" / "trajectory_results.csv").read_bytes()
        assert a == b


class TestTrainEval:
    def test_train_then_eval_round_trip(self, tmp_path, capsys):
        cfg = tmp_path / "config.json"
        cfg.write_text(json.dumps({
            "experiment": "trajectory",
            "seed": 9,
            "trajectory": {"epochs": 30, "n_trajectories": 60, "branches": 1,
                            "hidden": 4, "layers": 2},
        }))
        out = tmp_path / "fit"
        assert run_cli("train", "--config", str(cfg), "--out", str(out)) == 0
        metrics = json.loads((out / "metrics.json").read_text())
        assert 0.0 <= metrics["test_accuracy"] <= 1.0
        assert (out / "model.json").exists() and (out / "complex.json").exists()
        capsys.readouterr()
        rc = run_cli(
            "eval",
            "--model", str(out / "model.json"),
            "--complex", str(out / "complex.json"),
            "--config", str(cfg),
        )
        assert rc == 0
        report = json.loads(capsys.readouterr().out)
        assert 0.0 <= report["accuracy"] <= 1.0
        assert report["n"] == 60


class TestEnvOverrides:
    def test_out_dir_and_jobs_from_env(self, tmp_path, monkeypatch, capsys):
        cfg = tmp_path / "config.json"
        cfg.write_text(json.dumps({
            "experiment": "oversmooth",
            "seed": 4,
            "realizations": 1,
            "oversmooth": {"layers": 5, "t_grid": [0.1]},
        }))
        monkeypatch.setenv("COSIMO_OUT", str(tmp_path / "from_env"))
        monkeypatch.setenv("COSIMO_JOBS", "1")
        assert run_cli("run", "--config", str(cfg)) == 0
        assert (tmp_path / "from_env" / "oversmooth_results.csv").exists()


def test_console_script_usage_error_exit_code():
    proc = subprocess.run(
        [sys.executable, "-m", "cosimo.cli", "definitely-not-a-command"],
        capture_output=True,
    )
    assert proc.returncode == 2
