"""Command-line behavior: exit codes, artifacts, config precedence."""

import json
import subprocess
import sys

import numpy as np
import pytest

from rssa.cli import main
from rssa.config import parse_kv_file
from rssa.safety_index import SafetyIndexParams


def run(argv):
    return main(list(argv))


class TestArgumentErrors:
    def test_bad_choice_exits_one(self, tmp_path, capsys):
        with pytest.raises(SystemExit) as err:
            run(["simulate", "--robot", "quadrotor", "--out", str(tmp_path)])
        assert err.value.code == 1

    def test_unknown_subcommand_exits_one(self):
        with pytest.raises(SystemExit) as err:
            run(["calibrate"])
        assert err.value.code == 1

    def test_missing_config_file(self, tmp_path, capsys):
        code = run(["simulate", "--config", str(tmp_path / "nope.cfg"),
                    "--out", str(tmp_path)])
        assert code == 1
        assert "error:" in capsys.readouterr().err

    def test_malformed_config_file(self, tmp_path, capsys):
        cfg = tmp_path / "bad.cfg"
        cfg.write_text("robot scara\n")
        code = run(["simulate", "--config", str(cfg), "--out", str(tmp_path)])
        assert code == 1
        assert "line 1" in capsys.readouterr().err

    def test_missing_out_dir_writes_nothing(self, tmp_path, capsys):
        missing = tmp_path / "not_there"
        code = run(["simulate", "--robot", "scara", "--horizon", "0.01",
                    "--out", str(missing)])
        assert code == 1
        assert not missing.exists()
        assert list(tmp_path.iterdir()) == []

    def test_invalid_synthesis_constant_from_config(self, tmp_path, capsys):
        cfg = tmp_path / "neg.cfg"
        cfg.write_text("k_phi = -2.0\n")
        code = run(["synthesize", "--grid", "2,2,2,2", "--config", str(cfg),
                    "--out", str(tmp_path)])
        assert code == 1


class TestSynthesizeCommand:
    def test_small_grid_certifies_and_writes_artifacts(self, tmp_path,
                                                       capsys):
        code = run(["synthesize", "--grid", "4,4,4,4", "--out",
                    str(tmp_path)])
        assert code == 0
        out = capsys.readouterr().out
        assert "rate=1.0" in out
        params = SafetyIndexParams.from_config(tmp_path / "params_scara.cfg")
        assert params.alpha > 0.0
        report = (tmp_path / "synthesis_report_scara.txt").read_text()
        assert "certified=true" in report

    def test_uncertifiable_settings_exit_two(self, tmp_path, capsys):
        cfg = tmp_path / "hard.cfg"
        # An enormous smoothness constant makes the required grid margin
        # unmeetable, so the search cannot reach rate 1.
        cfg.write_text("k_phi = 1000.0\ngrid = 3,3,3,3\npopulation = 4\n"
                       "generations = 1\n")
        code = run(["synthesize", "--config", str(cfg), "--out",
                    str(tmp_path)])
        assert code == 2
        out = capsys.readouterr().out
        assert "rate=" in out
        assert (tmp_path / "synthesis_report_scara.txt").exists()

    def test_rerun_reports_identical_bytes(self, tmp_path):
        a_dir = tmp_path / "a"
        b_dir = tmp_path / "b"
        a_dir.mkdir()
        b_dir.mkdir()
        assert run(["synthesize", "--grid", "4,4,4,4",
                    "--out", str(a_dir)]) == 0
        assert run(["synthesize", "--grid", "4,4,4,4",
                    "--out", str(b_dir)]) == 0
        for name in ("params_scara.cfg", "synthesis_report_scara.txt"):
            assert (a_dir / name).read_bytes() == (b_dir / name).read_bytes()


class TestSimulateCommand:
    def test_short_run_writes_csv(self, tmp_path, capsys):
        code = run(["simulate", "--robot", "scara", "--rssa", "polytope",
                    "--horizon", "0.05", "--samples", "10",
                    "--out", str(tmp_path)])
        assert code == 0
        assert "max_phi0=" in capsys.readouterr().out
        csv_path = tmp_path / "trajectory_scara_polytope_case1.csv"
        lines = csv_path.read_text().strip().split("\n")
        assert len(lines) == 1 + 25 + 1  # header + steps + terminal state

    def test_rerun_is_byte_identical(self, tmp_path):
        a_dir = tmp_path / "a"
        b_dir = tmp_path / "b"
        a_dir.mkdir()
        b_dir.mkdir()
        argv = ["simulate", "--robot", "segway", "--rssa", "polytope",
                "--horizon", "0.05", "--samples", "10"]
        assert run(argv + ["--out", str(a_dir)]) == 0
        assert run(argv + ["--out", str(b_dir)]) == 0
        name = "trajectory_segway_polytope.csv"
        assert (a_dir / name).read_bytes() == (b_dir / name).read_bytes()

    def test_safety_guard_trips_without_velocity_anticipation(self,
                                                              tmp_path,
                                                              capsys):
        # A zero velocity gain leaves the filter blind to approach speed:
        # the constraint rows vanish, the reference pushes through the
        # wall, and the matched-uncertainty guard must report it.
        params = tmp_path / "blind.cfg"
        params.write_text("alpha = 0.57\nk_v = 0.0\nbeta = 0.072\n")
        code = run(["simulate", "--robot", "scara", "--rssa", "polytope",
                    "--case", "case2", "--params", str(params),
                    "--dt", "0.005", "--horizon", "3.0",
                    "--out", str(tmp_path)])
        assert code == 3
        assert "safety guard" in capsys.readouterr().err

    def test_unmatched_true_value_does_not_trip_guard(self, tmp_path):
        # Same blind index, but the hidden parameter lies outside the
        # modeled interval, so the contract does not promise safety.
        params = tmp_path / "blind.cfg"
        params.write_text("alpha = 0.57\nk_v = 0.0\nbeta = 0.072\n")
        code = run(["simulate", "--robot", "scara", "--rssa", "polytope",
                    "--case", "case2", "--params", str(params),
                    "--true", "3.5", "--dt", "0.005", "--horizon", "3.0",
                    "--out", str(tmp_path)])
        assert code == 0

    def test_constant_variant_estimates_margin_by_default(self, tmp_path,
                                                          capsys):
        code = run(["simulate", "--robot", "scara", "--rssa", "constant",
                    "--horizon", "0.02", "--samples", "10",
                    "--out", str(tmp_path)])
        assert code == 0
        assert (tmp_path / "trajectory_scara_constant_case1.csv").exists()


class TestConfigPrecedence:
    def test_flag_overrides_config_file(self, tmp_path):
        cfg = tmp_path / "run.cfg"
        cfg.write_text("robot = segway\nhorizon = 0.05\nsamples = 10\n")
        code = run(["simulate", "--config", str(cfg), "--robot", "scara",
                    "--out", str(tmp_path)])
        assert code == 0
        assert (tmp_path / "trajectory_scara_polytope_case1.csv").exists()
        assert not (tmp_path / "trajectory_segway_polytope.csv").exists()

    def test_config_file_overrides_defaults(self, tmp_path):
        cfg = tmp_path / "run.cfg"
        cfg.write_text("robot = segway\nhorizon = 0.05\nsamples = 10\n")
        code = run(["simulate", "--config", str(cfg), "--out",
                    str(tmp_path)])
        assert code == 0
        assert (tmp_path / "trajectory_segway_polytope.csv").exists()

    def test_config_file_not_mutated(self, tmp_path):
        cfg = tmp_path / "run.cfg"
        text = "robot = scara\nhorizon = 0.02\nsamples = 10\n"
        cfg.write_text(text)
        assert run(["simulate", "--config", str(cfg), "--out",
                    str(tmp_path)]) == 0
        assert cfg.read_text() == text
        assert parse_kv_file(cfg) == {"robot": "scara", "horizon": 0.02,
                                      "samples": 10}


class TestStudyCommands:
    def test_feasmap_designed_and_raw(self, tmp_path, capsys):
        base = ["feasmap", "--robot", "scara", "--grid", "4,4",
                "--velocity-samples", "3", "--samples", "10",
                "--out", str(tmp_path)]
        assert run(base) == 0
        designed = json.loads((tmp_path / "feasmap_designed.json").read_text())
        assert designed["schema"] == "rssa/feasmap/v1"
        assert np.array(designed["infeasible_fraction"]).shape == (4, 4)
        assert run(base + ["--raw-index"]) == 0
        raw = json.loads((tmp_path / "feasmap_raw.json").read_text())
        assert raw["schema"] == "rssa/feasmap/v1"

    def test_fistudy_writes_rows(self, tmp_path, capsys):
        code = run(["fistudy", "--robot", "scara", "--values", "1.0",
                    "--trials", "1", "--horizon", "0.02", "--dt", "0.005",
                    "--samples", "10", "--out", str(tmp_path)])
        assert code == 0
        data = json.loads((tmp_path / "fistudy.json").read_text())
        assert data["schema"] == "rssa/fistudy/v1"
        assert len(data["rows"]) == 1
        assert "phi_max" in data["rows"][0]

    def test_bench_rows_and_schema(self, tmp_path, capsys):
        code = run(["bench", "--robot", "segway", "--counts", "10,20",
                    "--repeats", "10", "--out", str(tmp_path)])
        assert code == 0
        data = json.loads((tmp_path / "bench.json").read_text())
        assert data["schema"] == "rssa/bench/v1"
        assert len(data["rows"]) == 4


def test_module_entry_point_runs_as_subprocess(tmp_path):
    proc = subprocess.run(
        [sys.executable, "-m", "rssa.cli", "synthesize", "--grid", "4,4,4,4",
         "--out", str(tmp_path)],
        capture_output=True, text=True, timeout=300)
    assert proc.returncode == 0
    assert "rate=1.0" in proc.stdout
    assert (tmp_path / "params_scara.cfg").exists()
