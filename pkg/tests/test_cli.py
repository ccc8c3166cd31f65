"""Command-line interface: subcommands, exit codes, output files."""

import numpy as np
import pytest

from ctsgd.cli import main
from ctsgd.csvio import emit_csv, read_csv
from ctsgd.records import TrajectoryRecord


def _write_config(tmp_path, text, name="cfg.yaml"):
    path = tmp_path / name
    path.write_text(text, encoding="utf-8")
    return str(path)


class TestExitCodes:
    def test_unknown_config_key(self, tmp_path):
        cfg = _write_config(tmp_path,
                            "experiment: linear-scalar\nbogus: 1\n")
        assert main(["run", cfg]) == 2

    def test_check_gradients_wrong_experiment(self, tmp_path):
        cfg = _write_config(tmp_path, "experiment: linear-scalar\n")
        assert main(["check-gradients", cfg]) == 2

    def test_riccati_nonlinear_model(self, tmp_path):
        cfg = _write_config(tmp_path, "experiment: benes-joint\n")
        assert main(["riccati", cfg]) == 2

    def test_average_missing_output_dir(self, tmp_path):
        src = tmp_path / "a.csv"
        emit_csv(TrajectoryRecord(["t", "x"],
                                  np.array([[0.0, 1.0], [1.0, 2.0]])), src)
        out = str(tmp_path / "no" / "such" / "dir" / "avg.csv")
        assert main(["average", str(src), "--out", out]) == 4

    def test_average_misaligned_inputs(self, tmp_path):
        a, b = tmp_path / "a.csv", tmp_path / "b.csv"
        emit_csv(TrajectoryRecord(["t", "x"],
                                  np.array([[0.0, 1.0], [1.0, 2.0]])), a)
        emit_csv(TrajectoryRecord(["t", "x"],
                                  np.array([[0.0, 1.0], [2.0, 2.0]])), b)
        out = str(tmp_path / "avg.csv")
        assert main(["average", str(a), str(b), "--out", out]) == 2


class TestRiccati:
    def test_linear_scalar_oracle(self, tmp_path, capsys):
        # theta = q = tau2 + o^2 = 1 at o_init = 0 would need tau2 = 1; use
        # the config that lands exactly on the sqrt(2) - 1 solution.
        cfg = _write_config(tmp_path,
                            "experiment: linear-scalar\n"
                            "model: {tau2: 1.0}\n"
                            "inits: {theta0: 0.5, o_init: 0.0}\n")
        out = str(tmp_path / "ric.csv")
        assert main(["riccati", cfg, "--out", out]) == 0
        rec = read_csv(out)
        assert abs(rec.data[0, 1] - (np.sqrt(2.0) - 1.0)) < 1e-6
        assert abs(float(rec.metadata["objective"])
                   - (np.sqrt(2.0) - 1.0)) < 1e-6


class TestAverage:
    def test_constant_columns(self, tmp_path):
        src = tmp_path / "c.csv"
        t = np.linspace(0.0, 5.0, 11)
        emit_csv(TrajectoryRecord(["t", "x"],
                                  np.column_stack([t, np.full(11, 3.0)]),
                                  {"config_hash": "deadbeef"}), src)
        out = tmp_path / "avg.csv"
        assert main(["average", str(src), "--out", str(out)]) == 0
        rec = read_csv(out)
        assert rec.columns == ["t", "avg_x"]
        np.testing.assert_allclose(rec.column("avg_x"), 3.0)
        assert rec.metadata["config_hash"] == "deadbeef"

    def test_linear_ramp_halves(self, tmp_path):
        # Trapezoid average of x(t) = t is exactly t / 2.
        src = tmp_path / "r.csv"
        t = np.linspace(0.0, 10.0, 101)
        emit_csv(TrajectoryRecord(["t", "x"], np.column_stack([t, t])), src)
        out = tmp_path / "avg.csv"
        assert main(["average", str(src), "--out", str(out)]) == 0
        rec = read_csv(out)
        np.testing.assert_allclose(rec.column("avg_x")[1:], t[1:] / 2.0,
                                   rtol=1e-12)

    def test_seed_mean_before_averaging(self, tmp_path):
        t = np.array([0.0, 1.0, 2.0])
        paths = []
        for i, vals in enumerate(([1.0, 1.0, 1.0], [3.0, 3.0, 3.0])):
            p = tmp_path / f"s{i}.csv"
            emit_csv(TrajectoryRecord(["t", "x"],
                                      np.column_stack([t, vals])), p)
            paths.append(str(p))
        out = tmp_path / "avg.csv"
        assert main(["average"] + paths + ["--out", str(out)]) == 0
        np.testing.assert_allclose(read_csv(out).column("avg_x"), 2.0)


class TestRun:
    def test_gradient_check_run(self, tmp_path, monkeypatch, capsys):
        monkeypatch.setenv("CTSGD_OUTPUT_ROOT", str(tmp_path))
        cfg = _write_config(tmp_path,
                            "experiment: gradient-check\n"
                            "horizon: 2.0\n")
        assert main(["check-gradients", cfg]) == 0
        lines = capsys.readouterr().out.strip().splitlines()
        assert len(lines) >= 2
        assert all("max rel err" in line for line in lines)

    def test_run_writes_summary(self, tmp_path, monkeypatch):
        monkeypatch.setenv("CTSGD_OUTPUT_ROOT", str(tmp_path))
        cfg = _write_config(tmp_path,
                            "experiment: gradient-check\n"
                            "horizon: 2.0\n")
        assert main(["run", cfg]) == 0
        summary = tmp_path / "out" / "gradient-check" / "summary.csv"
        lines = summary.read_text(encoding="utf-8").splitlines()
        meta = [line for line in lines if line.startswith("#")]
        body = [line for line in lines if not line.startswith("#")]
        assert any("config_hash" in line for line in meta)
        assert len(body) >= 2
