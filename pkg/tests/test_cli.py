import json
import subprocess
import sys
import time

import numpy as np
import pytest

from sortedl1.cli import main
from sortedl1.model import Problem, read_problem, write_problem

from conftest import FIXTURE


def run(*argv):
    return main([str(a) for a in argv])


def csv_rows(path):
    lines = path.read_text().splitlines()
    header = lines[0].split(",")
    return [dict(zip(header, line.split(","))) for line in lines[1:]]


@pytest.fixture
def identity_problem(tmp_path):
    path = tmp_path / "identity.txt"
    write_problem(Problem(np.eye(4), np.array([1.5, -2.0, 0.0, 0.25])), path)
    return path


class TestRecover:
    def test_identity(self, tmp_path, identity_problem):
        out = tmp_path / "out"
        assert run("recover", identity_problem, "--method", "l1", "--mode", "constrained", "--out", out) == 0
        u = np.loadtxt(out / "solution.txt")
        assert np.allclose(u, [1.5, -2.0, 0.0, 0.25], atol=1e-12)
        trace = (out / "trace.csv").read_text().splitlines()
        assert trace[0] == "iteration,energy,feasibility,wall_time"
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["command"] == "recover" and manifest["exit_code"] == 0
        assert manifest["parameters"]["method"] == "l1"

    def test_malformed_header(self, tmp_path, capsys):
        bad = tmp_path / "bad.txt"
        bad.write_text("2 x 3\n1 2\n3 4\n")
        assert run("recover", bad, "--out", tmp_path / "o") == 1
        err = capsys.readouterr().err
        assert "line 1" in err

    def test_bad_value_reports_line_and_column(self, tmp_path, capsys):
        bad = tmp_path / "bad.txt"
        bad.write_text("1 2\n1 oops\n3\n")
        assert run("recover", bad, "--out", tmp_path / "o") == 1
        assert "line 2, column 2" in capsys.readouterr().err

    def test_missing_file(self, tmp_path):
        assert run("recover", tmp_path / "nope.txt", "--out", tmp_path / "o") == 1

    def test_fixture_mlevel(self, tmp_path):
        out = tmp_path / "out"
        assert run("recover", FIXTURE, "--method", "mlevel", "--mode", "constrained", "--out", out) == 0
        truth = read_problem(FIXTURE).truth
        assert np.count_nonzero(truth) == 10
        u = np.loadtxt(out / "solution.txt")
        assert np.max(np.abs(u - truth)) < 1e-3
        assert json.loads((out / "manifest.json").read_text())["parameters"]["recovered"] is True

    def test_alg2_with_weight_file(self, tmp_path):
        weights = tmp_path / "w.txt"
        weights.write_text("0\n" * 10 + "inf 10\n")
        out = tmp_path / "out"
        code = run("recover", FIXTURE, "--algo", "alg2", "--mode", "unconstrained", "--weights", weights,
                   "--max-inner", "20000", "--out", out)
        assert code == 0
        u = np.loadtxt(out / "solution.txt")
        assert np.count_nonzero(u) <= 10

    def test_non_convergence_exit_2(self, tmp_path):
        code = run("recover", FIXTURE, "--algo", "alg2", "--mode", "unconstrained", "--method", "l1",
                   "--max-inner", "3", "--out", tmp_path / "o")
        assert code == 2
        assert json.loads((tmp_path / "o" / "manifest.json").read_text())["exit_code"] == 2

    @pytest.mark.parametrize("extra", [["--method", "lasso"], ["--algo", "alg2", "--method", "l1"],
                                       ["--algo", "alg2", "--mode", "unconstrained", "--method", "keepk"],
                                       ["--weights", "w.txt"]])
    def test_usage_errors(self, tmp_path, identity_problem, extra):
        assert run("recover", identity_problem, "--out", tmp_path / "o", *extra) == 1


class TestPhase:
    ARGS = ["phase", "--n", "40", "--m", "20,40", "--s", "2,4", "--trials", "3", "--methods", "l1", "--seed", "5"]

    def test_tiny_grid(self, tmp_path):
        t0 = time.perf_counter()
        assert run(*self.ARGS, "--out", tmp_path / "a") == 0
        assert time.perf_counter() - t0 < 30
        rows = csv_rows(tmp_path / "a" / "phase_l1.csv")
        assert len(rows) == 4
        assert {(r["m"], r["s"]) for r in rows} == {("20", "2"), ("20", "4"), ("40", "2"), ("40", "4")}
        manifest = json.loads((tmp_path / "a" / "manifest.json").read_text())
        assert manifest["base_seed"] == 5
        assert manifest["parameters"]["m"] == [20, 40]
        assert manifest["outputs"] == ["phase_l1.csv", "manifest.json"]

    def test_rerun_identical(self, tmp_path):
        run(*self.ARGS, "--out", tmp_path / "a")
        run(*self.ARGS, "--out", tmp_path / "b", "--jobs", "2")
        assert (tmp_path / "a" / "phase_l1.csv").read_bytes() == (tmp_path / "b" / "phase_l1.csv").read_bytes()

    def test_unknown_method(self, tmp_path, capsys):
        assert run("phase", "--methods", "l1,lasso", "--out", tmp_path / "o") == 1
        err = capsys.readouterr().err
        assert "lasso" in err and "l1, irl1, 2level, mlevel, isd, smap" in err

    @pytest.mark.parametrize("extra", [["--m", "0,10"], ["--n", "10", "--m", "20"], ["--s", "x"],
                                       ["--trials", "0"], ["--jobs", "0"]])
    def test_invalid_grid(self, tmp_path, extra):
        assert run("phase", "--n", "20", "--methods", "l1", "--out", tmp_path / "o", *extra) == 1
        assert not (tmp_path / "o" / "manifest.json").exists()

    def test_config_defaults_and_override(self, tmp_path):
        cfg = tmp_path / "run.cfg"
        cfg.write_text("# tiny grid\nn = 40\nm = 20\ns = 2\ntrials = 2\nmethods = l1\nseed = 9\n")
        assert run("phase", "--config", cfg, "--out", tmp_path / "a") == 0
        rows = csv_rows(tmp_path / "a" / "phase_l1.csv")
        assert [(r["m"], r["s"], r["trials"]) for r in rows] == [("20", "2", "2")]
        assert run("phase", "--config", cfg, "--trials", "3", "--out", tmp_path / "b") == 0
        assert csv_rows(tmp_path / "b" / "phase_l1.csv")[0]["trials"] == "3"
        assert json.loads((tmp_path / "b" / "manifest.json").read_text())["base_seed"] == 9

    def test_bad_config(self, tmp_path):
        cfg = tmp_path / "bad.cfg"
        cfg.write_text("colour = blue\n")
        assert run("phase", "--config", cfg, "--out", tmp_path / "o") == 1
        cfg.write_text("trials = many\n")
        assert run("phase", "--config", cfg, "--out", tmp_path / "o") == 1


class TestCurve:
    def test_five_methods(self, tmp_path):
        code = run("curve", "--s", "5,10", "--trials", "2", "--methods", "l1,irl1,2level,mlevel,isd",
                   "--out", tmp_path / "o")
        assert code == 0
        rows = csv_rows(tmp_path / "o" / "curve.csv")
        assert len(rows) == 10
        assert {r["method"] for r in rows} == {"l1", "irl1", "2level", "mlevel", "isd"}
        assert all(float(r["mean_time_s"]) > 0 for r in rows)

    def test_zero_trials(self, tmp_path):
        assert run("curve", "--trials", "0", "--out", tmp_path / "o") == 1

    def test_timing_none(self, tmp_path):
        assert run("curve", "--s", "5", "--trials", "1", "--methods", "l1", "--timing", "none",
                   "--out", tmp_path / "o") == 0
        assert (tmp_path / "o" / "curve.csv").read_text().splitlines()[1] == "l1,5,1,100.0,"


class TestDenoise:
    def test_alg2_exact_regime(self, tmp_path):
        code = run("denoise", "--n", "64", "--m", "64", "--s", "4", "--noise", "0", "--trials", "2",
                   "--algo", "alg2", "--methods", "l1,isd,keepk", "--out", tmp_path / "o")
        assert code == 0
        rows = csv_rows(tmp_path / "o" / "denoise.csv")
        assert list(rows[0]) == ["method", "m", "trials", "mean_mse", "mean_time_s"]
        mse = {r["method"]: float(r["mean_mse"]) for r in rows}
        assert mse["keepk"] < 1e-6 and mse["isd"] < 1e-6
        assert json.loads((tmp_path / "o" / "manifest.json").read_text())["parameters"]["algo"] == "alg2"

    def test_alg1_exact_regime(self, tmp_path):
        assert run("denoise", "--n", "64", "--m", "64", "--s", "4", "--noise", "0", "--trials", "2",
                   "--out", tmp_path / "o") == 0
        rows = csv_rows(tmp_path / "o" / "denoise.csv")
        assert min(float(r["mean_mse"]) for r in rows) < 1e-6
        assert all(float(r["mean_time_s"]) >= 0 for r in rows)

    def test_constrained_rejected(self, tmp_path):
        assert run("denoise", "--mode", "constrained", "--out", tmp_path / "o") == 1


class TestEntryPoint:
    def test_module_help(self):
        res = subprocess.run([sys.executable, "-m", "sortedl1.cli", "--help"], capture_output=True, text=True)
        assert res.returncode == 0
        assert "recover" in res.stdout and "phase" in res.stdout

    def test_no_command(self):
        assert main([]) == 1
