import json
import subprocess
import sys

import numpy as np
import pytest

from counterspec.artifacts import read_summary, read_table
from counterspec.cli import main, replay_weights


def _config(tmp_path, name="cfg.json", **doc):
    doc.setdefault("schema_version", 1)
    doc.setdefault("output", {"dir": str(tmp_path / "out")})
    path = tmp_path / name
    path.write_text(json.dumps(doc))
    return str(path)


def test_solve_writes_trace_and_summary(tmp_path):
    cfg = _config(tmp_path, problem={"fixture": "qp1d"})
    assert main(["solve", "--config", cfg]) == 0
    summary = read_summary(tmp_path / "out" / "summary.json")
    assert summary["converged"]
    assert summary["s"][0] == pytest.approx(1.0, abs=1e-5)
    assert summary["lam"][0] == pytest.approx(2.0, abs=1e-5)
    trace = read_table(tmp_path / "out" / "trace.csv")
    assert list(trace)[:4] == ["iteration", "x_0", "lam_0", "s_0"]
    np.testing.assert_allclose(trace["s_0"], trace["lam_0"] / 2)


def test_solve_fixed_mode_and_inline_program(tmp_path):
    problem = {"quadratic": {"objective": {"P": [[2.0]], "q": [-4.0], "r": 4.0},
                             "constraints": [{"P": [[0.0]], "q": [1.0]}]}}
    cfg = _config(tmp_path, problem=problem, mode="fixed", slack=[0.5])
    assert main(["solve", "--config", cfg]) == 0
    summary = read_summary(tmp_path / "out" / "summary.json")
    assert summary["x"][0] == pytest.approx(0.5, abs=1e-5)
    assert summary["residual"]["counterfactual"] is None
    assert "counterfactual" not in read_table(tmp_path / "out" / "trace.csv")


def test_solve_iteration_cap_exits_2(tmp_path):
    cfg = _config(tmp_path, problem={"fixture": "qp1d"}, solver={"max_iterations": 3})
    assert main(["solve", "--config", cfg]) == 2


def test_solve_divergence_exits_2(tmp_path):
    cfg = _config(tmp_path, problem={"fixture": "qp1d"}, solver={"eta": 10.0})
    assert main(["solve", "--config", cfg]) == 2
    assert "error" in read_summary(tmp_path / "out" / "summary.json")


def test_verify_passes_and_perturbation_fails(tmp_path):
    cfg = _config(tmp_path, problem={"fixture": "qp2d", "seed": 7},
                  verify={"grid": {"lower": [0, 0], "upper": [3, 3], "step": 0.5}})
    assert main(["verify", "--config", cfg]) == 0
    cert = read_summary(tmp_path / "out" / "certificate.json")
    assert cert["passed"] and cert["compromise"]["worst_violation"] <= 1e-4
    sens = read_table(tmp_path / "out" / "sensitivity.csv")
    assert np.max(sens["abs_error"]) <= 1e-2
    assert main(["verify", "--config", cfg, "--perturb-slack", "0.3", "--out", str(tmp_path / "p")]) == 3
    assert not read_summary(tmp_path / "p" / "certificate.json")["passed"]


def test_verify_seed_flag_overrides_config(tmp_path):
    cfg = _config(tmp_path, problem={"fixture": "qp2d", "seed": 7},
                  verify={"grid": {"lower": [0, 0], "upper": [2, 2], "step": 1.0}})
    assert main(["verify", "--config", cfg, "--seed", "4"]) == 0
    assert read_summary(tmp_path / "out" / "certificate.json")["problem"] == "qp2d(seed=4)"


def test_navigate_both_with_weights(tmp_path):
    cfg = _config(tmp_path, simulation={"x0": [1.0, 0.5, 0.0, 0.0]})
    assert main(["navigate", "--config", cfg, "--emit-weights"]) == 0
    out = tmp_path / "out"
    summary = read_summary(out / "summary.json")
    assert set(summary["controllers"]) == {"cf", "lqr", "lqr_tuned"}
    assert summary["weights_replay_max_error"] <= 1e-3
    assert replay_weights(out / "weights_cf.csv") <= 1e-3
    cf = read_table(out / "trajectory_cf.csv")
    assert len(cf["step"]) == summary["controllers"]["cf"]["steps_to_threshold"]
    assert "s_u_1" in cf and "s_x_0" not in read_table(out / "trajectory_lqr.csv")
    assert "matched_completion" in summary["comparison"]


def test_navigate_single_controller(tmp_path):
    cfg = _config(tmp_path, simulation={"x0": [0.5, 0.0, 0.0, 0.0]})
    assert main(["navigate", "--config", cfg, "--controller", "lqr"]) == 0
    assert sorted(p.name for p in (tmp_path / "out").iterdir()) == ["summary.json", "trajectory_lqr.csv"]


def test_navigate_tick_failure_exits_4(tmp_path):
    cfg = _config(tmp_path, solver={"max_iterations": 5})
    assert main(["navigate", "--config", cfg, "--controller", "cf"]) == 4
    assert read_summary(tmp_path / "out" / "summary.json")["failed_step"] == 0


@pytest.mark.parametrize("doc,field", [
    ({"schema_version": 2}, "schema_version"),
    ({"problem": {"fixture": "nope"}}, "problem.fixture"),
    ({"problem": {"fixture": "qp1d"}, "solver": {"eta": -1}}, "solver.eta"),
    ({"problem": {"fixture": "qp1d"}, "solver": {"max_iterations": 1.5}}, "solver.max_iterations"),
    ({"problem": {"fixture": "qp1d"}, "mode": "fixed"}, "slack"),
    ({"problem": {"fixture": "qp1d"}, "mode": "fixed", "slack": [1.0, 2.0]}, "slack"),
    ({"simulation": {"x0": [1.0, 2.0]}}, "simulation.x0"),
    ({"simulation": {"ts": "fast"}}, "simulation.ts"),
    ({"verify": {"grid": {"lower": [1.0], "upper": [0.0], "step": 0.1}}}, "verify.grid"),
    ({"problem": {"quadratic": {"objective": {"q": [1.0, 2.0], "P": [[1.0]]}}}}, "problem.quadratic"),
])
def test_bad_config_exits_1_without_outputs(tmp_path, capsys, doc, field):
    cfg = _config(tmp_path, **doc)
    assert main(["solve", "--config", cfg]) == 1
    assert field in capsys.readouterr().err
    assert not (tmp_path / "out").exists()


def test_unreadable_and_malformed_config(tmp_path, capsys):
    assert main(["solve", "--config", str(tmp_path / "missing.json")]) == 1
    bad = tmp_path / "bad.json"
    bad.write_text("{\"schema_version\": 1,")
    assert main(["solve", "--config", str(bad), "--out", str(tmp_path / "o")]) == 1
    assert "invalid JSON" in capsys.readouterr().err
    assert not (tmp_path / "o").exists()


def test_missing_problem_and_grid(tmp_path):
    assert main(["solve", "--config", _config(tmp_path)]) == 1
    problem = {"quadratic": {"objective": {"P": np.eye(3).tolist(), "q": [0, 0, 0]},
                             "constraints": [{"q": [1, 0, 0]}, {"q": [0, 1, 0]}, {"q": [0, 0, 1]}]}}
    assert main(["verify", "--config", _config(tmp_path, "c2.json", problem=problem)]) == 1


def test_log_level_env(tmp_path):
    cfg = _config(tmp_path, problem={"fixture": "qp1d"})
    out = subprocess.run([sys.executable, "-m", "counterspec.cli", "solve", "--config", cfg],
                         env={"COUNTERSPEC_LOG": "info", "PATH": ""}, capture_output=True, text=True)
    assert out.returncode == 0
    assert "converged=True" in out.stderr
