from __future__ import annotations

import csv
import json
import math
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from sben.cli import fmt, main

CONFIGS = Path(__file__).resolve().parents[1] / "configs"


def write(tmp_path, text, name="run.ini"):
    path = tmp_path / name
    path.write_text(text)
    return path


def read_csv(path):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    return rows[0], np.array([[float(v) for v in r] for r in rows[1:]])


HARMONIC = """
[model]
kind = HarmonicOscillator
stiffness = 4.0
initial_position = 1.0

[grid]
t_end = 5.0
steps = 500
"""


# ---------------------------------------------------------------- simulate

def test_simulate_harmonic_conserves_energy(tmp_path):
    assert main(["simulate", str(write(tmp_path, HARMONIC)), "--quiet"]) == 0
    header, data = read_csv(tmp_path / "trajectory.csv")
    assert header == ["t", "x_1", "y_1", "H", "step_gap", "dissipation_rate"]
    assert data.shape == (501, 6)
    assert np.ptp(data[:, 3]) <= 1e-6
    report = json.loads((tmp_path / "report.json").read_text())
    assert report["schema_version"] == "1.0"
    assert report["converged"] is True
    assert report["tolerances"]["certificate"] > 0


def test_simulate_elastoplastic_reports_dissipation(tmp_path):
    assert main(["simulate", str(CONFIGS / "elastoplastic.ini"), "--out-dir", str(tmp_path), "--quiet"]) == 0
    report = json.loads((tmp_path / "report.json").read_text())
    assert report["total_dissipation"] > 0
    header, data = read_csv(tmp_path / "trajectory.csv")
    assert header[-3:] == ["H", "step_gap", "dissipation_rate"]
    assert data[0, -1] == 0.0 and data[1:, -1].max() > 0


def test_simulate_quasistatic_writes_stress_history(tmp_path):
    assert main(["simulate", str(CONFIGS / "quasistatic.ini"), "--out-dir", str(tmp_path), "--quiet"]) == 0
    header, data = read_csv(tmp_path / "trajectory.csv")
    assert header[:3] == ["t", "stress", "plastic_strain"]
    assert np.abs(data[:, 1]).max() == pytest.approx(0.5, abs=1e-6)


def test_budget_exhaustion_writes_partial_results(tmp_path, capsys):
    text = (CONFIGS / "elastoplastic.ini").read_text() + "\n[solver]\nmax_iter = 1\ntol = 1e-30\n"
    assert main(["simulate", str(write(tmp_path, text))]) == 2
    report = json.loads((tmp_path / "report.json").read_text())
    assert report["converged"] is False and report["failed_step"] >= 1
    _, data = read_csv(tmp_path / "trajectory.csv")
    assert data.shape[0] == report["failed_step"]
    assert f"step {report['failed_step']}" in capsys.readouterr().err


def test_global_method_and_dt_override(tmp_path):
    text = HARMONIC + "\n[solver]\nmethod = global\n"
    assert main(["simulate", str(write(tmp_path, text)), "--dt-override", "0.05", "--quiet"]) == 0
    _, data = read_csv(tmp_path / "trajectory.csv")
    assert data.shape[0] == 101
    assert json.loads((tmp_path / "report.json").read_text())["method"] == "global"
    assert main(["simulate", str(write(tmp_path, text)), "--dt-override", "0.3", "--quiet"]) == 1


def test_simulate_is_deterministic(tmp_path):
    outputs = []
    for run in ("a", "b"):
        out = tmp_path / run
        assert main(["simulate", str(CONFIGS / "bar_chain.ini"), "--out-dir", str(out), "--quiet"]) == 0
        outputs.append(((out / "trajectory.csv").read_bytes(), (out / "report.json").read_bytes()))
    assert outputs[0] == outputs[1]


def test_output_paths_resolve_against_config_directory(tmp_path):
    text = HARMONIC + "\n[outputs]\ntrajectory_csv = sub/traj.csv\nreport_json = rep.json\n"
    assert main(["simulate", str(write(tmp_path, text)), "--quiet"]) == 0
    assert (tmp_path / "sub" / "traj.csv").exists() and (tmp_path / "rep.json").exists()


# ---------------------------------------------------------------- input errors

@pytest.mark.parametrize("text, needle", [
    (HARMONIC.replace("stiffness = 4.0", "stiffness = 4.0\nmass = -1"), "model.mass (line"),
    (HARMONIC + "\n[extras]\nfoo = 1\n", "[extras] (line"),
    (HARMONIC.replace("steps = 500", "steps = 500\nstep_size = 0.1"), "grid.step_size (line"),
    (HARMONIC.replace("steps = 500", "steps = 0"), "grid.steps"),
    (HARMONIC.replace("t_end = 5.0", "t_end = -1"), "grid.t_end"),
    (HARMONIC.replace("stiffness = 4.0", "stiffness = four"), "model.stiffness"),
    (HARMONIC + "\n[solver]\nmethod = magic\n", "solver.method"),
    (HARMONIC + "\n[load]\nkind = sinusoidal\nvalue = 3\n", "load.value"),
    ("[grid]\nt_end = 1\nsteps = 1\n", "[model]"),
])
def test_malformed_configs_exit_1_with_location(tmp_path, capsys, text, needle):
    assert main(["simulate", str(write(tmp_path, text))]) == 1
    assert needle in capsys.readouterr().err


def test_missing_config_file(tmp_path, capsys):
    assert main(["simulate", str(tmp_path / "nope.ini")]) == 1
    assert "cannot read" in capsys.readouterr().err


# ---------------------------------------------------------------- verify

def test_verify_passes_on_solver_output(tmp_path):
    cfg = CONFIGS / "harmonic2d.ini"
    assert main(["simulate", str(cfg), "--out-dir", str(tmp_path), "--quiet"]) == 0
    assert main(["verify", str(cfg), "--out-dir", str(tmp_path), "--quiet"]) == 0
    result = json.loads((tmp_path / "verify.json").read_text())
    assert result["passed"] and "integral_of_motion" in result["checks"]


def test_verify_plasticity_reports_measured_constants(tmp_path):
    cfg = CONFIGS / "bar_chain.ini"
    assert main(["simulate", str(cfg), "--out-dir", str(tmp_path), "--quiet"]) == 0
    assert main(["verify", str(cfg), "--out-dir", str(tmp_path), "--quiet"]) == 0
    checks = json.loads((tmp_path / "verify.json").read_text())["checks"]
    assert checks["plasticity_constraints"]["passed"]
    assert checks["plasticity_constraints"]["stress_rate"]["measured_C"] > 0
    assert checks["yield_admissibility"]["passed"]


def test_verify_rejects_corrupted_trajectory(tmp_path):
    cfg = CONFIGS / "elastoplastic.ini"
    assert main(["simulate", str(cfg), "--out-dir", str(tmp_path), "--quiet"]) == 0
    path = tmp_path / "trajectory.csv"
    lines = path.read_text().splitlines()
    cells = lines[400].split(",")
    cells[1] = fmt(float(cells[1]) + 0.05)
    lines[400] = ",".join(cells)
    path.write_text("\n".join(lines) + "\n")
    assert main(["verify", str(cfg), "--out-dir", str(tmp_path), "--quiet"]) != 0
    result = json.loads((tmp_path / "verify.json").read_text())
    assert not result["checks"]["energy_balance"]["passed"]


def test_verify_schema_mismatch_exits_1(tmp_path):
    cfg = CONFIGS / "elastoplastic.ini"
    assert main(["simulate", str(CONFIGS / "harmonic.ini"), "--out-dir", str(tmp_path), "--quiet"]) == 0
    assert main(["verify", str(cfg), "--trajectory", str(tmp_path / "trajectory.csv"), "--quiet"]) == 1


# ---------------------------------------------------------------- compare

def test_compare_maxwell_orders(tmp_path):
    assert main(["compare", str(CONFIGS / "maxwell.ini"), "--out-dir", str(tmp_path), "--quiet"]) == 0
    summary = json.loads((tmp_path / "compare.json").read_text())
    assert summary["fitted_order"] >= 0.9
    assert len(summary["sup_errors"]) == 4
    header, data = read_csv(tmp_path / "compare.csv")
    assert header == ["t", "ben_stress", "exact_stress"] and data.shape[0] == 101


def test_compare_elastic_limit_agrees_to_round_off(tmp_path):
    text = """
[model]
kind = BarChain
n_elements = 3
initial_momentum = 0.1, 0.0, -0.2

[grid]
t_end = 2
steps = 200
"""
    assert main(["compare", str(write(tmp_path, text)), "--quiet"]) == 0
    elastic = json.loads((tmp_path / "compare.json").read_text())["elastic_limit"]
    assert elastic["passed"] and elastic["max_state_difference"] < 1e-12
    assert elastic["ben_energy_drift"] < 1e-12


def test_compare_rejects_unsupported_kind_and_zero_steps(tmp_path):
    assert main(["compare", str(write(tmp_path, HARMONIC)), "--quiet"]) == 1
    text = (CONFIGS / "maxwell.ini").read_text().replace("steps = 100", "steps = 0")
    assert main(["compare", str(write(tmp_path, text)), "--quiet"]) == 1


# ---------------------------------------------------------------- conjugate

def conjugate_table(tmp_path, text):
    assert main(["conjugate", str(write(tmp_path, text)), "--quiet"]) == 0
    return read_csv(tmp_path / "conjugate.csv")


def test_conjugate_quadratic_sandwich(tmp_path):
    header, data = conjugate_table(tmp_path, "[potential]\nfamily = Quadratic\nweights = 2.0\ndim = 1\n"
                                             "[conjugate]\nlower = -3\nupper = 3\nresolution = 61\n")
    assert header == ["w_1", "conjugate", "brute_force", "symplectic_polar"]
    gap = data[:, 1] - data[:, 2]
    assert np.all(gap >= -1e-12) and np.all(gap <= 1e-3)
    assert np.all(np.isnan(data[:, 3]))


def test_conjugate_zero_potential_marks_infinity(tmp_path):
    _, data = conjugate_table(tmp_path, "[potential]\nfamily = Zero\ndim = 1\n"
                                        "[conjugate]\nlower = -1\nupper = 1\nresolution = 5\n")
    assert math.isinf(data[0, 1]) and data[2, 1] == 0.0
    assert "inf" in (tmp_path / "conjugate.csv").read_text().split("\n")[1]


def test_conjugate_box_profile_and_polar(tmp_path):
    _, data = conjugate_table(tmp_path, "[potential]\nfamily = IndicatorBox\nlower = -1.5, -1.5\nupper = 1.5, 1.5\n"
                                        "[conjugate]\nlower = -2, -2\nupper = 2, 2\nresolution = 21\n")
    W = data[:, :2]
    assert np.allclose(data[:, 2], 1.5 * np.abs(W).sum(axis=1))
    assert np.allclose(data[:, 3], 1.5 * np.abs(W).sum(axis=1))
    assert np.allclose(data[:, 4], data[:, 2], atol=1e-3)


def test_conjugate_resolution_limit(tmp_path, capsys):
    text = "[potential]\nfamily = Quadratic\nweights = 1\ndim = 2\n[conjugate]\nresolution = 400\n"
    assert main(["conjugate", str(write(tmp_path, text))]) == 1
    assert "conjugate.resolution" in capsys.readouterr().err


# ---------------------------------------------------------------- plumbing

def test_inf_token():
    assert fmt(math.inf) == "inf"
    assert fmt(0.1) == "0.10000000000000001"


def test_module_entry_point(tmp_path):
    cfg = write(tmp_path, HARMONIC)
    proc = subprocess.run([sys.executable, "-m", "sben", "simulate", str(cfg)], capture_output=True, text=True,
                          env={"SBEN_LOG": "DEBUG", "PATH": ""})
    assert proc.returncode == 0, proc.stderr
    assert "certified" in proc.stdout
