import json

import numpy as np
import pytest

from gridbo.cli import load_config, main
from gridbo.lfr import DeltaStructure, LfrPlant
from gridbo.lti import StateSpaceModel


def two_parameter_plant():
    """Disturbance rejection on ``1 / (s + 1 + 0.4 a - 0.4 b)`` with a control penalty.

    The hardest point, ``(a, b) = (-1, 1)``, is not one of the initial corners.
    """
    A = [[-1.0]]
    B = [[-0.4, 0.4, 1.0, 1.0]]
    C = [[1.0], [1.0], [1.0], [0.0], [1.0]]
    D = np.zeros((5, 4))
    D[3, 3] = 0.5
    G = StateSpaceModel(A, B, C, D, {"delta": (0, 2), "w": (2, 1), "u": (3, 1)},
                        {"delta": (0, 2), "z": (2, 2), "y": (4, 1)})
    return LfrPlant(G, DeltaStructure.from_spec([("a", 1), ("b", 1)]))


@pytest.fixture
def config(tmp_path):
    (tmp_path / "plant.json").write_text(two_parameter_plant().to_json())
    cfg = {"plant": {"file": "plant.json"},
           "controller": {"n_xk": 1, "fixed_zero_D": True},
           "init": {"mode": "corners"},
           "profile": {"epsilon": 0.3, "n_max": 6, "n_initial": 3, "multistart_count": 8,
                       "local_steps": 10},
           "synthesis": {"restarts": 2, "budget": 150, "polish_budget": 150},
           "n_target": 3, "seed": 7}
    path = tmp_path / "config.json"
    path.write_text(json.dumps(cfg))
    return path


def run(*args):
    return main([str(a) for a in args])


def test_allocate_analyze_report(config, tmp_path):
    out = tmp_path / "run"
    assert run("allocate", "--config", config, "--out", out) == 0
    for name in ("k0.json", "selection0.json", "trace.csv", "selection.json", "controller.json"):
        assert (out / name).is_file()
    sel = json.loads((out / "selection.json").read_text())
    trace = (out / "trace.csv").read_text().splitlines()
    assert trace[0].startswith("iteration,theta_1,theta_2,J_before")
    assert len(sel["points"]) == 2 + len(trace) - 1 <= 3
    assert len(trace) > 1
    first = [float(v) for v in trace[1].split(",")[1:3]]
    assert first == pytest.approx([-1.0, 1.0], abs=0.15)

    assert run("analyze", "--config", config, "--out", out, "--density", 5) == 0
    rows = (out / "sweep.csv").read_text().splitlines()
    assert rows[0] == "a,b,J" and len(rows) == 1 + 25
    assert (out / "sweep_k0.csv").is_file()

    assert run("report", "--out", out) == 0
    summary = json.loads((out / "summary.json").read_text())
    assert summary["sweep"]["points"] == 25 and summary["sweep"]["all_stable"]
    assert summary["allocation"]["iterations"] == len(trace) - 1


def test_allocate_is_byte_identical(config, tmp_path):
    assert run("allocate", "--config", config, "--out", tmp_path / "a") == 0
    assert run("allocate", "--config", config, "--out", tmp_path / "b") == 0
    assert (tmp_path / "a" / "trace.csv").read_bytes() == (tmp_path / "b" / "trace.csv").read_bytes()
    assert (tmp_path / "a" / "controller.json").read_bytes() == \
        (tmp_path / "b" / "controller.json").read_bytes()


def test_target_equal_to_initial_size(config, tmp_path):
    cfg = json.loads(config.read_text())
    cfg["n_target"] = 2
    config.write_text(json.dumps(cfg))
    out = tmp_path / "run"
    assert run("allocate", "--config", config, "--out", out) == 0
    assert (out / "trace.csv").read_text().splitlines() == \
        ["iteration,theta_1,theta_2,J_before,J_after,size,predicted_max,bo_miss"]
    assert json.loads((out / "selection.json").read_text())["points"] == \
        json.loads((out / "selection0.json").read_text())["points"]


def test_synthesize_command(config, tmp_path):
    out = tmp_path / "syn"
    assert run("synthesize", "--config", config, "--out", out) == 0
    k = json.loads((out / "controller.json").read_text())
    assert k["kind"] == "robust"


@pytest.mark.parametrize("args", [
    ["allocate", "--config", "/nonexistent/config.json", "--out", "x"],
    ["allocate", "--out", "x"],
    ["frobnicate", "--out", "x"],
])
def test_usage_errors_exit_2(args, tmp_path, capsys):
    assert main(args) == 2


def test_missing_plant_file_exits_2(tmp_path, capsys):
    path = tmp_path / "c.json"
    path.write_text(json.dumps({"plant": {"file": "missing.json"}}))
    assert run("allocate", "--config", path, "--out", tmp_path / "o") == 2
    assert "plant file not found" in capsys.readouterr().err


def test_unknown_builtin_and_bad_json(tmp_path):
    path = tmp_path / "c.json"
    path.write_text(json.dumps({"plant": "pendulum"}))
    assert run("synthesize", "--config", path, "--out", tmp_path / "o") == 2
    path.write_text("{not json")
    assert run("synthesize", "--config", path, "--out", tmp_path / "o") == 2


def test_report_on_empty_dir_exits_2(tmp_path):
    assert run("report", "--out", tmp_path) == 2
    assert run("report", "--out", tmp_path / "absent") == 2


def test_analyze_bad_density(config, tmp_path):
    assert run("analyze", "--config", config, "--out", tmp_path, "--density", 1) == 2


def test_analyze_without_controller_exits_2(config, tmp_path):
    assert run("analyze", "--config", config, "--out", tmp_path / "empty") == 2


def test_simulate_requires_builtin(config, tmp_path):
    out = tmp_path / "syn"
    assert run("synthesize", "--config", config, "--out", out) == 0
    assert run("simulate", "--config", config, "--out", out) == 2


def test_overrides_and_defaults(tmp_path):
    path = tmp_path / "c.json"
    path.write_text(json.dumps({"plant": "unbalanced_disk", "n_target": 4}))
    cfg = load_config(path, {"seed": 11, "profile": None})
    assert cfg["seed"] == 11 and cfg["n_target"] == 4
    assert cfg["controller"] == {"n_xk": 3, "fixed_zero_D": True}
    assert cfg["profile"] == "unbalanced_disk"
