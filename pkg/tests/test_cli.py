import json

import jsonschema
import pytest

from conftest import disk_scenario_dict
from stlnav.cli import main
from stlnav.export import SUMMARY_SCHEMA

CSV_HEAD = "t,p_x,p_y,q_x,q_y,u_x,u_y,config_bits,feasible,jump,h_1,hT_1,b_1,flag_1"


@pytest.fixture()
def scenario_file(tmp_path):
    path = tmp_path / "disk.json"
    path.write_text(json.dumps(disk_scenario_dict()))
    return path


def test_check(scenario_file, capsys):
    assert main(["check", str(scenario_file)]) == 0
    assert capsys.readouterr().out.startswith("ok: 1 tasks")
    assert main(["check", "eight_tasks"]) == 0


def test_bad_scenario_exit_code(tmp_path, capsys):
    path = tmp_path / "bad.json"
    path.write_text(json.dumps(disk_scenario_dict(formula="F[0,5] mu9")))
    assert main(["check", str(path)]) == 1
    assert "mu9" in capsys.readouterr().err


def test_run_both_writes_artifacts(scenario_file, tmp_path, capsys):
    out = tmp_path / "out"
    assert main(["run", str(scenario_file), "--mode", "both", "--out-dir", str(out)]) == 0
    for name in ("trace.csv", "trace_hybrid.csv", "trace_baseline.csv", "summary.json",
                 "workspace.svg", "predicates.svg"):
        assert (out / name).exists(), name
    summary = json.loads((out / "summary.json").read_text())
    jsonschema.validate(summary, SUMMARY_SCHEMA)
    runs = summary["runs"]
    assert runs["hybrid"]["satisfied_count"] >= runs["baseline"]["satisfied_count"]
    assert summary["csv_columns"] == CSV_HEAD.split(",")
    assert (out / "trace.csv").read_text().splitlines()[0] == CSV_HEAD
    assert (out / "workspace.svg").read_text().startswith("<svg")
    assert "hybrid: 1/1 satisfied" in capsys.readouterr().out


def test_run_is_byte_deterministic(scenario_file, tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["run", str(scenario_file), "--out-dir", str(a), "--seed", "3"]) == 0
    assert main(["run", str(scenario_file), "--out-dir", str(b), "--seed", "3"]) == 0
    assert (a / "trace.csv").read_bytes() == (b / "trace.csv").read_bytes()
    assert (a / "workspace.svg").read_bytes() == (b / "workspace.svg").read_bytes()


def test_dt_override(scenario_file, tmp_path):
    out = tmp_path / "o"
    assert main(["run", str(scenario_file), "--dt", "0.1", "--out-dir", str(out)]) == 0
    rows = (out / "trace.csv").read_text().splitlines()
    assert rows[2].startswith("0.1,")


def test_map_disk(scenario_file, tmp_path):
    out = tmp_path / "m"
    assert main(["map", str(scenario_file), "--out-dir", str(out)]) == 0
    diag = json.loads((out / "map_diagnostics.json").read_text())
    assert diag["boundary_radius_error"] < 1e-3
    assert diag["cache_reload_identical"]
    assert (out / "transform.json").exists()


def test_map_square(tmp_path):
    d = disk_scenario_dict(regions={"mu1": {"center": [0.5, 0.5], "radius": 0.1}}, p0=(0.2, 0.2))
    d["workspace"] = {"outer": {"type": "polygon", "vertices": [[0, 0], [1, 0], [1, 1], [0, 1]]}}
    path = tmp_path / "sq.json"
    path.write_text(json.dumps(d))
    assert main(["map", str(path), "--out-dir", str(tmp_path / "m")]) == 0
    diag = json.loads((tmp_path / "m" / "map_diagnostics.json").read_text())
    assert diag["det_J_positive"] and diag["det_J_grid_points"] == 2500
    assert diag["round_trip_max_error"] <= 1e-6
