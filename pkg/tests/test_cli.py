import json
from importlib import resources

import pytest
from click.testing import CliRunner

from saddlenode.cli import main
from saddlenode.saddle_node import SaddleNodeField, random_saddle_node
from saddlenode.series_core import MultiSeries


@pytest.fixture
def runner():
    return CliRunner()


@pytest.fixture
def field_file(tmp_path):
    p = tmp_path / "field.json"
    p.write_text(json.dumps(random_saddle_node(3, 8, 6).to_json_dict()))
    return p


def test_normalize_report(runner, field_file, tmp_path):
    out = tmp_path / "r.json"
    res = runner.invoke(main, ["normalize", "--input", str(field_file), "--order", "3", "--out", str(out)])
    assert res.exit_code == 0, res.output
    rep = json.loads(out.read_text())
    assert rep["schema"] == 1
    assert rep["residual_max"] < 1e-8
    assert rep["provenance"]
    assert all(c["passed"] for c in rep["checks"])


def test_normalize_is_deterministic(runner, field_file, tmp_path):
    outs = []
    for name in ("a.json", "b.json"):
        runner.invoke(main, ["normalize", "--input", str(field_file), "--order", "3", "--out", str(tmp_path / name)])
        outs.append((tmp_path / name).read_bytes())
    assert outs[0] == outs[1]


def test_normalize_zero_perturbation(runner, tmp_path):
    K, D = 6, 4
    x, y1, y2 = MultiSeries.x(K, D), MultiSeries.y1(K, D), MultiSeries.y2(K, D)
    Y = SaddleNodeField.from_components(y1 * (-1 + 0.3 * x), y2 * (1 + 0.2 * x))
    p = tmp_path / "model.json"
    p.write_text(json.dumps(Y.to_json_dict()))
    res = runner.invoke(main, ["normalize", "--input", str(p), "--order", "2"])
    assert res.exit_code == 0, res.output
    rep = json.loads(res.output)
    recs = rep["map"]["comp_y1"]["records"]
    assert [(r["m"], r["n1"], r["n2"]) for r in recs] == [(0, 1, 0)]


def test_input_errors(runner, tmp_path, field_file):
    bad = tmp_path / "bad.json"
    bad.write_text("{oops")
    res = runner.invoke(main, ["normalize", "--input", str(bad)])
    assert res.exit_code == 2 and "line 1" in res.output
    res = runner.invoke(main, ["normalize", "--input", str(tmp_path / "missing.json")])
    assert res.exit_code == 2
    res = runner.invoke(main, ["normalize", "--input", str(field_file), "--order", "4", "--ydeg", "6"])
    assert res.exit_code == 2


def test_config_file_and_flag_priority(runner, field_file, tmp_path):
    cfg = tmp_path / "c.toml"
    cfg.write_text("[normalize]\norder = 99\n")
    res = runner.invoke(main, ["--config", str(cfg), "normalize", "--input", str(field_file), "--order", "2"])
    assert res.exit_code == 0, res.output
    res = runner.invoke(main, ["--config", str(cfg), "normalize", "--input", str(field_file)])
    assert res.exit_code == 2


def test_borel_euler(runner):
    series = resources.files("saddlenode") / "data" / "euler.json"
    res = runner.invoke(main, ["borel", "--series", str(series), "--direction", "3.14159", "--eval=-0.1"])
    assert res.exit_code == 0, res.output
    rep = json.loads(res.output)
    assert abs(rep["value"]["re"] - 0.0915633) < 1e-7
    assert not rep["pole_report"]["accumulating_at_origin"]


def test_borel_blocked_direction(runner, tmp_path):
    s = tmp_path / "s.json"
    s.write_text(json.dumps({"coefficients": [0.0] + [(-1.0) ** (n - 1) * [1, 1, 2, 6, 24, 120, 720, 5040][n - 1] for n in range(1, 9)]}))
    res = runner.invoke(main, ["borel", "--series", str(s), "--direction", "3.14159", "--eval=-0.1"])
    assert res.exit_code == 1
    assert json.loads(res.output)["error"] == "DirectionBlocked"


def test_sector_trajectory(runner, field_file, tmp_path):
    csv_path = tmp_path / "t.csv"
    res = runner.invoke(
        main, ["sector", "--input", str(field_file), "--order", "1", "--base", "0,0.05,0.01,0,0.02,0", "--emit", str(csv_path)]
    )
    assert res.exit_code == 0, res.output
    lines = csv_path.read_text().splitlines()
    assert lines[0].startswith("t,re_x,im_x")
    assert len(lines) > 3
    assert json.loads(res.output)["checks"][0]["passed"]


def test_painleve_demo(runner, tmp_path):
    out = tmp_path / "p.json"
    res = runner.invoke(main, ["painleve", "--demo", "--out", str(out)])
    assert res.exit_code == 0, res.output
    rep = json.loads(out.read_text())
    names = {c["name"]: c for c in rep["checks"]}
    assert names["residue_minus_one"]["passed"] and names["symplectic_defect"]["passed"]
    assert rep["classification"] == "strictly_non_degenerate"
