import json

import pytest

from vsfscan import cli
from vsfscan.errors import NoPathError
from vsfscan.scene import load_scene

GEN = ["--gen", "1", "0.3", "6", "6", "--resolution", "0.1"]


def test_gen_scene(tmp_path, capsys):
    out = tmp_path / "s.json"
    assert cli.main(["gen-scene", "--rooms", "2", "--extents", "8", "6", "--seed", "4",
                     "--resolution", "0.1", "--out", str(out)]) == 0
    spec = load_scene(out)
    assert spec.extents[:2] == (80, 60)
    assert "wrote" in capsys.readouterr().out


def test_run_writes_outputs(tmp_path):
    out = tmp_path / "ep"
    assert cli.main(["run", *GEN, "--seed", "1", "--budget", "6", "--out", str(out)]) == 0
    for name in ("metrics.csv", "map_final.json", "config.json", "summary.json"):
        assert (out / name).exists()
    assert list((out / "plans").glob("plan_0001.json"))
    cfg = json.loads((out / "config.json").read_text())
    assert cfg["seed"] == 1 and cfg["step_budget"] == 6


def test_export_field(tmp_path):
    ep = tmp_path / "ep"
    assert cli.main(["run", *GEN, "--budget", "4", "--out", str(ep)]) == 0
    assert cli.main(["export-field", "--episode", str(ep), "--step", "2"]) == 0
    slices = sorted((ep / "field_step0002").glob("F_*.csv"))
    assert len(slices) == 16
    assert list((ep / "field_step0002" / "entropy").glob("*.csv"))


def test_compare(tmp_path):
    matrix = {
        "base": {"gen": {"rooms": 1, "density": 0.3, "extents": [6, 6], "seed": 0, "resolution": 0.1},
                 "step_budget": 4},
        "configs": [{"planner": "field"}, {"planner": "dijkstra"}],
        "seeds": [0],
    }
    m = tmp_path / "m.json"
    m.write_text(json.dumps(matrix))
    assert cli.main(["compare", "--matrix", str(m), "--out", str(tmp_path / "cmp")]) == 0
    for name in ("runs.csv", "table.csv", "curves.csv"):
        assert (tmp_path / "cmp" / name).exists()


def test_config_error_exit_2(tmp_path):
    bad = tmp_path / "c.json"
    bad.write_text('{"step_budget": 0}')
    assert cli.main(["run", *GEN, "--config", str(bad), "--out", str(tmp_path / "x")]) == 2
    assert cli.main(["run", *GEN, "--config", str(tmp_path / "missing.json"), "--out", str(tmp_path / "x")]) == 2


def test_scene_error_exit_3(tmp_path):
    s = tmp_path / "s.json"
    s.write_text("{broken")
    assert cli.main(["run", "--scene", str(s), "--out", str(tmp_path / "x")]) == 3
    assert cli.main(["run", "--gen", "1", "0.3", "2", "2", "--out", str(tmp_path / "x")]) == 3


def test_no_path_exit_4(tmp_path, monkeypatch):
    def boom(cfg):
        raise NoPathError("no route")

    monkeypatch.setattr(cli, "run_episode", boom)
    assert cli.main(["run", *GEN, "--out", str(tmp_path / "x")]) == 4


def test_usage_error():
    with pytest.raises(SystemExit) as e:
        cli.main(["run", "--out", "x"])
    assert e.value.code == 2
