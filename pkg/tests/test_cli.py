import csv
import json

import pytest

from sobomap.cli import ConfigError, main, resolve


def test_mu_above_half_exits_with_code_two(tmp_path, capsys):
    code = main(["uncross", "--mu", "0.6", "--out", str(tmp_path)])
    assert code == 2
    assert "mu < 1/2" in capsys.readouterr().err


def test_unknown_config_key_is_rejected(tmp_path, capsys):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"sigma_ladder": [1, 2]}))
    assert main(["energy", "--config", str(cfg), "--out", str(tmp_path)]) == 2
    assert "sigma_ladder" in capsys.readouterr().err


def test_config_overrides_flags():
    cfg = resolve("energy", {"p": "1.25"}, {"p": 1.75})
    assert cfg["p"] == 1.75
    with pytest.raises(ConfigError):
        resolve("uncross", {}, {"eta": [0.3]})
    with pytest.raises(ConfigError):
        resolve("project", {"n_shifts": "8"}, None)
    with pytest.raises(ConfigError):
        resolve("project", {}, {"experiment": "uncross"})


def test_energy_run_is_byte_reproducible(tmp_path):
    args = ["energy", "--p", "1.5", "--samples", "20000", "--seed", "4"]
    assert main(args + ["--out", str(tmp_path / "a")]) == 0
    assert main(args + ["--out", str(tmp_path / "b")]) == 0
    a = (tmp_path / "a" / "energy.csv").read_bytes()
    assert a == (tmp_path / "b" / "energy.csv").read_bytes()
    row = next(csv.DictReader(a.decode().splitlines()))
    assert float(row["value"]) == pytest.approx(4 * 3.141592653589793, rel=0.02)
    manifest = json.loads((tmp_path / "a" / "manifest.json").read_text())
    assert manifest["config"]["seed"] == 4 and manifest["config"]["samples"] == 20000


def test_retraction_demo_writes_geometry(tmp_path):
    assert main(["retraction-demo", "--out", str(tmp_path)]) == 0
    info = json.loads((tmp_path / "retraction.json").read_text())
    assert info["components"] == 5 and info["edge_fix_error"] <= 1e-9
    assert (tmp_path / "retraction_singular.obj").read_text().count("\ng ") == 5


def test_class_verify_rigid(tmp_path):
    assert main(["class-verify", "--out", str(tmp_path), "--class-samples", "300"]) == 0
    info = json.loads((tmp_path / "class.json").read_text())
    assert info["passed"] and info["crossings"] == 8


def test_project_ladder_decreases(tmp_path):
    out = tmp_path / "p"
    code = main(["project", "--target", "sphere:1", "--eta", "0.2,0.1", "--samples", "4000", "--seed", "1",
                 "--out", str(out)])
    rows = list(csv.DictReader((out / "ladder.csv").read_text().splitlines()))
    values = [float(r["value"]) for r in rows]
    assert len(values) == 2 and values[1] < values[0]
    assert code == 0
    assert (out / "preimage_eta0.1.svg").exists()
