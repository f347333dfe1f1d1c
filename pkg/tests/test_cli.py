"""Command-line interface: exit codes, outputs, preset loading, determinism."""
import json
import os

import numpy as np
import pytest

from tesspp.cli import load_preset, main, preset_names
from tesspp.geometry import read_pattern_csv, read_tessellation_text, Window


@pytest.fixture()
def sim_dir(tmp_path):
    spec = {
        "scenario": "constant-tiles",
        "beta0": 3.91,
        "gamma0": 6.11 - 3.91,
        "seed": 77,
        "grid": 64,
    }
    spec_path = tmp_path / "spec.json"
    spec_path.write_text(json.dumps(spec))
    out = tmp_path / "sim"
    assert main(["--out", str(out), "simulate", str(spec_path)]) == 0
    return tmp_path, out


def _pipeline_cfg(tmp_path, out, **extra):
    cfg = {
        "window": [0.0, 1.0, 0.0, 1.0],
        "pattern": str(out / "pattern.csv"),
        "bandwidth": 0.1,
        "eval_grid": 32,
        "dummy_grid": 32,
    }
    cfg.update(extra)
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(cfg))
    return path


def test_simulate_outputs(sim_dir):
    tmp_path, out = sim_dir
    pat = read_pattern_csv(out / "pattern.csv", Window(0, 1, 0, 1))
    assert pat.n > 100
    assert (out / "intensity.txt").exists()


def test_missing_config_exits_2(tmp_path):
    assert main(["--out", str(tmp_path / "o"), "fit-global", str(tmp_path / "nope.json")]) == 2


def test_invalid_spec_exits_2(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"scenario": "bogus"}))
    assert main(["--out", str(tmp_path / "o"), "simulate", str(bad)]) == 2


def test_missing_pattern_file_exits_1(tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(
        json.dumps({"window": [0, 1, 0, 1], "pattern": str(tmp_path / "none.csv")})
    )
    assert main(["--out", str(tmp_path / "o"), "fit-global", str(cfg)]) == 1


def test_fit_global_outputs(sim_dir):
    tmp_path, out = sim_dir
    cfg = _pipeline_cfg(tmp_path, out)
    dest = tmp_path / "gfit"
    assert main(["--out", str(dest), "fit-global", str(cfg)]) == 0
    assert (dest / "global_fit.json").exists()
    lines = (dest / "global_coefs.csv").read_text().strip().splitlines()
    assert lines[0].startswith("name,")
    assert len(lines) == 2  # header + intercept


def test_fit_local_and_segment(sim_dir):
    tmp_path, out = sim_dir
    cfg = _pipeline_cfg(tmp_path, out)
    dest = tmp_path / "local"
    assert main(["--out", str(dest), "fit-local", str(cfg)]) == 0
    assert (dest / "local_intercept.txt").exists()
    meta = json.loads((dest / "local_meta.json").read_text())
    assert meta["bandwidth"] == 0.1

    dest2 = tmp_path / "seg"
    assert main(["--out", str(dest2), "segment", str(cfg)]) == 0
    tess = read_tessellation_text(dest2 / "tessellation_0.txt")
    assert tess.q >= 1


def test_analyze_outputs(sim_dir):
    tmp_path, out = sim_dir
    cfg = _pipeline_cfg(tmp_path, out)
    dest = tmp_path / "an"
    assert main(["--out", str(dest), "analyze", str(cfg)]) == 0
    comp = json.loads((dest / "comparison.json").read_text())
    for key in ("aic_global", "aic_tessellated", "lrt", "mise_global", "mise_tessellated"):
        assert key in comp
    assert comp["aic_tessellated"] <= comp["aic_global"] + 2 * len(comp["tessellation_q"]) * 10
    assert (dest / "surface_intercept.png").exists()


def test_experiment_requires_config():
    assert main(["experiment"]) == 2


def test_experiment_dry_run_preset(tmp_path):
    assert main(["--out", str(tmp_path), "experiment", "--preset", "table1_smoke", "--dry-run"]) == 0


def test_experiment_invalid_config_exits_2(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"protocol": "recovery"}))
    assert main(["--out", str(tmp_path / "o"), "experiment", str(bad)]) == 2


def test_experiment_run_and_determinism(tmp_path):
    doc = {
        "protocol": "recovery",
        "scenario": "constant-tiles",
        "rows": [{"en": 500, "beta0": 3.91, "gamma0": 6.11}],
        "replicates": 2,
        "seed": 5,
    }
    cfgp = tmp_path / "exp.json"
    cfgp.write_text(json.dumps(doc))
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["--out", str(a), "experiment", str(cfgp)]) == 0
    assert main(["--out", str(b), "experiment", str(cfgp)]) == 0
    assert (a / "table.csv").read_bytes() == (b / "table.csv").read_bytes()


def test_seed_override(tmp_path):
    doc = {
        "protocol": "recovery",
        "scenario": "constant-tiles",
        "rows": [{"en": 500, "beta0": 3.91, "gamma0": 6.11}],
        "replicates": 1,
        "seed": 5,
    }
    cfgp = tmp_path / "exp.json"
    cfgp.write_text(json.dumps(doc))
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["--seed", "6", "--out", str(a), "experiment", str(cfgp)]) == 0
    assert main(["--seed", "7", "--out", str(b), "experiment", str(cfgp)]) == 0
    assert (a / "table.csv").read_bytes() != (b / "table.csv").read_bytes()


def test_presets_bundled_and_loadable():
    names = preset_names()
    for i in range(1, 8):
        assert f"table{i}" in names
        assert f"table{i}_smoke" in names
    cfg = load_preset("table1")
    assert cfg["protocol"] == "identification"
    assert len(cfg["rows"]) == 5
    with pytest.raises(FileNotFoundError):
        load_preset("table99")
