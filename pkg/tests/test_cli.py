import copy
import json
import math
from pathlib import Path

import numpy as np
import pytest
import yaml

from spde_ldp.cli import load_config, main

GOLDEN = json.loads((Path(__file__).parent / "golden" / "reference_rate.json").read_text())
REFERENCE = Path(__file__).parents[1] / "configs" / "reference.yaml"

BASE = {
    "model": {"D": 1.0, "V": 0.0, "alpha": 1.0, "ell": math.pi,
              "sources": [{"kappa": math.pi / 2, "f": 1.0, "marks": {"type": "point_mass", "a0": 1.0}}]},
    "numerics": {"d_modes": 16, "dt": 0.01, "grid": 20},
    "event": {"test": [1.0], "level_offset": 0.3, "direction": ">=", "horizon": 1.0},
    "estimation": {"epsilons": [0.1], "n_samples": 2000, "seed": 7, "n_paths": 2},
}


def write(tmp_path, cfg, name="run.yaml"):
    path = tmp_path / name
    path.write_text(yaml.safe_dump(cfg))
    return path


def run(tmp_path, command, cfg=None, *extra, out="out"):
    path = write(tmp_path, BASE if cfg is None else cfg)
    return main([command, "--config", str(path), "--out", str(tmp_path / out), *extra])


def variant(**sections):
    cfg = copy.deepcopy(BASE)
    for name, changes in sections.items():
        if changes is None:
            cfg.pop(name, None)
        else:
            cfg.setdefault(name, {}).update(changes)
    return cfg


@pytest.mark.parametrize("command,files", [
    ("simulate", {"path_0000.csv", "jumps_0000.csv", "path_0001.csv", "jumps_0001.csv"}),
    ("skeleton", {"skeleton.csv"}),
    ("steady", {"steady_coefficients.csv", "steady_profile.csv"}),
    ("rate", {"rate_report.json", "optimal_control.csv"}),
    ("estimate", {"ldp_table.csv"}),
    ("validate", {"validation_report.json"}),
])
def test_every_command_runs(tmp_path, command, files):
    assert run(tmp_path, command) == 0
    out = tmp_path / "out"
    assert {p.name for p in out.iterdir()} == files | {"manifest.json"}
    manifest = json.loads((out / "manifest.json").read_text())
    assert set(manifest["files"]) == files
    assert manifest["exit_code"] == 0 and manifest["seed"] == 7


def test_manifest_is_reproducible(tmp_path):
    assert run(tmp_path, "rate", out="a") == 0
    assert run(tmp_path, "rate", out="b") == 0
    a = (tmp_path / "a" / "manifest.json").read_text()
    b = (tmp_path / "b" / "manifest.json").read_text()
    assert a == b
    assert json.loads(a)["config_sha256"] == load_config(tmp_path / "run.yaml", tmp_path).sha256


def test_simulate_modes(tmp_path):
    stable = variant(numerics={"d_modes": 4, "dt": 0.001})
    assert run(tmp_path, "simulate", stable, "--mode", "euler", out="e") == 0
    # explicit steps beyond the stability limit of mode 16 blow up
    assert run(tmp_path, "simulate", None, "--mode", "euler", out="u") == 4
    assert run(tmp_path, "simulate", None, "--mode", "picard", out="p") == 2
    assert run(tmp_path, "skeleton", None, "--mode", "picard", out="s") == 0
    assert run(tmp_path, "steady", None, "--mode", "exact", out="x") == 2
    with pytest.raises(SystemExit) as err:
        run(tmp_path, "simulate", None, "--mode", "sideways")
    assert err.value.code == 2


def test_skeleton_modes_agree(tmp_path):
    assert run(tmp_path, "skeleton", out="c") == 0
    assert run(tmp_path, "skeleton", variant(numerics={"dt": 0.05}), "--mode", "picard", out="p") == 0
    c = np.loadtxt(tmp_path / "c" / "skeleton.csv", delimiter=",", skiprows=1)
    p = np.loadtxt(tmp_path / "p" / "skeleton.csv", delimiter=",", skiprows=1)
    assert np.array_equal(c[:, 0], p[:, 0])
    assert np.max(np.abs(c[:, 1:] - p[:, 1:])) < 1e-3


@pytest.mark.parametrize("cfg,field", [
    (variant(estimation={"seed": None}), "estimation.seed"),
    (variant(model={"alpha": -1.0}), "model.alpha"),
    (variant(estimation={"n_samples": 0}), "estimation.n_samples"),
    (variant(numerics={"d_modes": 2.5}), "numerics.d_modes"),
    (variant(event={"level": 1.0}), "event"),
    (variant(extra={"x": 1}), "top level"),
])
def test_config_errors(tmp_path, capsys, cfg, field):
    if cfg["estimation"].get("seed", 0) is None:
        del cfg["estimation"]["seed"]
    assert run(tmp_path, "estimate", cfg) == 2
    assert field in capsys.readouterr().err


def test_missing_config_file(tmp_path, capsys):
    assert main(["rate", "--config", str(tmp_path / "absent.yaml"), "--out", str(tmp_path)]) == 2
    assert "not found" in capsys.readouterr().err


def test_nonintegrable_marks(tmp_path, capsys):
    cfg = variant()
    cfg["model"]["sources"] = [{"kappa": 1.0, "f": 1.0,
                                "marks": {"type": "half_normal", "sigma": 1.0, "delta": 0.5}}]
    assert run(tmp_path, "rate", cfg) == 2
    assert "2*delta*sigma^2" in capsys.readouterr().err
    assert run(tmp_path, "validate", cfg, out="v") == 5
    report = json.loads((tmp_path / "v" / "validation_report.json").read_text())
    assert report["passed"] is False
    assert report["checks"][0]["check"] == "mark_integrability"
    assert "diverges" in report["checks"][0]["explanation"]


def test_rate_matches_golden(tmp_path, capsys):
    cfg = variant(numerics={"d_modes": GOLDEN["d_modes"]})
    assert run(tmp_path, "rate", cfg, "--cross-check") == 0
    out = capsys.readouterr().out
    assert "relative gap" in out
    report = json.loads((tmp_path / "out" / "rate_report.json").read_text())
    assert report["dual"]["rate"] == pytest.approx(GOLDEN["rate"], abs=1e-9)
    assert report["dual"]["beta"] == pytest.approx(GOLDEN["beta"], abs=1e-9)
    assert report["relative_gap"] < 1e-6


def test_rate_at_nominal_level(tmp_path):
    assert run(tmp_path, "rate", variant(event={"level_offset": 0.0})) == 0
    report = json.loads((tmp_path / "out" / "rate_report.json").read_text())
    assert report["dual"]["rate"] == 0.0


def test_rate_unattainable(tmp_path):
    cfg = variant(event={"level_offset": -0.5, "direction": "<="})
    assert run(tmp_path, "rate", cfg) == 3
    report = json.loads((tmp_path / "out" / "rate_report.json").read_text())
    assert report["dual"]["attainable"] is False and report["dual"]["rate"] == "inf"
    manifest = json.loads((tmp_path / "out" / "manifest.json").read_text())
    assert manifest["exit_code"] == 3


def test_plain_estimate_single_epsilon(tmp_path):
    cfg = variant(estimation={"epsilons": None, "epsilon": 0.1, "method": "plain"})
    del cfg["estimation"]["epsilons"]
    assert run(tmp_path, "estimate", cfg) == 0
    lines = (tmp_path / "out" / "ldp_table.csv").read_text().splitlines()
    assert len(lines) == 2
    assert lines[0] == "epsilon,p_hat,std_err,neg_eps_log_p,rate,gap"


def test_estimate_with_constant_control(tmp_path):
    assert run(tmp_path, "estimate", variant(control={"type": "constant", "theta": 2.0})) == 0


def test_tabulated_control_checked(tmp_path, capsys):
    ctrl = {"type": "tabulated", "time_edges": [0.0, 0.5], "mark_edges": [0.0, 2.0],
            "values": [[[2.0]]], "bound": 4.0}
    assert run(tmp_path, "estimate", variant(control=ctrl)) == 2
    assert "last edge" in capsys.readouterr().err
    ctrl["time_edges"] = [0.0, 1.0]
    assert run(tmp_path, "estimate", variant(control=ctrl), out="ok") == 0


def test_reference_config_parses():
    cfg = load_config(REFERENCE)
    assert cfg.numerics["d_modes"] == 64 and cfg.estimation["seed"] == 7
