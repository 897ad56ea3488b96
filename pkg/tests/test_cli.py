import copy

import pytest
import yaml

from transportlab.cli import DEFAULTS, load_config, main, validate


def write_cfg(tmp_path, **over):
    cfg = copy.deepcopy(DEFAULTS)
    for path, value in over.items():
        node = cfg
        keys = path.split("__")
        for k in keys[:-1]:
            node = node[k]
        node[keys[-1]] = value
    p = tmp_path / "cfg.yaml"
    p.write_text(yaml.safe_dump(cfg))
    return str(p)


def test_defaults_validate():
    assert validate(load_config(None)) == []


def test_eps0_violation_is_named():
    cfg = load_config(None)
    cfg["discretization"]["eps0"] = 0.25 / 8
    assert "discretization.eps0: eps0 < T/16 violated" in validate(cfg)


def test_every_violation_is_listed():
    cfg = load_config(None)
    cfg["geometry"]["eps"] = 2.0
    cfg["discretization"]["dt"] = 0.1
    problems = validate(cfg)
    assert any("eps < 1" in p for p in problems)
    assert any("beta*T/(4M)" in p for p in problems)
    assert any("CFL" in p for p in problems)
    assert any("multiple of dt" in p for p in problems)


def test_validate_exit_codes(tmp_path, capsys):
    assert main(["validate", "--config", write_cfg(tmp_path)]) == 0
    assert main(["validate", "--config", write_cfg(tmp_path, discretization__eps0=0.03125)]) == 2
    assert "eps0 < T/16 violated" in capsys.readouterr().out


def test_unknown_preset_is_configuration_error(tmp_path):
    cfg = write_cfg(tmp_path, coefficients__H={"preset": "spiral"})
    assert main(["forward", "--config", cfg, "--out", str(tmp_path / "o"), "--quiet"]) == 2


def test_missing_config_file(tmp_path):
    assert main(["forward", "--config", str(tmp_path / "nope.yaml"), "--quiet"]) == 2


def test_resolution_scale_must_be_positive(tmp_path):
    assert main(["forward", "--resolution-scale", "0", "--out", str(tmp_path), "--quiet"]) == 2


def test_demo_run(tmp_path):
    out = tmp_path / "demo"
    assert main(["demo-nonuniqueness", "--out", str(out), "--quiet"]) == 0
    rep = yaml.safe_load((out / "report.yaml").read_text())
    assert rep["passed"] and rep["outputs"]["final_norm"] > 0.4
    assert (out / "nonuniqueness.csv").exists()


def test_failed_assertion_exit_code(tmp_path):
    # two levels give too few pairs to fit an exponent
    cfg = write_cfg(tmp_path, experiment={"problem": "p", "levels": 2, "held_out": 0})
    assert main(["stability-sweep", "--config", cfg, "--out", str(tmp_path / "o"), "--quiet"]) == 1


@pytest.mark.parametrize("kind", ["forward", "reconstruct-h", "energy-check"])
def test_same_seed_is_byte_identical(tmp_path, kind):
    cfg = write_cfg(tmp_path, experiment={"instances": 2, "h": 1 / 32})
    a, b = tmp_path / "a", tmp_path / "b"
    assert main([kind, "--config", cfg, "--out", str(a), "--seed", "7", "--quiet"]) == 0
    assert main([kind, "--config", cfg, "--out", str(b), "--seed", "7", "--quiet"]) == 0
    csvs = sorted(p.name for p in a.glob("*.csv"))
    assert csvs
    for name in csvs:
        assert (a / name).read_bytes() == (b / name).read_bytes()
