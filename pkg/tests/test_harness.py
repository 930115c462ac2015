import csv
import json
import math
import subprocess
import sys
from pathlib import Path

import pytest
import yaml

from polycone import __version__
from polycone.harness import (ConfigError, ExperimentReport, config_hash, emit_plotdata, main,
                              toy_phi, validate_config)
from polycone.errors import NonConvergence
from polycone.pathsum import free_first_passage


def write(tmp_path, cfg, name="cfg.yaml"):
    path = tmp_path / name
    path.write_text(yaml.safe_dump(cfg))
    return str(path)


def base(command, **sections):
    cfg = {"schema_version": 1, "command": command, "model": {"d": 1, "lambda": 2.5}}
    cfg.update(sections)
    return cfg


def outputs(out):
    return sorted(p for p in Path(out).iterdir() if not p.name.endswith(".meta.json"))


def load(out, suffix):
    (path,) = [p for p in outputs(out) if p.name.endswith(suffix)]
    return path


def data_rows(path):
    lines = [l for l in Path(path).read_text().splitlines() if not l.startswith("#")]
    return list(csv.DictReader(lines))


def test_renewal_cli_recovers_first_passage(tmp_path):
    cfg = write(tmp_path, base("renewal", budgets={"M_max": 16, "N_max": 24}))
    out = tmp_path / "out"
    assert main(["renewal", "--config", cfg, "--out", str(out)]) == 0
    rep = json.loads(load(out, "-renewal.json").read_text())
    F = free_first_passage(1, 2.5)
    assert abs(rep["fitted"]["exp_minus_xi"] - F) <= 1e-6
    rows = data_rows(load(out, "plot-convergence.csv"))
    last = rows[-1]
    inv_mu = rep["fitted"]["inv_mu"]
    assert float(last["ci_lo"]) <= float(last["y"]) <= float(last["ci_hi"])
    assert abs(float(last["y"]) - inv_mu) <= float(last["ci_hi"]) - inv_mu + 1e-300


def test_invalid_lambda_exits_without_output(tmp_path):
    cfg = base("renewal")
    cfg["model"]["lambda"] = 1.0
    out = tmp_path / "never"
    assert main(["renewal", "--config", write(tmp_path, cfg), "--out", str(out)]) == 2
    assert not out.exists()


@pytest.mark.parametrize("bad", [
    {"model": {"d": 1, "lambda": 2.5, "gamma": 1}},
    {"budgets": {"M_maximum": 3}},
    {"experiment": {"pairs": 3}},
    {"colour": "red"},
    {"schema_version": 2},
    {"budgets": {"M_max": -1}},
    {"seed": -4},
])
def test_config_validation(tmp_path, bad):
    cfg = base("renewal")
    cfg.update(bad)
    with pytest.raises(ConfigError):
        validate_config(cfg)
    assert main(["renewal", "--config", write(tmp_path, cfg), "--out", str(tmp_path / "o")]) == 2


def test_command_mismatch_and_defaults():
    with pytest.raises(ConfigError):
        validate_config(base("renewal"), "tilt")
    cfg = validate_config(base("tilt"))
    assert cfg["experiment"]["newton_tol"] == 1e-12
    assert cfg["potential"] == {"family": "constant_zero", "p": 0.0, "v": 1.0, "rho": 0.0, "rate": 1.0} \
        or cfg["potential"]["family"] == "constant_zero"


def test_hash_ignores_output_location():
    a = validate_config({**base("renewal"), "output": "x"})
    b = validate_config(base("renewal"))
    assert config_hash(a) == config_hash(b)
    assert config_hash(validate_config({**base("renewal"), "seed": 3})) != config_hash(b)


def test_serial_reruns_are_byte_identical(tmp_path):
    cfg = write(tmp_path, base("sinai", potential={"family": "bernoulli_trap", "p": 0.05},
                               model={"d": 1, "lambda": 2.5, "beta": 1.0},
                               budgets={"M_max": 3, "N_max": 8, "excess": 3},
                               experiment={"instances": 4, "height": 2}))
    runs = []
    for name in ("a", "b"):
        out = tmp_path / name
        assert main(["sinai", "--config", cfg, "--out", str(out), "--serial"]) == 0
        runs.append({p.name: p.read_bytes() for p in outputs(out)})
    assert runs[0] == runs[1] and runs[0]


def test_environment_overrides(tmp_path, monkeypatch):
    cfg = write(tmp_path, base("quenched", experiment={"mode": "partition", "N_list": [1, 2]},
                               budgets={"max_len": 4}))
    out = tmp_path / "env-out"
    monkeypatch.setenv("POLYCONE_CONFIG", cfg)
    monkeypatch.setenv("POLYCONE_OUT", str(out))
    monkeypatch.setenv("POLYCONE_SEED", "17")
    assert main(["quenched"]) == 0
    rep = json.loads(load(out, "-quenched.json").read_text())
    assert rep["config"]["seed"] == 17
    monkeypatch.setenv("POLYCONE_BUDGET_NODES", "3")
    assert main(["quenched"]) == 3


def test_budget_exhaustion_exit_code(tmp_path):
    cfg = write(tmp_path, base("enumerate", budgets={"max_len": 12, "node_budget": 1000}))
    assert main(["enumerate", "--config", cfg, "--out", str(tmp_path / "o")]) == 3


def test_nonconvergence_exit_code(tmp_path, monkeypatch):
    from polycone import harness

    def stuck(*args):
        raise NonConvergence("no root")

    monkeypatch.setitem(harness._RUNNERS, "tilt", stuck)
    out = tmp_path / "o"
    assert main(["tilt", "--out", str(out)]) == 4
    assert not out.exists()


def test_every_file_carries_hash_and_version(tmp_path):
    cfg = base("diffusivity", experiment={"toy": {"a": 0.3, "b": 0.4}, "N_list": [8, 16]})
    out = tmp_path / "o"
    assert main(["diffusivity", "--config", write(tmp_path, cfg), "--out", str(out)]) == 0
    h = config_hash(validate_config(cfg))
    files = list(Path(out).iterdir())
    assert files
    for p in files:
        assert h[:12] in p.name
        text = p.read_text()
        assert h in text and __version__ in text


def test_empty_report_writes_header_only(tmp_path):
    rep = ExperimentReport("empty")
    rep.to_csv(tmp_path / "e.csv", ["config_hash: x"])
    lines = (tmp_path / "e.csv").read_text().splitlines()
    assert lines[0] == "# config_hash: x"
    assert all(not l.strip() for l in lines[1:])
    emit_plotdata(rep, "ratio", tmp_path / "p.csv", ["config_hash: x"])
    assert (tmp_path / "p.csv").read_text().splitlines()[1:] == ["x,y,ci_lo,ci_hi"]


def test_histogram_plot_normalised(tmp_path):
    cfg = base("diffusive", model={"d": 1, "lambda": 2.5, "beta": 0.5},
               potential={"family": "two_point", "v": 1.0, "rho": 0.3},
               budgets={"replicas": 3, "M_max": 4, "excess": 3}, experiment={"N": 6, "probe_radius": 3})
    out = tmp_path / "o"
    assert main(["diffusive", "--config", write(tmp_path, cfg), "--out", str(out)]) == 0
    rows = data_rows(load(out, "plot-histogram.csv"))
    assert math.fsum(float(r["y"]) for r in rows) == pytest.approx(1.0, abs=1e-9)
    assert math.fsum(float(r["ci_lo"]) for r in rows) == pytest.approx(1.0, abs=1e-9)


def test_toy_closed_form_helper():
    # e^{-phi} solves b w^2 + 2 a cosh(z) w = 1
    for z in (0.0, 0.7):
        w = math.exp(-toy_phi(0.3, 0.4, z))
        assert 0.4 * w * w + 0.6 * math.cosh(z) * w == pytest.approx(1.0, rel=1e-14)


def test_module_entry_point(tmp_path):
    res = subprocess.run([sys.executable, "-m", "polycone", "renewal", "--out", str(tmp_path / "o")],
                         capture_output=True, text=True)
    assert res.returncode == 0
    assert all(Path(line).exists() for line in res.stdout.split())
