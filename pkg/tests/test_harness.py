import csv
import json
import shutil
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mwlab import cli, harness
from mwlab.harness import ConfigError, ExperimentConfig, fit_constant, stability_check
from mwlab.weight_field import GridSpec, make_family, save_field


def _cfg(**kw):
    return ExperimentConfig.from_dict(kw)


def _rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


# fit_constant ---------------------------------------------------------------

def test_fit_exact_line():
    res = fit_constant([(x, 3 * x) for x in (0.1, 0.2, 0.3, 0.4, 0.5, 0.6)])
    assert res.fitted_c == pytest.approx(3.0) and res.residual == pytest.approx(0.0, abs=1e-14)
    assert res.band == pytest.approx((0.01, 0.09))


def test_fit_zero_ordinates():
    res = fit_constant([(x, 0.0) for x in (0.1, 0.2, 0.3, 0.4)])
    assert res.fitted_c == 0.0 and res.residual == 0.0


def test_fit_uses_small_half_only():
    pairs = [(0.1, 0.1), (0.2, 0.2), (0.3, 3.0), (0.4, 4.0)]
    assert fit_constant(pairs).fitted_c == pytest.approx(1.0)


def test_fit_errors():
    with pytest.raises(ValueError, match="at least 4"):
        fit_constant([(0.1, 1), (0.2, 2), (0.3, 3)])
    with pytest.raises(ValueError, match="positive"):
        fit_constant([(0.0, 1), (0.2, 2), (0.3, 3), (0.4, 4)])


@settings(max_examples=40, deadline=None)
@given(st.lists(st.tuples(st.floats(0.01, 1.0), st.floats(0.0, 5.0)), min_size=4, max_size=12),
       st.floats(0.1, 10.0))
def test_fit_scale_equivariant(pairs, a):
    base = fit_constant(pairs)
    scaled = fit_constant([(x, a * y) for x, y in pairs])
    assert base.fitted_c >= 0
    assert scaled.fitted_c == pytest.approx(a * base.fitted_c, rel=1e-9, abs=1e-12)


# configs --------------------------------------------------------------------

def test_config_defaults_and_round_trip():
    cfg = _cfg(experiment="a2h")
    assert cfg["grid"] == {"m": 1, "n": 64, "L": 1.0} and cfg["seed"] == 0
    again = ExperimentConfig.from_dict(json.loads(cfg.to_json()))
    assert again.raw == cfg.raw and again.hash == cfg.hash
    assert _cfg(experiment="a2h", seed=1).hash != cfg.hash
    assert _cfg(experiment="a2h", workers=4, output={"dir": "elsewhere"}).hash == cfg.hash


@pytest.mark.parametrize("bad", [
    {"experiment": "nope"},
    {"experiment": "a2h", "colour": 1},
    {"experiment": "a2h", "grid": {"m": 3}},
    {"experiment": "a2h", "grid": {"n": 48}},
    {"experiment": "a2h", "family": {"name": "lognormal"}},
    {"experiment": "bellman_sweep", "delta_grid": [0.1, 0.9]},
    {"experiment": "a2h", "input_file": "missing.mwlf"},
])
def test_config_rejects(bad):
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict(bad)


def test_config_load_errors(tmp_path):
    with pytest.raises(ConfigError, match="does not exist"):
        ExperimentConfig.load(tmp_path / "none.json")
    p = tmp_path / "bad.json"
    p.write_text("{not json")
    with pytest.raises(ConfigError, match="JSON"):
        ExperimentConfig.load(p)


def test_refined_doubles_resolution():
    cfg = _cfg(experiment="martingale", grid={"n": 32}, time={"count": 40}, depth=3)
    fine = cfg.refined()
    assert fine["grid"]["n"] == 64 and fine["time"]["count"] == 79 and fine["depth"] == 4
    assert cfg["grid"]["n"] == 32


def test_shipped_configs_validate():
    root = Path(__file__).resolve().parent.parent / "configs"
    names = sorted(p.stem for p in root.glob("*.json"))
    assert names
    for name in names:
        ExperimentConfig.load(root / f"{name}.json")


# runs -----------------------------------------------------------------------

def test_a2h_identity_run(tmp_path):
    cfg = _cfg(experiment="a2h", family={"name": "identity"})
    assert harness.run(cfg, tmp_path) == harness.EXIT_OK
    rows = _rows(tmp_path / "a2h.csv")
    assert len(rows) == 1
    assert abs(float(rows[0]["characteristic"]) - 1.0) < 1e-10
    assert list(rows[0]) == harness.COLUMNS["a2h"]
    assert rows[0]["config_hash"] == cfg.hash
    manifest = json.loads((tmp_path / "manifest.json").read_text())
    assert manifest["config_hash"] == cfg.hash and manifest["status"] == 0
    assert manifest["outputs"] == ["a2h.csv"]
    assert {"mwlab", "numpy", "python", "kernels"} <= set(manifest["versions"])
    assert "wall_time_s" in manifest and manifest["seed"] == 0


def test_file_input(tmp_path):
    w = make_family("scalar_oscillation", [0.2], GridSpec(1, 32), 1)
    save_field(w, tmp_path / "w.mwlf")
    p = tmp_path / "cfg.json"
    p.write_text(json.dumps({"experiment": "a2h", "input_file": "w.mwlf", "grid": {"n": 32}}))
    cfg = ExperimentConfig.load(p)
    tables, _ = harness.execute(cfg)
    assert tables["a2h"][0]["family"] == "file"
    assert tables["a2h"][0]["characteristic"] > 1
    (tmp_path / "w.mwlf").write_bytes(b"XXXX" + (tmp_path / "w.mwlf").read_bytes()[4:])
    with pytest.raises(ConfigError, match="malformed"):
        ExperimentConfig.load(p)


def test_duality_rows_pass(tmp_path):
    cfg = _cfg(experiment="duality", grid={"m": 1, "n": 64})
    assert harness.run(cfg, tmp_path) == 0
    rows = _rows(tmp_path / "duality.csv")
    assert len(rows) == 10
    assert all(float(r["residual"]) < 1e-3 and r["passed"] == "true" for r in rows)


def test_numeric_failure_exit_and_rows(tmp_path):
    cfg = _cfg(experiment="duality", grid={"m": 1, "n": 64}, tolerances={"duality": 1e-16})
    assert harness.run(cfg, tmp_path) == harness.EXIT_NUMERIC
    manifest = json.loads((tmp_path / "manifest.json").read_text())
    assert manifest["status"] == 3 and "duality" in manifest["error"]
    assert any(r["passed"] == "false" for r in _rows(tmp_path / "duality.csv"))


def test_martingale_deterministic_and_order_independent(tmp_path):
    spec = dict(experiment="martingale", family={"name": "random_smooth", "params": [0.0, 7, 2]},
                eps_grid=[0.3, 0.1, 0.2, 0.05], depth=2)
    outs = []
    for i, workers in enumerate((1, 1, 3)):
        out = tmp_path / str(i)
        assert harness.run(_cfg(workers=workers, **spec), out) == 0
        outs.append((out / "martingale.csv").read_bytes())
    assert outs[0] == outs[1] == outs[2]
    eps = [float(r["eps"]) for r in _rows(tmp_path / "0" / "martingale.csv")]
    assert eps == sorted(eps)
    fit = json.loads((tmp_path / "0" / "fit_martingale.json").read_text())
    assert fit["fitted_c"] >= 0 and "residual" in fit


def test_full_sweep_emits_fits(tmp_path):
    cfg = _cfg(experiment="full_sweep", grid={"m": 2, "n": 16}, family={"name": "random_smooth", "params": [0, 3, 2]},
               eps_grid=[0.05, 0.1, 0.2, 0.4], depth=2)
    assert harness.run(cfg, tmp_path) == 0
    for name in ("fit_riesz", "fit_martingale"):
        fit = json.loads((tmp_path / f"{name}.json").read_text())
        assert np.isfinite(fit["fitted_c"]) and np.isfinite(fit["residual"])
    assert len(_rows(tmp_path / "riesz_norm.csv")) == 4 * 8


def test_bellman_sweep_run(tmp_path):
    cfg = _cfg(experiment="bellman_sweep", delta_grid=[0.04, 0.16], samples=4, depth=2)
    assert harness.run(cfg, tmp_path) == 0
    rows = _rows(tmp_path / "bellman_sweep.csv")
    assert [float(r["delta"]) for r in rows] == [0.04, 0.16]


# stability ------------------------------------------------------------------

def test_stability_identity_zero_drift():
    rep = stability_check(_cfg(experiment="a2h", grid={"n": 32}))
    assert rep.passed and rep.max_drift == pytest.approx(0.0, abs=1e-12)


def test_stability_scalar_oscillation():
    rep = stability_check(_cfg(experiment="a2h", grid={"n": 64}, d=1,
                               family={"name": "scalar_oscillation", "params": [0.1]}))
    assert rep.passed and rep.max_drift < 0.01


def test_stability_duality_unsupported():
    rep = stability_check(_cfg(experiment="duality", grid={"n": 32}))
    assert not rep.supported and rep.passed


# cli ------------------------------------------------------------------------

def _write(tmp_path, data, name="cfg.json"):
    p = tmp_path / name
    p.write_text(json.dumps(data))
    return str(p)


def test_cli_success(tmp_path, capsys):
    path = _write(tmp_path, {"experiment": "a2h", "grid": {"n": 32}})
    out = tmp_path / "out"
    assert cli.main(["a2h", "--config", path, "--out", str(out), "--refine", "--seed", "5"]) == 0
    assert json.loads((out / "manifest.json").read_text())["seed"] == 5
    assert json.loads((out / "stability.json").read_text())["passed"]
    assert "status 0" in capsys.readouterr().out


@pytest.mark.parametrize("argv, data", [
    (["a2h"], {"experiment": "a2h", "bogus": 1}),
    (["lp"], {"experiment": "a2h"}),
    (["a2h", "--seed", "-1"], {"experiment": "a2h"}),
])
def test_cli_config_errors(tmp_path, argv, data, capsys):
    path = _write(tmp_path, data)
    assert cli.main([argv[0], "--config", path, "--out", str(tmp_path / "o")] + argv[1:]) == 2
    assert "mwlab:" in capsys.readouterr().err


def test_cli_missing_config(tmp_path):
    assert cli.main(["a2h", "--config", str(tmp_path / "x.json")]) == 2


def test_cli_numeric_failure(tmp_path):
    path = _write(tmp_path, {"experiment": "duality", "grid": {"n": 64}, "tolerances": {"duality": 1e-16}})
    assert cli.main(["duality", "--config", path, "--out", str(tmp_path / "o")]) == 3


def test_console_entry_point(tmp_path):
    exe = shutil.which("mwlab")
    cmd = [exe] if exe else [sys.executable, "-m", "mwlab.cli"]
    path = _write(tmp_path, {"experiment": "a2h", "grid": {"n": 16}})
    proc = subprocess.run(cmd + ["a2h", "--config", path, "--out", str(tmp_path / "o")], capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
    bad = subprocess.run(cmd + ["a2h", "--config", str(tmp_path / "none.json")], capture_output=True, text=True)
    assert bad.returncode == 2
