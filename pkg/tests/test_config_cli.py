import json
import subprocess
import sys

import pytest
import yaml

from sgdiff import cli
from sgdiff.config import SCHEMA, parse_config
from sgdiff.errors import ConfigurationError

QUICK = {"experiment": "weak-error", "problem": {"family": "quadratic", "mu": 1.0, "s": 0.5},
         "cutoff": {"R": 2.0}, "observable": "coordinate", "numerics": {"T": 10}}


def _write(tmp_path, doc, name="c.yaml"):
    p = tmp_path / name
    p.write_text(yaml.safe_dump(doc))
    return str(p)


def test_defaults_materialised():
    cfg = parse_config("experiment: weak-error\n", environ={})
    assert cfg.cutoff["R2"] == 2 * cfg.cutoff["R"]
    assert cfg.numerics["seed"] == 0
    assert cfg.numerics["probes"] == [-1.0, -0.5, 0.0, 0.5, 1.0]
    d = cfg.as_dict()
    for block, fields in SCHEMA.items():
        assert set(d[block]) == set(fields)
    # the echo parses back to the same config
    assert parse_config(d, environ={}).as_dict() == d


@pytest.mark.parametrize("doc, key", [
    ({"cutoff": {"R": 2.0, "R2": 2.0}}, "cutoff.R2"),
    ({"cutoff": {"R": 2.0, "R2": 1.0}}, "cutoff.R2"),
    ({"numerics": {"bogus": 1}}, "numerics.bogus"),
    ({"nonsense": {}}, "nonsense"),
    ({"numerics": {"M": "many"}}, "numerics.M"),
    ({"numerics": {"M": 1}}, "numerics.M"),
    ({"numerics": {"eta_list": [0.1, -0.1, 0.05]}}, "numerics.eta_list"),
    ({"numerics": {"eta_list": [0.1, 0.05]}}, "numerics.eta_list"),
    ({"numerics": {"T_list": [5, 1]}}, "numerics.T_list"),
    ({"numerics": {"probes": [0.0, 3.0]}}, "numerics.probes"),
    ({"numerics": {"h": 0.5}}, "numerics.h"),
    ({"numerics": {"pde_B": 3.0}}, "numerics.pde_B"),
    ({"numerics": {"u_source": "oracle"}}, "numerics.u_source"),
    ({"numerics": {"corrected": "yes"}}, "numerics.corrected"),
    ({"problem": {"family": "rosenbrock"}}, "problem.family"),
    ({"problem": {"family": "trig", "d": 2}}, "problem.d"),
    ({"problem": {"mu": -1.0}}, "problem.mu"),
    ({"observable": {"kind": "cubic"}}, "observable.kind"),
    ({"output": {"formats": ["xlsx"]}}, "output.formats"),
])
def test_diagnostics_name_the_key(doc, key):
    with pytest.raises(ConfigurationError, match=key.replace(".", r"\.")):
        parse_config({"experiment": "weak-error", **doc}, environ={})


def test_trap_check_eta_above_bound_quotes_it():
    doc = {"experiment": "trap-check", "numerics": {"eta": 0.2}}
    with pytest.raises(ConfigurationError, match=r"numerics\.eta.*eta0 = min\(\(R-L\)/M1, 2 nu L\^2/M2\^2\).*0\.16"):
        parse_config(doc, environ={})
    doc["numerics"]["force"] = True
    assert parse_config(doc, environ={}).numerics["force"]


def test_experiment_mismatch_and_unknown():
    with pytest.raises(ConfigurationError, match="experiment"):
        parse_config({"experiment": "moments"}, environ={}, experiment="horizon")
    with pytest.raises(ConfigurationError, match="experiment"):
        parse_config({"experiment": "dance"}, environ={})
    with pytest.raises(ConfigurationError, match="experiment"):
        parse_config({}, environ={})
    with pytest.raises(ConfigurationError, match="malformed"):
        parse_config("a: [1,", environ={})


def test_env_overrides():
    env = {"SGDIFF_CFG__NUMERICS__SEED": "7", "SGDIFF_CFG__CUTOFF__R": "3.5",
           "SGDIFF_CFG__NUMERICS__ETA_LIST": "[0.1, 0.05, 0.02]", "SGDIFF_CFG__NUMERICS__U_source": "mc",
           "OTHER": "x"}
    cfg = parse_config({"experiment": "weak-error", "cutoff": {"R": 2.0}}, environ=env)
    assert cfg.numerics["seed"] == 7
    assert cfg.cutoff["R"] == 3.5 and cfg.cutoff["R2"] == 7.0
    assert cfg.numerics["eta_list"] == [0.1, 0.05, 0.02]
    assert cfg.numerics["U_source"] == "mc" and cfg.numerics["u_source"] == "ou_exact"
    with pytest.raises(ConfigurationError, match="ambiguous"):
        parse_config({"experiment": "weak-error"}, environ={"SGDIFF_CFG__NUMERICS__U_SOURCE": "mc"})
    with pytest.raises(ConfigurationError, match="unknown key"):
        parse_config({"experiment": "weak-error"}, environ={"SGDIFF_CFG__NUMERICS__NOPE": "1"})


def test_observable_forms():
    assert parse_config({"experiment": "weak-error", "observable": "squared_norm"}, environ={}).observable["kind"] \
        == "squared_norm"
    cfg = parse_config({"experiment": "weak-error", "problem": {"d": 3},
                        "observable": "coordinate(2)", "numerics": {"probes": []}}, environ={})
    assert cfg.observable_spec().index == 2


def test_run_weak_error_exit0_fast(tmp_path):
    import time
    cfg = parse_config(dict(QUICK, numerics={"T": 50}), environ={})
    t0 = time.perf_counter()
    assert cli.run(cfg, tmp_path) == cli.EXIT_OK
    assert time.perf_counter() - t0 < 5.0
    summary = json.loads((tmp_path / "summary.json").read_text())
    assert summary["passed"] and 1.9 <= summary["result"]["fit"]["slope"] <= 2.1
    manifest = json.loads((tmp_path / "manifest.json").read_text())
    assert manifest["config"] == cfg.as_dict()
    assert manifest["seed"] == 0 and manifest["wall_time_s"] >= 0 and manifest["version"]
    assert (tmp_path / "weak_error.csv").read_text().startswith("eta,T,error,u_source,U_source,noise_budget,flags\n")


def test_manifest_reruns_byte_identically(tmp_path):
    cfg = parse_config(QUICK, environ={})
    assert cli.run(cfg, tmp_path / "a") == 0
    manifest = json.loads((tmp_path / "a" / "manifest.json").read_text())
    again = parse_config(manifest["config"], environ={})
    assert cli.run(again, tmp_path / "b") == 0
    for name in ("summary.json", "weak_error.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_monte_carlo_artifacts_byte_identical(tmp_path):
    doc = {"experiment": "simulate-sde", "problem": {"family": "trig", "s": 2.0}, "cutoff": {"R": 6.0},
           "numerics": {"eta": 0.1, "h": 0.01, "T": 2.0, "M": 500, "x0": 0.5}}
    for d in ("a", "b"):
        assert cli.run(parse_config(doc, environ={}), tmp_path / d) == 0
    for name in ("summary.json", "sde_path.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_trap_check_writes_escapes(tmp_path):
    doc = {"experiment": "trap-check", "numerics": {"eta": 0.1, "n_steps": 500, "M": 1000}}
    assert cli.run(parse_config(doc, environ={}), tmp_path) == 0
    s = json.loads((tmp_path / "summary.json").read_text())
    assert s["result"]["escapes"] == 0 and s["checks"]["escapes"]["pass"]


def test_broken_tolerance_exits_1(tmp_path):
    doc = dict(QUICK, checks={"slope_min": 2.5, "slope_max": 3.0})
    assert cli.run(parse_config(doc, environ={}), tmp_path) == cli.EXIT_FAIL
    s = json.loads((tmp_path / "summary.json").read_text())
    assert not s["passed"] and not s["checks"]["slope"]["pass"]


def test_main_exit_codes(tmp_path, capsys):
    good = _write(tmp_path, QUICK)
    assert cli.main(["weak-error", "--config", good, "--out", str(tmp_path / "o"), "--seed", "3",
                     "--threads", "1"]) == 0
    m = json.loads((tmp_path / "o" / "manifest.json").read_text())
    assert m["seed"] == 3 and m["config"]["numerics"]["threads"] == 1
    bad = _write(tmp_path, {"experiment": "weak-error", "cutoff": {"R": 2.0, "R2": 1.0}}, "bad.yaml")
    assert cli.main(["weak-error", "--config", bad, "--out", str(tmp_path / "x")]) == 2
    assert "cutoff.R2" in capsys.readouterr().err
    assert cli.main(["weak-error", "--config", str(tmp_path / "missing.yaml")]) == 2
    assert cli.main(["horizon", "--config", good]) == 2


def test_runtime_domain_error_is_configuration(tmp_path):
    # grid half-width too small for eta: the transfer operator refuses
    doc = {"experiment": "weak-error", "cutoff": {"R": 1.5},
           "numerics": {"eta_list": [0.3, 0.2, 0.1], "T": 1, "U_source": "semigroup_grid"}}
    assert cli.run(parse_config(doc, environ={}), tmp_path) == cli.EXIT_CONFIG


@pytest.mark.parametrize("doc, artifact", [
    ({"experiment": "simulate-sgd", "numerics": {"n_steps": 20}}, "sgd_path.csv"),
    ({"experiment": "solve-pde", "numerics": {"T": 0.2, "save_dt": 0.1, "pde_n_x": 257}}, "field.csv"),
    ({"experiment": "uniformity"}, "uniformity.csv"),
    ({"experiment": "truncation", "cutoff": {"R": 1.5}, "numerics": {"eta_list": [0.2, 0.1, 0.05]}},
     "truncation.csv"),
    ({"experiment": "derivative-decay", "numerics": {"T": 2.0, "pde_n_x": 1025}}, "derivative_sup.csv"),
    ({"experiment": "moments", "numerics": {"T": 2.0, "M": 200, "h": 0.01}}, "moments.csv"),
    ({"experiment": "order-fit"}, "weak_error.csv"),
])
def test_every_subcommand_runs(tmp_path, doc, artifact):
    assert cli.run(parse_config(doc, environ={}), tmp_path) == 0
    assert (tmp_path / artifact).exists() and (tmp_path / "summary.json").exists()


def test_console_script(tmp_path):
    out = subprocess.run([sys.executable, "-m", "sgdiff.cli", "weak-error", "--out", str(tmp_path)],
                         capture_output=True, text=True)
    assert out.returncode == 0 and "ok" in out.stdout
