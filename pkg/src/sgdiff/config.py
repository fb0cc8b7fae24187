"""Experiment configuration: YAML (or JSON) document -> validated :class:`ExperimentConfig`.

Every key has a type and a default; unknown keys are rejected, and every
default is materialised so the echoed config reproduces the run exactly.
Environment variables ``SGDIFF_CFG__<BLOCK>__<KEY>=value`` override file
values (``value`` is parsed as a YAML scalar).
"""
from __future__ import annotations

import copy
import math
import os
from dataclasses import dataclass
from typing import Any

import yaml

from . import problems
from .cutoff import CutoffSpec
from .errors import ConfigurationError
from .observables import ObservableSpec, parse_observable
from .problems import ProblemSpec

EXPERIMENTS = (
    "weak-error", "order-fit", "trap-check", "truncation", "uniformity", "derivative-decay", "moments",
    "horizon", "simulate-sgd", "simulate-sde", "solve-pde",
)
ENV_PREFIX = "SGDIFF_CFG__"

_num = (int, float)

# block -> key -> (accepted types, default); None default means "derived later"
SCHEMA: dict[str, dict[str, tuple[tuple, Any]]] = {
    "problem": {
        "family": ((str,), "quadratic"),
        "mu": (_num, 1.0),
        "s": (_num, 0.5),
        "d": ((int,), 1),
    },
    "cutoff": {
        "R": (_num, 2.0),
        "R2": (_num + (type(None),), None),
    },
    "observable": {
        "kind": ((str,), "coordinate"),
        "index": ((int,), 0),
        "coefficients": ((list,), []),
    },
    "numerics": {
        "eta_list": ((list,), [0.2, 0.1, 0.05, 0.025]),
        "eta": (_num, 0.1),
        "T": (_num, 50.0),
        "T_list": ((list,), [5.0, 20.0, 50.0]),
        "M": ((int,), 10_000),
        "h": (_num + (type(None),), None),
        "n_steps": ((int,), 100),
        "x0": (_num + (list,), 1.0),
        "init_radius": (_num, 0.0),
        "grid_points": ((int,), 4097),
        "pde_n_x": ((int,), 4097),
        "pde_dt": (_num, 1e-3),
        "pde_B": (_num + (type(None),), None),
        "pde_scheme": ((str,), "crank_nicolson"),
        "pde_positivity": ((bool,), True),
        "probes": ((list,), [-1.0, -0.5, 0.0, 0.5, 1.0]),
        "u_source": ((str,), "ou_exact"),
        "U_source": ((str,), "closed_form"),
        "corrected": ((bool,), True),
        "beta": (_num, 0.5),
        "n_probe": ((int,), 1),
        "moment_order": ((int,), 2),
        "derivative_order": ((int,), 1),
        "decay_t_min": (_num, 1.0),
        "force": ((bool,), False),
        "path_index": ((int,), 0),
        "save_dt": (_num, 0.05),
        "seed": ((int,), 0),
        "threads": ((int, type(None)), None),
    },
    "checks": {
        "slope_min": (_num + (type(None),), None),
        "slope_max": (_num + (type(None),), None),
        "r_squared_min": (_num + (type(None),), None),
        "ratio_max": (_num + (type(None),), None),
        "gamma_min": (_num + (type(None),), None),
        "gamma_target": (_num + (type(None),), None),
        "gamma_rtol": (_num + (type(None),), None),
        "max_excess": (_num + (type(None),), None),
        "max_escapes": ((int, type(None)), 0),
    },
    "output": {
        "directory": ((str,), "out"),
        "formats": ((list,), ["csv", "json"]),
    },
}


@dataclass
class ExperimentConfig:
    experiment: str
    problem: dict
    cutoff: dict
    observable: dict
    numerics: dict
    checks: dict
    output: dict

    def as_dict(self) -> dict:
        return {
            "experiment": self.experiment,
            **{b: copy.deepcopy(getattr(self, b)) for b in SCHEMA},
        }

    def problem_spec(self) -> ProblemSpec:
        p = self.problem
        return ProblemSpec(p["family"], int(p["d"]), float(p["mu"]), float(p["s"]))

    def cutoff_spec(self) -> CutoffSpec:
        return CutoffSpec(float(self.cutoff["R"]), float(self.cutoff["R2"]))

    def observable_spec(self) -> ObservableSpec:
        o = self.observable
        return ObservableSpec(o["kind"], int(o["index"]), tuple(o["coefficients"]))


def _fail(key: str, msg: str):
    raise ConfigurationError(f"{key}: {msg}")


def _typed(key: str, value, types: tuple):
    if isinstance(value, bool) and bool not in types:
        _fail(key, f"expected {'/'.join(t.__name__ for t in types)}, got bool")
    if not isinstance(value, types):
        _fail(key, f"expected {'/'.join(t.__name__ for t in types)}, got {type(value).__name__} ({value!r})")
    if isinstance(value, float) and not math.isfinite(value):
        _fail(key, "must be finite")
    return float(value) if isinstance(value, int) and float in types and int not in types else value


def _env_key(block: str, key: str, var: str) -> str:
    fields = SCHEMA.get(block, {})
    if key in fields:
        return key
    hits = [k for k in fields if k.lower() == key.lower()]
    if len(hits) > 1:
        # u_source and U_source differ only by case
        _fail(var, f"ambiguous key; spell it exactly as one of {hits}")
    return hits[0] if hits else key


def _apply_env(doc: dict, environ) -> dict:
    for var, raw in sorted(environ.items()):
        if not var.startswith(ENV_PREFIX):
            continue
        parts = var[len(ENV_PREFIX):].split("__")
        value = yaml.safe_load(raw)
        if len(parts) == 1:
            doc[parts[0].lower()] = value
        elif len(parts) == 2:
            block = parts[0].lower()
            key = _env_key(block, parts[1], var)
            sub = doc.setdefault(block, {})
            if not isinstance(sub, dict):
                _fail(block, "must be a mapping")
            sub[key] = value
        else:
            _fail(var, "environment override must name <BLOCK>__<KEY>")
    return doc


def parse_config(text: str | dict | None, environ=None, experiment: str | None = None) -> ExperimentConfig:
    """Parse, override from the environment, fill defaults and validate."""
    if text is None or text == "":
        doc: dict = {}
    elif isinstance(text, dict):
        doc = copy.deepcopy(text)
    else:
        try:
            doc = yaml.safe_load(text) or {}
        except yaml.YAMLError as exc:
            raise ConfigurationError(f"malformed config document: {exc}") from None
    if not isinstance(doc, dict):
        raise ConfigurationError("config document must be a mapping")
    doc = _apply_env(doc, os.environ if environ is None else environ)

    exp = doc.pop("experiment", None)
    if experiment is not None:
        if exp is not None and exp != experiment:
            _fail("experiment", f"config says {exp!r} but {experiment!r} was requested")
        exp = experiment
    if exp is None:
        _fail("experiment", "missing")
    if exp not in EXPERIMENTS:
        _fail("experiment", f"unknown experiment {exp!r}; expected one of {EXPERIMENTS}")

    if isinstance(doc.get("observable"), str):
        o = parse_observable(doc["observable"])
        doc["observable"] = {"kind": o.kind, "index": o.index, "coefficients": list(o.coefficients)}

    unknown = set(doc) - set(SCHEMA)
    if unknown:
        _fail(sorted(unknown)[0], "unknown key")
    blocks = {}
    for block, fields in SCHEMA.items():
        given = doc.get(block, {}) or {}
        if not isinstance(given, dict):
            _fail(block, "must be a mapping")
        bad = set(given) - set(fields)
        if bad:
            _fail(f"{block}.{sorted(bad)[0]}", "unknown key")
        out = {}
        for key, (types, default) in fields.items():
            if key in given:
                out[key] = _typed(f"{block}.{key}", given[key], types)
            else:
                out[key] = copy.deepcopy(default)
        blocks[block] = out
    cfg = ExperimentConfig(exp, **blocks)
    _validate(cfg)
    return cfg


def _validate(cfg: ExperimentConfig) -> None:
    p, c, n = cfg.problem, cfg.cutoff, cfg.numerics
    if p["family"] not in problems.FAMILIES:
        _fail("problem.family", f"unknown family {p['family']!r}; expected one of {problems.FAMILIES}")
    if p["d"] < 1:
        _fail("problem.d", "must be a positive integer")
    if p["family"] != "quadratic" and p["d"] != 1:
        _fail("problem.d", f"family {p['family']} is one-dimensional")
    if p["family"] != "double_well" and not p["mu"] > 0:
        _fail("problem.mu", "must be positive")
    if not p["s"] >= 0:
        _fail("problem.s", "must be nonnegative")
    if not c["R"] > 0:
        _fail("cutoff.R", "must be positive")
    if c["R2"] is None:
        c["R2"] = 2.0 * c["R"]
    if not c["R2"] > c["R"]:
        _fail("cutoff.R2", f"must exceed cutoff.R ({c['R2']} <= {c['R']})")
    try:
        cfg.observable_spec()
    except ConfigurationError as exc:
        _fail("observable.kind", str(exc))

    for key in ("eta_list", "T_list", "probes"):
        for v in n[key]:
            if isinstance(v, bool) or not isinstance(v, _num):
                _fail(f"numerics.{key}", f"entries must be numbers, got {v!r}")
    n["eta_list"] = [float(v) for v in n["eta_list"]]
    n["T_list"] = [float(v) for v in n["T_list"]]
    n["probes"] = [float(v) for v in n["probes"]]
    if any(not v > 0 for v in n["eta_list"]):
        _fail("numerics.eta_list", "step sizes must be positive")
    if not n["eta"] > 0:
        _fail("numerics.eta", "must be positive")
    if not n["T"] >= 0:
        _fail("numerics.T", "must be nonnegative")
    if any(b < a for a, b in zip(n["T_list"], n["T_list"][1:])) or any(v < 0 for v in n["T_list"]):
        _fail("numerics.T_list", "must be nonnegative and nondecreasing")
    if n["M"] < 2:
        _fail("numerics.M", "need at least 2 samples")
    if n["h"] is not None and not 0 < n["h"] <= n["eta"]:
        _fail("numerics.h", "must lie in (0, eta]")
    if n["n_steps"] < 0:
        _fail("numerics.n_steps", "must be nonnegative")
    if n["grid_points"] < 16:
        _fail("numerics.grid_points", "must be at least 16")
    if n["pde_n_x"] < 5:
        _fail("numerics.pde_n_x", "must be at least 5")
    if not n["pde_dt"] > 0:
        _fail("numerics.pde_dt", "must be positive")
    if n["pde_B"] is not None and not n["pde_B"] > c["R2"]:
        _fail("numerics.pde_B", f"must exceed cutoff.R2={c['R2']}")
    if n["pde_scheme"] not in ("crank_nicolson", "explicit"):
        _fail("numerics.pde_scheme", "must be crank_nicolson or explicit")
    if n["u_source"] not in ("ou_exact", "pde", "mc"):
        _fail("numerics.u_source", "must be ou_exact, pde or mc")
    if n["U_source"] not in ("closed_form", "semigroup_grid", "mc"):
        _fail("numerics.U_source", "must be closed_form, semigroup_grid or mc")
    if not n["init_radius"] >= 0:
        _fail("numerics.init_radius", "must be nonnegative")
    if any(abs(v) > c["R"] for v in n["probes"]):
        _fail("numerics.probes", f"probes must lie in B(0, cutoff.R={c['R']})")
    if n["moment_order"] < 0 or n["moment_order"] % 2:
        _fail("numerics.moment_order", "must be a nonnegative even integer")
    if n["derivative_order"] not in (1, 2):
        _fail("numerics.derivative_order", "must be 1 or 2")
    if n["beta"] < 0:
        _fail("numerics.beta", "must be nonnegative")
    if n["threads"] is not None and n["threads"] < 1:
        _fail("numerics.threads", "must be positive")
    x0 = n["x0"]
    if isinstance(x0, list):
        if len(x0) != p["d"] or any(isinstance(v, bool) or not isinstance(v, _num) for v in x0):
            _fail("numerics.x0", f"must be a number or a list of {p['d']} numbers")
        n["x0"] = [float(v) for v in x0]
    else:
        n["x0"] = float(x0)
    for fmt in cfg.output["formats"]:
        if fmt not in ("csv", "json"):
            _fail("output.formats", f"unknown format {fmt!r}")

    try:
        spec = cfg.problem_spec()
    except ConfigurationError as exc:
        _fail("problem", str(exc))

    if cfg.experiment == "trap-check" and not n["force"]:
        try:
            k = problems.constants(spec, c["R"])
        except Exception as exc:
            _fail("cutoff.R", str(exc))
        if n["eta"] > k.eta0:
            _fail("numerics.eta",
                  f"eta={n['eta']} exceeds the trapping bound eta0 = min((R-L)/M1, 2 nu L^2/M2^2) = "
                  f"min({(c['R'] - k.L) / k.M1:.6g}, {2 * k.nu * k.L**2 / k.M2**2:.6g}) = {k.eta0:.6g} "
                  f"(nu={k.nu:.6g}, L={k.L:.6g}, M1={k.M1:.6g}, M2={k.M2:.6g}, R={c['R']})")
    if cfg.experiment in ("weak-error", "order-fit") and len(n["eta_list"]) < 3:
        _fail("numerics.eta_list", "order fits need at least 3 step sizes")
