"""Command line entry point: one experiment per invocation.

    sgdiff <experiment> [--config FILE] [--out DIR] [--seed N] [--threads N]

Exit status: 0 success, 1 a check or invariant failed, 2 bad configuration.
Every run writes ``summary.json`` (and CSV tables) plus ``manifest.json``
into the output directory.  Summary and CSV files are byte-identical across
reruns with the same config; the manifest also records the wall time.
"""
from __future__ import annotations

import argparse
import math
import platform
import sys
import time
from importlib import metadata
from pathlib import Path

import numpy as np

from . import _accel, harness, kolmogorov, sde_engine, sgd_engine
from .config import EXPERIMENTS, ExperimentConfig, parse_config
from .errors import ConfigurationError, DomainError
from .harness import Numerics, write_json

EXIT_OK, EXIT_FAIL, EXIT_CONFIG = 0, 1, 2


def version() -> str:
    try:
        return metadata.version("sgdiff")
    except metadata.PackageNotFoundError:  # pragma: no cover - source checkout
        return "0+unknown"


def _numerics(cfg: ExperimentConfig) -> Numerics:
    n = cfg.numerics
    return Numerics(grid_points=n["grid_points"], pde_n_x=n["pde_n_x"], pde_dt=n["pde_dt"], pde_B=n["pde_B"],
                    pde_scheme=n["pde_scheme"], pde_positivity=n["pde_positivity"], M=n["M"], sde_h=n["h"],
                    seed=n["seed"])


def _sde_h(cfg: ExperimentConfig) -> float:
    eta = cfg.numerics["eta"]
    h = cfg.numerics["h"]
    return sde_engine.default_substep(eta) if h is None else eta / math.ceil(eta / h - 1e-9)


class _Checks:
    """Collects named pass/fail outcomes against the ``checks`` block."""

    def __init__(self, spec: dict):
        self.spec = spec
        self.results: dict[str, dict] = {}

    def record(self, name: str, ok: bool, value, bound) -> None:
        self.results[name] = {"pass": bool(ok), "value": value, "bound": bound}

    def slope(self, fit) -> None:
        c = self.spec
        if fit is None:
            if c["slope_min"] is not None or c["slope_max"] is not None:
                self.record("slope", False, None, [c["slope_min"], c["slope_max"]])
            return
        if c["slope_min"] is not None or c["slope_max"] is not None:
            lo = -math.inf if c["slope_min"] is None else c["slope_min"]
            hi = math.inf if c["slope_max"] is None else c["slope_max"]
            self.record("slope", lo <= fit.slope <= hi, fit.slope, [c["slope_min"], c["slope_max"]])
        if c["r_squared_min"] is not None:
            self.record("r_squared", fit.r_squared >= c["r_squared_min"], fit.r_squared, c["r_squared_min"])

    @property
    def ok(self) -> bool:
        return all(r["pass"] for r in self.results.values())


def _fit_dict(fit) -> dict | None:
    if fit is None:
        return None
    return {"slope": fit.slope, "intercept": fit.intercept, "r_squared": fit.r_squared, "n_points": fit.n_points}


def _write_rows(dest: Path, header, rows) -> None:
    with open(dest, "w", newline="") as fh:
        fh.write(",".join(header) + "\n")
        for r in rows:
            fh.write(",".join(harness._fmt(v) for v in r) + "\n")


# ---------------------------------------------------------------------------
# experiments: each returns the summary dict and writes its tables

def _weak_error(cfg, out, checks, csv_on):
    n = cfg.numerics
    pts = harness.weak_error_curve(cfg.problem_spec(), cfg.observable_spec(), n["eta_list"], n["T"], n["probes"],
                                   n["u_source"], n["U_source"], cfg.cutoff_spec(), _numerics(cfg), n["corrected"])
    fit = harness.order_fit(pts) if sum(p.usable for p in pts) >= 3 else None
    checks.slope(fit)
    if csv_on:
        harness.write_report_csv(pts, out / "weak_error.csv")
    return {"points": [p.row() for p in pts], "fit": _fit_dict(fit)}


def _uniformity(cfg, out, checks, csv_on):
    n = cfg.numerics
    ratios = harness.uniformity_check(cfg.problem_spec(), cfg.observable_spec(), n["eta"], n["T_list"],
                                      probes=n["probes"], u_source=n["u_source"], U_source=n["U_source"],
                                      cut=cfg.cutoff_spec(), num=_numerics(cfg), corrected=n["corrected"])
    if cfg.checks["ratio_max"] is not None:
        checks.record("ratio_max", max(ratios) <= cfg.checks["ratio_max"], max(ratios), cfg.checks["ratio_max"])
    if csv_on:
        _write_rows(out / "uniformity.csv", ["T", "ratio"], zip(n["T_list"], ratios))
    return {"eta": n["eta"], "T_list": n["T_list"], "ratios": ratios}


def _truncation(cfg, out, checks, csv_on):
    n = cfg.numerics
    if n["u_source"] == "mc":
        raise ConfigurationError("numerics.u_source: truncation needs ou_exact or pde")
    pts, fit = harness.truncation_check(cfg.problem_spec(), cfg.observable_spec(), n["eta_list"], n["n_probe"],
                                        n["probes"], cfg.cutoff_spec(), n["u_source"], _numerics(cfg),
                                        n["corrected"])
    checks.slope(fit)
    if csv_on:
        _write_rows(out / "truncation.csv", ["eta", "residual"], [(p.eta, p.residual) for p in pts])
    return {"points": [{"eta": p.eta, "residual": p.residual} for p in pts], "fit": _fit_dict(fit)}


def _trap(cfg, out, checks, csv_on):
    n = cfg.numerics
    rep = sgd_engine.trap_check(cfg.problem_spec(), cfg.cutoff["R"], n["eta"], n["n_steps"], n["M"], n["seed"],
                                force=n["force"])
    if cfg.checks["max_escapes"] is not None and not n["force"]:
        checks.record("escapes", rep.escapes <= cfg.checks["max_escapes"], rep.escapes, cfg.checks["max_escapes"])
    return {"max_norm_seen": rep.max_norm_seen, "escapes": rep.escapes, "R": rep.R, "eta": rep.eta,
            "eta0": rep.eta0, "n_paths": rep.n_paths, "n_steps": rep.n_steps, "forced": n["force"]}


def _pde_field(cfg, T):
    n = cfg.numerics
    cut = cfg.cutoff_spec()
    problem = cfg.problem_spec()
    eta = n["eta"]
    B = n["pde_B"] if n["pde_B"] is not None else 1.1 * cut.R2
    base = kolmogorov.PdeConfig(B=B, n_x=n["pde_n_x"], dt=n["pde_dt"], T=T, scheme=n["pde_scheme"])
    dt = base.dt
    if n["pde_positivity"]:
        dt = kolmogorov.positivity_dt(problem, cut, eta, base, n["corrected"], divides=n["save_dt"])
    pc = kolmogorov.PdeConfig(B=B, n_x=n["pde_n_x"], dt=dt, T=T, scheme=n["pde_scheme"], save_dt=n["save_dt"])
    return kolmogorov.solve_kolmogorov(problem, cut, eta, cfg.observable_spec(), pc, corrected=n["corrected"])


def _derivative_decay(cfg, out, checks, csv_on):
    n = cfg.numerics
    fld = _pde_field(cfg, n["T"])
    t, sups = kolmogorov.derivative_sup_series(fld, n["derivative_order"], cfg.cutoff["R"])
    fit = kolmogorov.decay_fit(t, sups, t_min=n["decay_t_min"])
    c = cfg.checks
    if c["gamma_min"] is not None:
        checks.record("gamma_min", fit.gamma > c["gamma_min"], fit.gamma, c["gamma_min"])
    if c["gamma_target"] is not None:
        rtol = 0.05 if c["gamma_rtol"] is None else c["gamma_rtol"]
        rel = abs(fit.gamma - c["gamma_target"]) / abs(c["gamma_target"])
        checks.record("gamma_target", rel <= rtol, fit.gamma, {"target": c["gamma_target"], "rtol": rtol})
    if csv_on:
        sde_engine.write_series_csv(t, sups, out / "derivative_sup.csv")
    return {"order": n["derivative_order"], "C": fit.C, "gamma": fit.gamma, "residual": fit.residual,
            "n_points": fit.n_points, "truncated": fit.truncated, "dt": float(fld.meta["dt"])}


def _sde_cfg(cfg, T=None):
    n = cfg.numerics
    return sde_engine.SdeConfig(eta=n["eta"], h=_sde_h(cfg), T=n["T"] if T is None else T, x0=n["x0"],
                                seed=n["seed"], init_radius=n["init_radius"], corrected=n["corrected"])


def _moments(cfg, out, checks, csv_on):
    n = cfg.numerics
    sc = _sde_cfg(cfg)
    order = n["moment_order"]
    t, mean, se = sde_engine.moment_curve(cfg.problem_spec(), cfg.cutoff_spec(), sc, n["M"], order)
    x_pow = float(np.linalg.norm(sc.x0_array(cfg.problem["d"]))) ** order
    fit = sde_engine.fit_moment_envelope(t, mean, x_pow)
    c = cfg.checks
    if c["gamma_min"] is not None:
        checks.record("gamma_min", fit.gamma > c["gamma_min"], fit.gamma, c["gamma_min"])
    if c["max_excess"] is not None:
        checks.record("max_excess", fit.max_excess <= c["max_excess"], fit.max_excess, c["max_excess"])
    if csv_on:
        sde_engine.write_series_csv(t, mean, out / "moments.csv", se)
    return {"order": order, "h": sc.h, "C": fit.C, "gamma": fit.gamma, "x_power": fit.x_power,
            "max_excess": fit.max_excess}


def _horizon(cfg, out, checks, csv_on):
    n = cfg.numerics
    rows, fit = harness.horizon_experiment(cfg.problem_spec(), cfg.observable_spec(), n["eta_list"], n["beta"],
                                           n["probes"], cfg.cutoff_spec(), _numerics(cfg), escape_paths=n["M"])
    checks.slope(fit)
    checks.record("beyond_ge_within", all(r.error_beyond >= r.error_within for r in rows), None, None)
    table = [(r.eta, r.T, r.error_within, r.error_beyond, r.max_norm, ";".join(r.flags)) for r in rows]
    if csv_on:
        _write_rows(out / "horizon.csv", ["eta", "T", "error_within", "error_beyond", "max_norm", "flags"], table)
    return {"beta": n["beta"], "rows": [dict(zip(["eta", "T", "error_within", "error_beyond", "max_norm", "flags"],
                                                 r)) for r in table], "fit": _fit_dict(fit)}


def _simulate_sgd(cfg, out, checks, csv_on):
    n = cfg.numerics
    cc = sgd_engine.ChainConfig(eta=n["eta"], n_steps=n["n_steps"], x0=n["x0"], seed=n["seed"],
                                init_radius=n["init_radius"])
    path = sgd_engine.sgd_trajectory(cfg.problem_spec(), cc, n["path_index"])
    if csv_on:
        sgd_engine.write_path_csv(path, out / "sgd_path.csv")
    return {"n_steps": n["n_steps"], "final": path[-1].tolist(),
            "max_norm": float(np.max(np.linalg.norm(path, axis=1)))}


def _simulate_sde(cfg, out, checks, csv_on):
    n = cfg.numerics
    sc = _sde_cfg(cfg)
    problem, cut = cfg.problem_spec(), cfg.cutoff_spec()
    path = sde_engine.simulate_sde(problem, cut, sc, n["path_index"])
    rep = sde_engine.confinement_check(problem, cut, sc, n["M"])
    if cfg.checks["max_escapes"] is not None:
        checks.record("confinement", rep.exceed_count <= cfg.checks["max_escapes"], rep.exceed_count,
                      cfg.checks["max_escapes"])
    if csv_on:
        sgd_engine.write_path_csv(path, out / "sde_path.csv", time_step=sc.eta)
    return {"h": sc.h, "final": path[-1].tolist(), "max_norm": rep.max_norm, "exceed_count": rep.exceed_count,
            "bound": rep.bound, "n_paths": rep.n_paths, "n_points": rep.n_points}


def _solve_pde(cfg, out, checks, csv_on):
    n = cfg.numerics
    fld = _pde_field(cfg, n["T"])
    if csv_on:
        fld.to_csv(out / "field.csv")
    final = fld.at(n["probes"], len(fld.t) - 1)
    return {"probes": n["probes"], "u_final": final.tolist(), "T": float(fld.t[-1]),
            "meta": {k: fld.meta[k] for k in sorted(fld.meta)}}


HANDLERS = {
    "weak-error": _weak_error, "order-fit": _weak_error, "uniformity": _uniformity, "truncation": _truncation,
    "trap-check": _trap, "derivative-decay": _derivative_decay, "moments": _moments, "horizon": _horizon,
    "simulate-sgd": _simulate_sgd, "simulate-sde": _simulate_sde, "solve-pde": _solve_pde,
}
assert set(HANDLERS) == set(EXPERIMENTS)


def run(cfg: ExperimentConfig, out: str | Path | None = None) -> int:
    """Execute ``cfg`` and write its artifacts; returns the exit status."""
    out = Path(out if out is not None else cfg.output["directory"])
    out.mkdir(parents=True, exist_ok=True)
    _accel.set_threads(cfg.numerics["threads"])
    fmts = cfg.output["formats"]
    checks = _Checks(cfg.checks)
    t0 = time.perf_counter()
    status, error = EXIT_OK, None
    summary: dict = {}
    try:
        summary = HANDLERS[cfg.experiment](cfg, out, checks, "csv" in fmts)
        if not checks.ok:
            status = EXIT_FAIL
    except (ConfigurationError, DomainError) as exc:
        status, error = EXIT_CONFIG, str(exc)
    except (AssertionError, harness.ExperimentError) as exc:
        status, error = EXIT_FAIL, f"{type(exc).__name__}: {exc}"
    wall = time.perf_counter() - t0
    doc = {"experiment": cfg.experiment, "status": status, "passed": status == EXIT_OK, "error": error,
           "checks": checks.results, "result": summary}
    if "json" in fmts:
        write_json(doc, out / "summary.json")
    write_json({"config": cfg.as_dict(), "version": version(), "seed": cfg.numerics["seed"],
                "wall_time_s": wall, "backend": _accel.backend_name(), "python": platform.python_version(),
                "numpy": np.__version__, "status": status}, out / "manifest.json")
    return status


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="sgdiff", description=__doc__.splitlines()[0])
    p.add_argument("experiment", choices=EXPERIMENTS)
    p.add_argument("--config", help="YAML or JSON config file")
    p.add_argument("--out", help="output directory (overrides output.directory)")
    p.add_argument("--seed", type=int, help="overrides numerics.seed")
    p.add_argument("--threads", type=int, help="caps worker threads (overrides numerics.threads)")
    return p


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    try:
        text = Path(args.config).read_text() if args.config else None
        doc = parse_config(text, experiment=args.experiment).as_dict()
        if args.seed is not None:
            doc["numerics"]["seed"] = args.seed
        if args.threads is not None:
            doc["numerics"]["threads"] = args.threads
        cfg = parse_config(doc, environ={}, experiment=args.experiment)
    except (ConfigurationError, OSError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    status = run(cfg, args.out)
    out = args.out or cfg.output["directory"]
    print(f"{cfg.experiment}: {['ok', 'FAILED', 'configuration error'][status]} ({out})")
    return status


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
