"""Weak-error experiments: curves, order fits, uniformity, local truncation, log horizon.

The chain side ``U^n(x)`` and the diffusion side ``u(x, n eta)`` each come from
an interchangeable source:

==================  =========================================================
``closed_form``     exact moment recursions (quadratic / trig families)
``semigroup_grid``  :func:`sgdiff.semigroup.iterate_S` (1-D)
``mc``              seeded Monte Carlo (SGD chains or Euler-Maruyama paths)
``ou_exact``        Ornstein-Uhlenbeck closed form (linear drift families)
``pde``             :func:`sgdiff.kolmogorov.solve_kolmogorov` (1-D)
==================  =========================================================
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import kolmogorov, problems, semigroup, sgd_engine
from . import sde_engine
from .cutoff import CutoffSpec
from .errors import ConfigurationError
from .observables import ObservableSpec
from .problems import ProblemSpec

U_SOURCES = ("closed_form", "semigroup_grid", "mc")
u_SOURCES = ("ou_exact", "pde", "mc")
DEFAULT_PROBES = (-1.0, -0.5, 0.0, 0.5, 1.0)


class ExperimentError(RuntimeError):
    pass


@dataclass
class Numerics:
    """Resolution knobs shared by the sources."""

    grid_points: int = 4097
    pde_n_x: int = 4097
    pde_dt: float = 1e-3
    pde_B: float | None = None  # default 1.1 * R2
    pde_scheme: str = "crank_nicolson"
    pde_positivity: bool = True  # shrink dt so the scheme is monotone
    M: int = 100_000
    sde_h: float | None = None  # default sde_engine.default_substep(eta)
    seed: int = 0
    grid_sup: bool = True  # add the sup over all grid nodes when both sides are grids
    numba: bool | None = None


@dataclass
class WeakErrorPoint:
    eta: float
    T: float
    error: float
    u_source: str
    U_source: str
    noise_budget: float = 0.0
    flags: list[str] = field(default_factory=list)
    corrected: bool = True
    # per-epoch sup over probes (and grid), used for prefix maxima over shorter horizons
    epoch_errors: np.ndarray | None = field(default=None, repr=False)
    U_probe: np.ndarray | None = field(default=None, repr=False)
    u_probe: np.ndarray | None = field(default=None, repr=False)
    se_probe: np.ndarray | None = field(default=None, repr=False)

    @property
    def usable(self) -> bool:
        return "noise_budget" not in self.flags and "escape" not in self.flags

    def error_up_to(self, T: float) -> float:
        n = int(math.floor(T / self.eta + 1e-9))
        return float(np.max(self.epoch_errors[: n + 1]))

    def row(self) -> dict:
        return {
            "eta": self.eta, "T": self.T, "error": self.error, "u_source": self.u_source,
            "U_source": self.U_source, "noise_budget": self.noise_budget, "flags": ";".join(self.flags),
        }


@dataclass(frozen=True)
class OrderFit:
    slope: float
    intercept: float
    r_squared: float
    n_points: int


# ---------------------------------------------------------------------------
# chain side

def _probe_points(problem: ProblemSpec, probes) -> np.ndarray:
    p = np.asarray(probes, dtype=float)
    if p.ndim == 1:
        p = p[:, None]
    if p.shape[1] != problem.dim:
        raise ConfigurationError(f"probes must have {problem.dim} coordinates")
    return p


def closed_form_U(problem: ProblemSpec, phi: ObservableSpec, eta: float, n_steps: int, probes) -> np.ndarray:
    """Exact ``U^n`` at the probes, shape ``(n_steps + 1, P)``, for linear-gradient families."""
    if problem.family not in ("quadratic", "trig"):
        raise ConfigurationError("closed-form chain moments need the quadratic or trig family")
    P = _probe_points(problem, probes)
    q = 1.0 - eta * problem.mu
    n = np.arange(n_steps + 1)[:, None]
    if phi.kind == "coordinate":
        return q**n * P[None, :, phi.index]
    if phi.kind in ("squared_norm", "expected_loss"):
        noise = eta * eta * float(np.trace(problems.sigma(problem)))
        r2 = np.sum(P * P, axis=1)[None, :]
        q2n = q ** (2 * n)
        geo = n.astype(float) if q * q == 1.0 else (1.0 - q2n) / (1.0 - q * q)
        m = q2n * r2 + noise * geo
        return m if phi.kind == "squared_norm" else 0.5 * problem.mu * m
    raise ConfigurationError(f"no closed form for observable {phi.kind!r}")


def _grid_U(problem, phi, eta, n_steps, probes, cut, num: Numerics):
    grid = semigroup.Grid1D(cut.R, num.grid_points)
    stack = semigroup.iterate_S(problem, phi, grid, eta, n_steps, keep_all=True, numba=num.numba)
    P = _probe_points(problem, probes)[:, 0]
    vals = np.stack([semigroup.GridFunction(grid, row)(P) for row in stack])
    return vals, grid, stack


def _mc_U(problem, phi, eta, n_steps, probes, num: Numerics):
    P = _probe_points(problem, probes)
    means, ses = [], []
    for x in P:
        cfg = sgd_engine.ChainConfig(eta=eta, n_steps=n_steps, x0=tuple(x), seed=num.seed)
        ens = sgd_engine.estimate_U_path(problem, phi, cfg, num.M, numba=num.numba)
        means.append(ens.mean)
        ses.append(ens.std_error)
    return np.array(means).T, np.array(ses).T


# ---------------------------------------------------------------------------
# diffusion side

def ou_u(problem: ProblemSpec, phi: ObservableSpec, eta: float, t, probes, corrected: bool = True) -> np.ndarray:
    """OU closed form at the probes, shape ``(len(t), P)``."""
    if problem.family not in ("quadratic", "trig"):
        raise ConfigurationError("ou_exact needs a family with linear expected gradient")
    P = _probe_points(problem, probes)
    t = np.asarray(t, dtype=float)[:, None]
    s_sq = float(problems.sigma(problem)[0, 0])
    if phi.kind == "coordinate":
        return sde_engine.ou_exact(problem.mu, eta, s_sq, P[None, :, phi.index], t, "coordinate", corrected)
    if phi.kind in ("squared_norm", "expected_loss"):
        m = sum(sde_engine.ou_exact(problem.mu, eta, s_sq, P[None, :, i], t, "squared_norm", corrected)
                for i in range(problem.dim))
        return m if phi.kind == "squared_norm" else 0.5 * problem.mu * m
    if phi.kind == "custom_polynomial" and len(phi.coefficients) <= 3:
        c = list(phi.coefficients) + [0.0] * (3 - len(phi.coefficients))
        x = P[None, :, phi.index]
        m1 = sde_engine.ou_exact(problem.mu, eta, s_sq, x, t, "coordinate", corrected)
        m2 = sde_engine.ou_exact(problem.mu, eta, s_sq, x, t, "squared_norm", corrected)
        return c[0] + c[1] * m1 + c[2] * m2
    raise ConfigurationError(f"ou_exact does not cover observable {phi.kind!r}")


def pde_config(cut: CutoffSpec, eta: float, T: float, num: Numerics) -> kolmogorov.PdeConfig:
    B = num.pde_B if num.pde_B is not None else 1.1 * cut.R2
    return kolmogorov.PdeConfig(B=B, n_x=num.pde_n_x, dt=num.pde_dt, T=T, scheme=num.pde_scheme)


def solve_pde_epochs(problem, cut, eta, phi, T, num: Numerics, corrected=True) -> kolmogorov.ScalarField:
    """PDE solution stored at every epoch ``n eta <= T``."""
    base = pde_config(cut, eta, T, num)
    if num.pde_positivity:
        dt = kolmogorov.positivity_dt(problem, cut, eta, base, corrected, divides=eta)
    else:
        dt = eta / math.ceil(eta / base.dt - 1e-9)
    cfg = kolmogorov.PdeConfig(B=base.B, n_x=base.n_x, dt=dt, T=T, scheme=base.scheme, save_dt=eta)
    return kolmogorov.solve_kolmogorov(problem, cut, eta, phi, cfg, corrected=corrected, numba=num.numba)


def _mc_u(problem, cut, phi, eta, n_steps, probes, num: Numerics, corrected=True):
    P = _probe_points(problem, probes)
    h = num.sde_h if num.sde_h is not None else sde_engine.default_substep(eta)
    h = eta / math.ceil(eta / h - 1e-9)
    means, ses = [], []
    for x in P:
        cfg = sde_engine.SdeConfig(eta=eta, h=h, T=n_steps * eta, x0=tuple(x), seed=num.seed, corrected=corrected)
        ens = sde_engine.estimate_u_mc(problem, cut, phi, cfg, num.M, numba=num.numba)
        means.append(ens.mean)
        ses.append(ens.std_error)
    return np.array(means).T, np.array(ses).T


# ---------------------------------------------------------------------------

def weak_error_point(problem: ProblemSpec, phi: ObservableSpec, eta: float, T: float, probes=DEFAULT_PROBES,
                     u_source: str = "ou_exact", U_source: str = "closed_form", cut: CutoffSpec | None = None,
                     num: Numerics | None = None, corrected: bool = True) -> WeakErrorPoint:
    """``sup_{n <= T/eta} sup_probes |U^n(x) - u(x, n eta)|`` for one step size."""
    if not eta > 0:
        raise ValueError("eta must be positive")
    if U_source not in U_SOURCES:
        raise ConfigurationError(f"unknown U_source {U_source!r}")
    if u_source not in u_SOURCES:
        raise ConfigurationError(f"unknown u_source {u_source!r}")
    num = num or Numerics()
    cut = cut or CutoffSpec(2.0)
    n_steps = int(math.floor(T / eta + 1e-9))
    t = eta * np.arange(n_steps + 1)
    P = _probe_points(problem, probes)
    if np.any(np.linalg.norm(P, axis=1) > cut.R + 1e-12):
        raise ConfigurationError("probes must lie in B(0, R)")

    se_U = se_u = None
    grid = stack = None
    if U_source == "closed_form":
        U = closed_form_U(problem, phi, eta, n_steps, P)
    elif U_source == "semigroup_grid":
        U, grid, stack = _grid_U(problem, phi, eta, n_steps, P, cut, num)
    else:
        U, se_U = _mc_U(problem, phi, eta, n_steps, P, num)

    fld = None
    if u_source == "ou_exact":
        u = ou_u(problem, phi, eta, t, P, corrected)
    elif u_source == "pde":
        fld = solve_pde_epochs(problem, cut, eta, phi, n_steps * eta, num, corrected)
        u = fld.probe_matrix(P[:, 0])
    else:
        u, se_u = _mc_u(problem, cut, phi, eta, n_steps, P, num, corrected)

    diff = np.abs(U - u)
    epoch_err = diff.max(axis=1)
    if num.grid_sup and stack is not None and fld is not None:
        nodes = grid.x
        g_err = np.array([np.max(np.abs(stack[k] - fld.at(nodes, k))) for k in range(n_steps + 1)])
        epoch_err = np.maximum(epoch_err, g_err)

    se = None
    budget = 0.0
    flags: list[str] = []
    if se_U is not None or se_u is not None:
        se = np.sqrt((se_U if se_U is not None else 0.0) ** 2 + (se_u if se_u is not None else 0.0) ** 2)
        budget = 4.0 * float(np.max(se))
    E = float(epoch_err.max())
    if se is not None and not budget < E / 5.0:
        flags.append("noise_budget")
    return WeakErrorPoint(eta=float(eta), T=float(T), error=E, u_source=u_source, U_source=U_source,
                          noise_budget=budget, flags=flags, corrected=corrected, epoch_errors=epoch_err,
                          U_probe=U, u_probe=u, se_probe=se)


def weak_error_curve(problem: ProblemSpec, phi: ObservableSpec, eta_list, T: float, probes=DEFAULT_PROBES,
                     u_source: str = "ou_exact", U_source: str = "closed_form", cut: CutoffSpec | None = None,
                     num: Numerics | None = None, corrected: bool = True) -> list[WeakErrorPoint]:
    pts = [weak_error_point(problem, phi, eta, T, probes, u_source, U_source, cut, num, corrected)
           for eta in eta_list]
    if pts and not any(p.usable for p in pts):
        raise ExperimentError("every point of the weak-error curve violates its noise budget")
    return pts


def order_fit(points) -> OrderFit:
    """Least-squares slope of ``log E`` against ``log eta`` over usable points.

    Accepts :class:`WeakErrorPoint` objects or ``(eta, E)`` pairs.
    """
    pairs = []
    for p in points:
        if isinstance(p, WeakErrorPoint):
            if p.usable:
                pairs.append((p.eta, p.error))
        else:
            pairs.append((float(p[0]), float(p[1])))
    if len(pairs) < 3:
        raise ValueError(f"order_fit needs at least 3 usable points, got {len(pairs)}")
    le = np.log([a for a, _ in pairs])
    lE = np.log([b for _, b in pairs])
    slope, intercept = np.polyfit(le, lE, 1)
    pred = intercept + slope * le
    ss_res = float(np.sum((lE - pred) ** 2))
    ss_tot = float(np.sum((lE - lE.mean()) ** 2))
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0
    return OrderFit(float(slope), float(intercept), r2, len(pairs))


def uniformity_check(problem: ProblemSpec, phi: ObservableSpec, eta: float, T_list, **kwargs) -> list[float]:
    """Ratios ``E(eta, T_k) / E(eta, T_1)``; the sup over a longer horizon can only grow."""
    T_list = [float(T) for T in T_list]
    if any(b < a for a, b in zip(T_list, T_list[1:])):
        raise ValueError("T_list must be nondecreasing")
    pt = weak_error_point(problem, phi, eta, max(T_list), **kwargs)
    errs = [pt.error_up_to(T) for T in T_list]
    for a, b in zip(errs, errs[1:]):
        assert b >= a, "sup over a superset of epochs decreased"
    return [e / errs[0] for e in errs]


@dataclass(frozen=True)
class TruncationPoint:
    eta: float
    residual: float


def truncation_check(problem: ProblemSpec, phi: ObservableSpec, eta_list, n_probe: int = 1,
                     probes=DEFAULT_PROBES, cut: CutoffSpec | None = None, u_source: str = "ou_exact",
                     num: Numerics | None = None, corrected: bool = True):
    """One-step defect ``sup_probes |S u^n - u^{n+1}|`` with ``u^n = u(., n_probe eta)``.

    ``S`` acts on the snapshot through the grid transfer operator.  Returns the
    per-eta residuals and the fitted order (3 for the modified SDE).
    """
    num = num or Numerics()
    cut = cut or CutoffSpec(2.0)
    grid = semigroup.Grid1D(cut.R, num.grid_points)
    P = _probe_points(problem, probes)[:, 0]
    out = []
    for eta in eta_list:
        t_n, t_n1 = n_probe * eta, (n_probe + 1) * eta
        if u_source == "ou_exact":
            un = ou_u(problem, phi, eta, [t_n], grid.x, corrected)[0]
            un1 = ou_u(problem, phi, eta, [t_n1], P, corrected)[0]
        elif u_source == "pde":
            fld = solve_pde_epochs(problem, cut, eta, phi, t_n1, num, corrected)
            un = fld.at(grid.x, n_probe)
            un1 = fld.at(P, n_probe + 1)
        else:
            raise ConfigurationError(f"truncation_check supports ou_exact or pde, not {u_source!r}")
        Su = semigroup.apply_S(problem, semigroup.GridFunction(grid, un), eta, numba=num.numba)
        out.append(TruncationPoint(float(eta), float(np.max(np.abs(Su(P) - un1)))))
    nz = [(p.eta, p.residual) for p in out if p.residual > 0]
    fit = order_fit(nz) if len(nz) >= 3 else None
    return out, fit


@dataclass
class HorizonRow:
    eta: float
    T: float
    error_within: float
    error_beyond: float
    max_norm: float
    flags: list[str] = field(default_factory=list)


def horizon_experiment(problem: ProblemSpec, phi: ObservableSpec, eta_list, beta: float = 0.5,
                       probes=DEFAULT_PROBES, cut: CutoffSpec | None = None, num: Numerics | None = None,
                       escape_paths: int = 10_000):
    """Weak error restricted to ``n eta <= beta ln(1/eta)``, plus the same sup over twice that horizon."""
    num = num or Numerics()
    cut = cut or CutoffSpec(1.4)
    rows = []
    for eta in eta_list:
        T = beta * math.log(1.0 / eta)
        pt = weak_error_point(problem, phi, eta, 2.0 * T, probes, "pde", "semigroup_grid", cut, num)
        within = pt.error_up_to(T)
        beyond = pt.error
        assert beyond >= within
        cfg = sgd_engine.ChainConfig(eta=eta, n_steps=int(math.floor(T / eta + 1e-9)), seed=num.seed,
                                     init_radius=cut.R)
        ens = sgd_engine.run_ensemble(problem, cfg, escape_paths, None, r_check=2.0 * cut.R, numba=num.numba)
        flags = ["escape"] if ens.exceed_count else []
        rows.append(HorizonRow(float(eta), T, within, beyond, ens.max_norm, flags))
    usable = [(r.eta, r.error_within) for r in rows if not r.flags and r.error_within > 0]
    fit = order_fit(usable) if len(usable) >= 3 else None
    return rows, fit


# ---------------------------------------------------------------------------
# artifacts

REPORT_COLUMNS = ("eta", "T", "error", "u_source", "U_source", "noise_budget", "flags")


def _fmt(v) -> str:
    if isinstance(v, float):
        return f"{v:.17g}"
    return str(v)


def write_report_csv(points, dest: str | Path) -> None:
    with open(dest, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(REPORT_COLUMNS)
        for p in points:
            r = p.row()
            w.writerow([_fmt(r[c]) for c in REPORT_COLUMNS])


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if hasattr(obj, "__dataclass_fields__"):
        return _jsonable(asdict(obj))
    if isinstance(obj, float) and not math.isfinite(obj):
        return str(obj)
    return obj


def write_json(summary: dict, dest: str | Path) -> None:
    with open(dest, "w") as fh:
        json.dump(_jsonable(summary), fh, indent=2, sort_keys=True)
        fh.write("\n")
