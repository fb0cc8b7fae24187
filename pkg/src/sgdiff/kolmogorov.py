"""Backward Kolmogorov equation of the modified SDE in 1-D.

    u_t = b(x) u_x + D(x) u_xx,   b = -(f' + eta/4 (f'^2)'),   D = eta Lambda / 2

on ``[-B, B]`` with ``B > R2``.  Advection is central where the cell Peclet
number ``|b| h / D`` is at most 2 and first-order upwind elsewhere; diffusion
is always central.  ``Lambda`` vanishes near ``+-B`` and the drift points
inward there, so the boundary rows are pure one-sided upwind and need no
boundary data.  With these choices the semi-discrete generator has
nonnegative off-diagonals and zero row sums (a discrete Markov generator).
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import _kernels, cutoff, problems
from .cutoff import CutoffSpec
from .errors import ConfigurationError
from .observables import ObservableSpec
from .problems import ProblemSpec
from .sde_engine import modified_drift

SCHEMES = ("crank_nicolson", "explicit")


@dataclass(frozen=True)
class PdeConfig:
    B: float
    n_x: int = 4097
    dt: float = 1e-3
    T: float = 5.0
    scheme: str = "crank_nicolson"
    save_dt: float | None = None  # spacing of stored snapshots; defaults to dt

    def __post_init__(self):
        if self.scheme not in SCHEMES:
            raise ConfigurationError(f"unknown scheme {self.scheme!r}; expected one of {SCHEMES}")
        if self.n_x < 5:
            raise ConfigurationError("n_x must be at least 5")
        if not (self.dt > 0 and self.T >= 0 and self.B > 0):
            raise ConfigurationError("dt, B must be positive and T nonnegative")

    @property
    def h(self) -> float:
        return 2.0 * self.B / (self.n_x - 1)

    @property
    def x(self) -> np.ndarray:
        x = -self.B + self.h * np.arange(self.n_x)
        x[-1] = self.B
        return x

    @property
    def n_steps(self) -> int:
        return _ratio(self.T, self.dt, "T", "dt")

    @property
    def save_every(self) -> int:
        if self.save_dt is None:
            return 1
        return _ratio(self.save_dt, self.dt, "save_dt", "dt")


def _ratio(a: float, b: float, na: str, nb: str) -> int:
    k = a / b
    r = int(round(k))
    if abs(k - r) > 1e-7 * max(1.0, k):
        raise ConfigurationError(f"{nb}={b} must divide {na}={a}")
    return r


@dataclass(frozen=True)
class Generator:
    x: np.ndarray
    lower: np.ndarray
    diag: np.ndarray
    upper: np.ndarray
    drift: np.ndarray
    diffusion: np.ndarray  # D = eta Lambda / 2
    upwind: np.ndarray  # bool mask of rows using upwind advection

    def apply(self, u: np.ndarray) -> np.ndarray:
        return _kernels._tri_matvec(self.lower, self.diag, self.upper, u)

    def max_rate(self) -> float:
        return float(np.max(np.abs(self.diag)))


def build_generator(problem: ProblemSpec, cut: CutoffSpec, eta: float, cfg: PdeConfig,
                    corrected: bool = True) -> Generator:
    if problem.dim != 1:
        raise ConfigurationError("the PDE solver is one-dimensional")
    if not cfg.B > cut.R2:
        raise ConfigurationError(f"PDE half-width B={cfg.B} must exceed cutoff.R2={cut.R2}")
    x = cfg.x
    h = cfg.h
    b = modified_drift(problem, x, eta, corrected)[:, 0]
    D = 0.5 * eta * cutoff.lambda_at(problem, cut, x)[:, 0, 0]
    n = x.size
    lower = np.zeros(n)
    diag = np.zeros(n)
    upper = np.zeros(n)
    dif = D / (h * h)
    with np.errstate(divide="ignore", invalid="ignore"):
        peclet = np.where(D > 0, np.abs(b) * h / np.where(D > 0, D, 1.0), np.inf)
    central = peclet <= 2.0
    # central advection
    lower[central] = dif[central] - b[central] / (2 * h)
    upper[central] = dif[central] + b[central] / (2 * h)
    # upwind advection toward where the drift points
    up = ~central
    bp = np.where(up & (b > 0), b / h, 0.0)
    bm = np.where(up & (b < 0), -b / h, 0.0)
    lower[up] = dif[up] + bm[up]
    upper[up] = dif[up] + bp[up]
    # boundary rows: outflow-free one-sided advection, no diffusion
    if D[0] != 0.0 or D[-1] != 0.0:
        raise ConfigurationError("diffusion must vanish at +-B (choose B > R2)")
    if not (b[0] > 0 and b[-1] < 0):
        raise ConfigurationError("drift must point inward at +-B")
    lower[0] = 0.0
    upper[0] = b[0] / h
    lower[-1] = -b[-1] / h
    upper[-1] = 0.0
    up = up.copy()
    up[0] = up[-1] = True
    diag[:] = -(lower + upper)
    return Generator(x, lower, diag, upper, b, D, up)


def stability_limits(gen: Generator, h: float, eta: float) -> dict[str, float]:
    """Explicit-scheme limits and the Crank-Nicolson positivity limit ``2 / max|A_ii|``."""
    lam_max = float(np.max(gen.diffusion)) * 2.0 / eta if eta > 0 else 0.0
    drift_max = float(np.max(np.abs(gen.drift)))
    return {
        "explicit_diffusion": h * h / (eta * lam_max) if lam_max > 0 else math.inf,
        "explicit_advection": h / drift_max if drift_max > 0 else math.inf,
        "explicit_rate": 1.0 / gen.max_rate(),
        "cn_positivity": 2.0 / gen.max_rate(),
    }


def positivity_dt(problem: ProblemSpec, cut: CutoffSpec, eta: float, cfg: PdeConfig,
                  corrected: bool = True, divides: float | None = None) -> float:
    """Largest ``dt <= cfg.dt`` keeping the chosen scheme monotone (and dividing ``divides``)."""
    gen = build_generator(problem, cut, eta, cfg, corrected)
    lim = stability_limits(gen, cfg.h, eta)
    cap = lim["cn_positivity"] if cfg.scheme == "crank_nicolson" else lim["explicit_rate"]
    dt = min(cfg.dt, cap)
    if divides is not None:
        dt = divides / math.ceil(divides / dt - 1e-9)
    return dt


@dataclass(frozen=True)
class ScalarField:
    x: np.ndarray
    t: np.ndarray
    values: np.ndarray  # (len(t), len(x))
    R: float
    meta: dict = field(default_factory=dict)

    @property
    def h(self) -> float:
        return float(self.x[1] - self.x[0])

    def time_index(self, t: float) -> int:
        k = int(np.argmin(np.abs(self.t - t)))
        if abs(self.t[k] - t) > 1e-9 * max(1.0, abs(t)):
            raise ValueError(f"t={t} is not on the stored time grid")
        return k

    def at(self, x, k: int) -> np.ndarray:
        """Cubic interpolation of snapshot ``k`` at points ``x``."""
        return _kernels.lagrange4_np(self.values[k], float(self.x[0]), self.h, np.asarray(x, dtype=float))

    def probe_matrix(self, probes) -> np.ndarray:
        """``(len(t), len(probes))`` values at the probe points for every stored time."""
        probes = np.asarray(probes, dtype=float)
        return np.stack([self.at(probes, k) for k in range(len(self.t))])

    def to_csv(self, dest: str | Path, every: int = 1) -> None:
        with open(dest, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["t", "x", "u"])
            for k in range(0, len(self.t), every):
                tk = f"{self.t[k]:.17g}"
                for xv, uv in zip(self.x, self.values[k]):
                    w.writerow([tk, f"{xv:.17g}", f"{uv:.17g}"])


def solve_kolmogorov(problem: ProblemSpec, cut: CutoffSpec, eta: float, phi: ObservableSpec, cfg: PdeConfig,
                     corrected: bool = True, check_max_principle: bool = True,
                     numba: bool | None = None) -> ScalarField:
    gen = build_generator(problem, cut, eta, cfg, corrected)
    if cfg.scheme == "explicit":
        lim = stability_limits(gen, cfg.h, eta)
        bad = {k: v for k, v in lim.items() if k.startswith("explicit") and cfg.dt > v * (1 + 1e-12)}
        if bad:
            raise ConfigurationError(f"explicit scheme unstable: dt={cfg.dt} exceeds {bad}")
        theta = 0.0
    else:
        theta = 0.5
    u0 = np.asarray(phi(problem, gen.x), dtype=float)
    vals = _kernels.theta_run(gen.lower, gen.diag, gen.upper, float(cfg.dt), theta, u0,
                              cfg.n_steps, cfg.save_every, numba=numba)
    t = cfg.dt * cfg.save_every * np.arange(vals.shape[0])
    if check_max_principle:
        _assert_max_principle(vals)
    if not np.all(np.isfinite(vals)):
        raise FloatingPointError("non-finite values in PDE solution")
    return ScalarField(gen.x, t, vals, float(cut.R),
                       {"scheme": cfg.scheme, "dt": cfg.dt, "n_x": cfg.n_x, "B": cfg.B, "eta": eta,
                        "corrected": corrected, "upwind_rows": int(gen.upwind.sum())})


def _assert_max_principle(vals: np.ndarray, rtol: float = 1e-10) -> None:
    mx = vals.max(axis=1)
    mn = vals.min(axis=1)
    tol = rtol * max(1.0, float(np.max(np.abs(vals[0]))))
    if np.any(np.diff(mx) > tol) or np.any(np.diff(mn) < -tol):
        k = int(np.argmax(np.maximum(np.diff(mx), -np.diff(mn))))
        raise AssertionError(f"max principle violated after snapshot {k}: "
                             f"max {mx[k]:.17g}->{mx[k + 1]:.17g}, min {mn[k]:.17g}->{mn[k + 1]:.17g}")


def u_derivative(fld: ScalarField, t: float, order: int = 1, R: float | None = None):
    """Central-difference ``d^J u / dx^J`` at time ``t`` on nodes inside ``B(0, R)``.

    Returns ``(x, values)``.
    """
    if order not in (1, 2):
        raise ValueError("derivative order must be 1 or 2")
    k = fld.time_index(t)
    R = fld.R if R is None else R
    u = fld.values[k]
    h = fld.h
    if order == 1:
        d = (u[2:] - u[:-2]) / (2 * h)
    else:
        d = (u[2:] - 2 * u[1:-1] + u[:-2]) / (h * h)
    xi = fld.x[1:-1]
    inside = np.abs(xi) <= R + 1e-12
    return xi[inside], d[inside]


def derivative_sup_series(fld: ScalarField, order: int = 1, R: float | None = None):
    """``(t_k, sup_{|x| <= R} |d^J u(., t_k)|)`` over the stored times."""
    sups = np.array([np.max(np.abs(u_derivative(fld, tk, order, R)[1])) for tk in fld.t])
    return fld.t.copy(), sups


@dataclass(frozen=True)
class DecayFit:
    C: float
    gamma: float
    residual: float
    n_points: int
    truncated: bool


def decay_fit(t, sups, t_min: float = 1.0, min_points: int = 10) -> DecayFit:
    """Least-squares fit of ``log sup|d^J u| = log C - gamma t`` on ``t >= t_min``."""
    t = np.asarray(t, dtype=float)
    s = np.asarray(sups, dtype=float)
    truncated = False
    nonpos = np.flatnonzero(~(s > 0))
    if nonpos.size:
        t, s = t[: nonpos[0]], s[: nonpos[0]]
        truncated = True
    keep = t >= t_min
    t, s = t[keep], s[keep]
    if t.size < min_points:
        raise ValueError(f"decay_fit needs >= {min_points} points with t >= {t_min}, got {t.size}")
    A = np.column_stack([np.ones_like(t), -t])
    coef, *_ = np.linalg.lstsq(A, np.log(s), rcond=None)
    resid = np.log(s) - A @ coef
    return DecayFit(C=float(math.exp(coef[0])), gamma=float(coef[1]),
                    residual=float(np.sqrt(np.mean(resid**2))), n_points=int(t.size), truncated=truncated)
