"""The modified diffusion approximation

    dX = -(grad f(X) + eta/4 grad |grad f(X)|^2) dt + sqrt(eta Lambda(X)) dW

integrated by Euler-Maruyama, together with the exact Ornstein-Uhlenbeck
solution available when ``grad f`` is linear and ``Lambda = Sigma``.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import optimize

from . import _kernels, cutoff, problems, rng
from .cutoff import CutoffSpec
from .observables import NORM_POWER, ObservableSpec
from .problems import ProblemSpec
from .sgd_engine import EnsembleStats, EstimateWithError, _finish

DEFAULT_BLOCK = 4096


def default_substep(eta: float) -> float:
    """``min(eta^2 / 10, eta / 100)`` snapped so that it divides ``eta``."""
    h = min(eta * eta / 10.0, 0.01 * eta)
    return eta / math.ceil(eta / h - 1e-9)


@dataclass(frozen=True)
class SdeConfig:
    eta: float
    h: float
    T: float
    x0: tuple[float, ...] | float = 0.0
    seed: int = 0
    init_radius: float = 0.0
    corrected: bool = True  # False drops the eta/4 grad|grad f|^2 drift (first-order SDE)
    use_cutoff: bool = True  # False diffuses with the raw Sigma everywhere

    def __post_init__(self):
        if not self.eta > 0:
            raise ValueError(f"eta must be positive, got {self.eta}")
        if not 0 < self.h <= self.eta * (1 + 1e-12):
            raise ValueError(f"substep h={self.h} must lie in (0, eta={self.eta}]")
        k = self.eta / self.h
        if abs(k - round(k)) > 1e-9 * k:
            raise ValueError(f"h={self.h} must divide eta={self.eta} exactly")
        if not self.T >= 0:
            raise ValueError("T must be nonnegative")

    @property
    def substeps(self) -> int:
        return int(round(self.eta / self.h))

    @property
    def n_epochs(self) -> int:
        return int(math.floor(self.T / self.eta + 1e-9))

    def x0_array(self, dim: int) -> np.ndarray:
        x0 = np.atleast_1d(np.asarray(self.x0, dtype=float))
        if x0.size == 1 and dim > 1:
            x0 = np.full(dim, float(x0[0]))
        return x0


@dataclass(frozen=True)
class OuParams:
    a: float
    diffusion_sq: float

    def __post_init__(self):
        if not self.a > 0:
            raise ValueError("OU drift rate must be positive")


def ou_params(mu: float, eta: float, s_sq: float, corrected: bool = True) -> OuParams:
    return OuParams(mu + (0.5 * eta * mu * mu if corrected else 0.0), eta * s_sq)


def modified_drift(problem: ProblemSpec, x, eta: float, corrected: bool = True) -> np.ndarray:
    g = problems.grad_expected(problem, x)
    if not corrected:
        return -g
    return -(g + eta * problems.correction_drift(problem, x))


def em_step(problem: ProblemSpec, cut: CutoffSpec, x, eta: float, h: float, dW,
            corrected: bool = True) -> np.ndarray:
    x = problems._points(problem, x)
    dW = np.asarray(dW, dtype=float).reshape(x.shape)
    S = cutoff.sqrt_lambda(problem, cut, x)
    return x + modified_drift(problem, x, eta, corrected) * h + math.sqrt(eta) * np.einsum("...ij,...j->...i", S, dW)


def _run(problem: ProblemSpec, cut: CutoffSpec, cfg: SdeConfig, n_paths: int, phi_code: int, phi_index: int,
         coeffs: np.ndarray, r_check: float, stats: bool, record: bool, block: int, numba) -> EnsembleStats:
    sq = cutoff.sqrt_sigma(problem)
    mean, m2, maxn, esc, paths = _kernels.sde_ensemble(
        problem.code, float(problem.mu), cfg.x0_array(problem.dim), float(cfg.init_radius),
        float(cfg.eta), float(cfg.eta) if cfg.corrected else 0.0, float(cfg.h), cfg.substeps, cfg.n_epochs,
        int(rng.seed_to_u64(cfg.seed)), int(n_paths), int(block), np.ascontiguousarray(sq),
        float(cut.R), float(cut.R2), bool(cfg.use_cutoff),
        int(phi_code), int(phi_index), coeffs, float(r_check), stats, record,
        numba=numba,
    )
    return _finish(mean, m2, maxn, esc, paths, n_paths, block, stats, record)


def run_ensemble(problem: ProblemSpec, cut: CutoffSpec, cfg: SdeConfig, n_paths: int,
                 phi: ObservableSpec | None = None, r_check: float = np.inf, record: bool = False,
                 block: int = DEFAULT_BLOCK, numba: bool | None = None) -> EnsembleStats:
    if n_paths < 1:
        raise ValueError("n_paths must be positive")
    stats = phi is not None
    return _run(problem, cut, cfg, n_paths, phi.code if stats else -1, phi.index if stats else 0,
                phi.coeff_array() if stats else np.zeros(1), r_check, stats, record, block, numba)


def simulate_sde(problem: ProblemSpec, cut: CutoffSpec, cfg: SdeConfig, index: int = 0,
                 numba: bool | None = None) -> np.ndarray:
    """Path ``(n_epochs + 1, d)`` sampled at ``t = n eta`` (trajectory ``index`` of the seeded ensemble)."""
    ens = run_ensemble(problem, cut, cfg, index + 1, record=True, numba=numba)
    return ens.paths[index]


def one_step_tolerance(problem: ProblemSpec, eta: float, h: float, factor: float = 10.0) -> float:
    """Overshoot allowance ``factor * sqrt(eta * sup||Lambda||) * sqrt(h)`` for discrete paths."""
    lam = float(np.linalg.norm(problems.sigma(problem), 2))
    return factor * math.sqrt(eta * lam) * math.sqrt(h)


@dataclass(frozen=True)
class ConfinementReport:
    max_norm: float
    exceed_count: int
    bound: float
    n_paths: int
    n_points: int


def confinement_check(problem: ProblemSpec, cut: CutoffSpec, cfg: SdeConfig, n_paths: int,
                      numba: bool | None = None) -> ConfinementReport:
    """Count substep points with ``|X| > R2 + one-step tolerance``."""
    bound = cut.R2 + one_step_tolerance(problem, cfg.eta, cfg.h)
    ens = run_ensemble(problem, cut, cfg, n_paths, r_check=bound, numba=numba)
    return ConfinementReport(ens.max_norm, ens.exceed_count, bound, n_paths,
                             n_paths * cfg.n_epochs * cfg.substeps)


def ou_exact(mu: float, eta: float, s_sq: float, x0, t, phi_kind: str = "coordinate",
             corrected: bool = True) -> np.ndarray:
    """Exact ``E phi(X_t)`` for ``dX = -a X dt + sqrt(eta s_sq) dW``, ``a = mu + eta mu^2 / 2``.

    Valid for the quadratic (and trig) families while paths stay where ``Lambda = Sigma``.
    """
    p = ou_params(mu, eta, s_sq, corrected)
    x0 = np.asarray(x0, dtype=float)
    t = np.asarray(t, dtype=float)
    decay = np.exp(-p.a * t)
    if phi_kind == "coordinate":
        return decay * x0
    if phi_kind in ("squared_norm", "expected_loss"):
        m2 = decay**2 * x0**2 + p.diffusion_sq / (2.0 * p.a) * (1.0 - decay**2)
        return m2 if phi_kind == "squared_norm" else 0.5 * mu * m2
    raise ValueError(f"ou_exact supports coordinate, squared_norm and expected_loss, not {phi_kind!r}")


def estimate_u_mc(problem: ProblemSpec, cut: CutoffSpec, phi: ObservableSpec, cfg: SdeConfig, M: int,
                  numba: bool | None = None) -> EnsembleStats:
    """``E_x phi(X_{n eta})`` for every epoch with standard errors."""
    if M < 2:
        raise ValueError(f"estimate_u_mc needs M >= 2 paths, got {M}")
    return run_ensemble(problem, cut, cfg, M, phi, numba=numba)


def moment_curve(problem: ProblemSpec, cut: CutoffSpec, cfg: SdeConfig, M: int, order: int,
                 numba: bool | None = None) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """``(t, E|X_t|^order, std_error)`` at every epoch; ``order`` must be even."""
    if M < 100:
        raise ValueError(f"moment_curve needs M >= 100 paths, got {M}")
    if order < 0 or order % 2:
        raise ValueError(f"moment order must be a nonnegative even integer, got {order}")
    ens = _run(problem, cut, cfg, M, NORM_POWER, order // 2, np.zeros(1), np.inf, True, False,
               DEFAULT_BLOCK, numba)
    t = cfg.eta * np.arange(cfg.n_epochs + 1)
    return t, ens.mean, ens.std_error


@dataclass(frozen=True)
class EnvelopeFit:
    C: float
    gamma: float
    x_power: float
    max_excess: float  # max over t of curve / bound - 1 (<= 0 when the bound holds)


def fit_moment_envelope(t, curve, x_power: float, gamma_max: float = 50.0) -> EnvelopeFit:
    """Tightest bound ``C (1 + x_power e^{-gamma t})`` lying above ``curve``.

    For each ``gamma`` the smallest admissible ``C`` is ``max curve / (1 + x_power e^{-gamma t})``;
    ``gamma`` minimises the mean log gap between bound and curve.
    """
    t = np.asarray(t, dtype=float)
    curve = np.asarray(curve, dtype=float)

    def c_of(g):
        return float(np.max(curve / (1.0 + x_power * np.exp(-g * t))))

    def gap(g):
        bound = c_of(g) * (1.0 + x_power * np.exp(-g * t))
        return float(np.mean(np.log(bound / curve)))

    res = optimize.minimize_scalar(gap, bounds=(1e-6, gamma_max), method="bounded",
                                   options={"xatol": 1e-8})
    g = float(res.x)
    C = c_of(g)
    bound = C * (1.0 + x_power * np.exp(-g * t))
    return EnvelopeFit(C=C, gamma=g, x_power=float(x_power), max_excess=float(np.max(curve / bound - 1.0)))


def write_series_csv(t, values, dest: str | Path, std_error=None) -> None:
    with open(dest, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t", "value"] + (["std_error"] if std_error is not None else []))
        for k in range(len(t)):
            row = [f"{t[k]:.17g}", f"{values[k]:.17g}"]
            if std_error is not None:
                row.append(f"{std_error[k]:.17g}")
            w.writerow(row)


def as_estimates(ens: EnsembleStats) -> list[EstimateWithError]:
    return [ens.at(k) for k in range(len(ens.mean))]
