"""Constant-step SGD: single steps, seeded trajectories, Monte Carlo ``U^n(x)``."""
from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import _kernels, problems, rng
from .errors import DomainError
from .observables import ObservableSpec
from .problems import ProblemSpec

DEFAULT_BLOCK = 16384


@dataclass(frozen=True)
class ChainConfig:
    eta: float
    n_steps: int
    x0: tuple[float, ...] | float = 0.0
    seed: int = 0
    init_radius: float = 0.0  # > 0: start uniformly in B(0, init_radius) instead of x0

    def __post_init__(self):
        if not self.eta >= 0:
            raise ValueError(f"eta must be nonnegative, got {self.eta}")
        if self.n_steps < 0:
            raise ValueError(f"n_steps must be nonnegative, got {self.n_steps}")

    def x0_array(self, dim: int) -> np.ndarray:
        x0 = np.atleast_1d(np.asarray(self.x0, dtype=float))
        if x0.size == 1 and dim > 1:
            x0 = np.full(dim, float(x0[0]))
        if x0.shape != (dim,):
            raise ValueError(f"x0 has shape {x0.shape}, expected ({dim},)")
        return x0


@dataclass(frozen=True)
class EstimateWithError:
    value: float
    std_error: float
    n_samples: int


@dataclass(frozen=True)
class EnsembleStats:
    """Per-epoch ensemble mean and standard error, plus norm diagnostics."""

    mean: np.ndarray
    std_error: np.ndarray
    n_samples: int
    max_norm: float
    exceed_count: int
    paths: np.ndarray | None = None

    def at(self, n: int) -> EstimateWithError:
        return EstimateWithError(float(self.mean[n]), float(self.std_error[n]), self.n_samples)


def sgd_step(problem: ProblemSpec, x, xi, eta: float) -> np.ndarray:
    return problems._points(problem, x) - eta * problems.grad_random(problem, x, xi)


def _xi_draws(problem: ProblemSpec, seed: int, index: int, n_steps: int) -> np.ndarray:
    d = problem.dim
    u = rng.uniforms(seed, rng.XI, index, n_steps * d).reshape(n_steps, d)
    return problems.sample_xi(problem, u)


def _initial_point(problem: ProblemSpec, cfg: ChainConfig, index: int) -> np.ndarray:
    x0 = cfg.x0_array(problem.dim)
    if cfg.init_radius <= 0:
        return x0
    keys = rng.stream_keys_np(cfg.seed, rng.INIT, [index])
    return _kernels._init_np(x0, cfg.init_radius, keys)[0]


def sgd_trajectory(problem: ProblemSpec, cfg: ChainConfig, index: int = 0) -> np.ndarray:
    """Path ``(n_steps + 1, d)`` of trajectory ``index`` of the seeded ensemble."""
    xis = _xi_draws(problem, cfg.seed, index, cfg.n_steps)
    path = np.empty((cfg.n_steps + 1, problem.dim))
    path[0] = _initial_point(problem, cfg, index)
    for k in range(cfg.n_steps):
        path[k + 1] = sgd_step(problem, path[k], xis[k], cfg.eta)
    return path


def run_ensemble(problem: ProblemSpec, cfg: ChainConfig, n_paths: int, phi: ObservableSpec | None = None,
                 r_check: float = np.inf, record: bool = False, block: int = DEFAULT_BLOCK,
                 numba: bool | None = None) -> EnsembleStats:
    """Simulate ``n_paths`` chains; statistics of ``phi(X_n)`` for every ``n <= n_steps``."""
    if n_paths < 1:
        raise ValueError("n_paths must be positive")
    stats = phi is not None
    mean, m2, maxn, esc, paths = _kernels.sgd_ensemble(
        problem.code, float(problem.mu), problem.s, cfg.x0_array(problem.dim), float(cfg.init_radius),
        float(cfg.eta), int(cfg.n_steps), int(rng.seed_to_u64(cfg.seed)), int(n_paths), int(block),
        phi.code if stats else -1, phi.index if stats else 0,
        phi.coeff_array() if stats else np.zeros(1), float(r_check), stats, record,
        numba=numba,
    )
    return _finish(mean, m2, maxn, esc, paths, n_paths, block, stats, record)


def _finish(mean, m2, maxn, esc, paths, n_paths, block, stats, record) -> EnsembleStats:
    counts = np.full(mean.shape[0], block)
    counts[-1] = n_paths - block * (mean.shape[0] - 1)
    if stats:
        tot_mean, tot_m2, n = _kernels.merge_blocks(mean, m2, counts)
        se = np.sqrt(np.maximum(tot_m2, 0.0) / (n - 1) / n) if n > 1 else np.zeros_like(tot_mean)
    else:
        tot_mean = se = np.zeros(0)
    return EnsembleStats(tot_mean, se, int(n_paths), float(maxn.max()), int(esc.sum()),
                         paths if record else None)


def estimate_U(problem: ProblemSpec, phi: ObservableSpec, cfg: ChainConfig, M: int,
               numba: bool | None = None) -> EstimateWithError:
    """Monte Carlo estimate of ``U^n(x0) = E phi(X_n)`` with its standard error."""
    if M < 2:
        raise ValueError(f"estimate_U needs M >= 2 trajectories, got {M}")
    return run_ensemble(problem, cfg, M, phi, numba=numba).at(cfg.n_steps)


def estimate_U_path(problem: ProblemSpec, phi: ObservableSpec, cfg: ChainConfig, M: int,
                    numba: bool | None = None) -> EnsembleStats:
    """Like :func:`estimate_U` but for every epoch ``0..n_steps`` at once."""
    if M < 2:
        raise ValueError(f"estimate_U needs M >= 2 trajectories, got {M}")
    return run_ensemble(problem, cfg, M, phi, numba=numba)


@dataclass(frozen=True)
class TrapReport:
    max_norm_seen: float
    escapes: int
    R: float
    eta: float
    eta0: float
    n_paths: int
    n_steps: int


def trap_check(problem: ProblemSpec, R: float, eta: float, n_steps: int, M: int, seed: int = 0,
               force: bool = False, numba: bool | None = None) -> TrapReport:
    """Run ``M`` chains from uniform points in ``B(0, R)``; count iterates leaving the ball."""
    c = problems.constants(problem, R)
    if eta > c.eta0 and not force:
        raise DomainError(
            f"eta={eta} exceeds eta0={c.eta0:.6g} = min((R-L)/M1, 2 nu L^2/M2^2) for R={R}; "
            "the trapping guarantee does not apply (pass force=True to run anyway)")
    cfg = ChainConfig(eta=eta, n_steps=n_steps, x0=0.0, seed=seed, init_radius=R)
    ens = run_ensemble(problem, cfg, M, None, r_check=R, numba=numba)
    return TrapReport(ens.max_norm, ens.exceed_count, float(R), float(eta), c.eta0, int(M), int(n_steps))


def write_path_csv(path: np.ndarray, dest: str | Path, time_step: float | None = None) -> None:
    """Columns ``step, x_0..x_{d-1}`` (or ``t, ...`` when ``time_step`` is given)."""
    d = path.shape[1]
    with open(dest, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["step" if time_step is None else "t"] + [f"x_{i}" for i in range(d)])
        for k, row in enumerate(path):
            head = str(k) if time_step is None else f"{k * time_step:.17g}"
            w.writerow([head] + [f"{v:.17g}" for v in row])
