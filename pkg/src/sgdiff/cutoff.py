"""Compactly supported diffusion coefficient.

``Lambda(x) = psi(|x|)^2 Sigma(x)`` where ``psi`` is the ``exp(-1/t)``
partition-of-unity bridge: exactly 1 on ``[0, R]``, exactly 0 on
``[R2, inf)``, C-infinity and nonincreasing in between.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import problems
from ._accel import njit
from .errors import ConfigurationError, NumericalPSDError
from .problems import ProblemSpec

PSD_TOL = 1e-10


@dataclass(frozen=True)
class CutoffSpec:
    R: float
    R2: float | None = None

    def __post_init__(self):
        if self.R2 is None:
            object.__setattr__(self, "R2", 2.0 * self.R)
        if not self.R > 0:
            raise ConfigurationError(f"cutoff.R must be positive, got {self.R}")
        if not self.R2 > self.R:
            raise ConfigurationError(f"cutoff.R2 must exceed cutoff.R ({self.R2} <= {self.R})")


@njit
def _g(t):
    return math.exp(-1.0 / t) if t > 0.0 else 0.0


@njit
def psi_scalar(r, R, R2):
    if r <= R:
        return 1.0
    if r >= R2:
        return 0.0
    tau = (r - R) / (R2 - R)
    a = _g(1.0 - tau)
    b = _g(tau)
    return a / (a + b)


def psi(r, spec: CutoffSpec) -> np.ndarray | float:
    """Bridge value at radius ``r`` (scalar or array)."""
    r = np.asarray(r, dtype=float)
    out = np.ones_like(r)
    mid = (r > spec.R) & (r < spec.R2)
    out[r >= spec.R2] = 0.0
    tau = (r[mid] - spec.R) / (spec.R2 - spec.R)
    with np.errstate(divide="ignore", over="ignore"):
        a = np.exp(-1.0 / (1.0 - tau))
        b = np.exp(-1.0 / tau)
    out[mid] = a / (a + b)
    return float(out) if out.ndim == 0 else out


def _norm(problem: ProblemSpec, x) -> np.ndarray:
    return np.linalg.norm(problems._points(problem, x), axis=-1)


def lambda_at(problem: ProblemSpec, spec: CutoffSpec, x) -> np.ndarray:
    """``Lambda(x) = psi(|x|)^2 Sigma(x)``; shape ``(..., d, d)``."""
    p = np.asarray(psi(_norm(problem, x), spec))
    return (p * p)[..., None, None] * problems.sigma(problem, x)


def _psd_sqrt(S: np.ndarray) -> np.ndarray:
    if S.shape[-1] == 1:
        if np.any(S < -PSD_TOL):
            raise NumericalPSDError(f"covariance has negative entry {S.min():.3e}")
        return np.sqrt(np.clip(S, 0.0, None))
    w, v = np.linalg.eigh(S)
    if np.any(w < -PSD_TOL):
        raise NumericalPSDError(f"covariance has eigenvalue {w.min():.3e} < -{PSD_TOL}")
    w = np.clip(w, 0.0, None)
    return (v * np.sqrt(w)[..., None, :]) @ np.swapaxes(v, -1, -2)


def sqrt_sigma(problem: ProblemSpec, x=None) -> np.ndarray:
    """Symmetric PSD square root of ``Sigma``."""
    return _psd_sqrt(problems.sigma(problem, x))


def sqrt_lambda(problem: ProblemSpec, spec: CutoffSpec, x) -> np.ndarray:
    """``psi(|x|) * Sigma(x)^(1/2)``, so that ``sqrt_lambda @ sqrt_lambda.T == lambda_at``."""
    p = np.asarray(psi(_norm(problem, x), spec))
    return p[..., None, None] * sqrt_sigma(problem, x)
