"""Random-loss families ``f(x; xi)`` with analytic derivatives.

All built-in noise laws have bounded support and are mean-zero, so the
expected gradient is recovered exactly by quadrature over the law:

* ``quadratic``: ``f = mu/2 |x|^2 + xi.x``, ``xi`` uniform on ``{-s, +s}^d``.
* ``trig`` (1-D): ``f = mu/2 x^2 + s sin(x + theta)``, ``theta ~ U[0, 2pi)``.
  Every sample loss is nonconvex once ``s > mu`` while the mean stays
  ``mu``-strongly convex.
* ``double_well`` (1-D): ``f = (x^2 - 1)^2 / 4 + xi x``, ``xi`` on ``{-s, +s}``.

Points are arrays with a trailing axis of length ``d``; noise samples use the
same layout (``d = 1`` for the scalar-noise families).
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np
from scipy import optimize

from . import rng
from .errors import ConfigurationError, DomainError

FAMILIES = ("quadratic", "trig", "double_well")
FAMILY_CODE = {name: i for i, name in enumerate(FAMILIES)}

# max of |x^3 - x| on [0, 1]
_DW_INNER_MAX = 2.0 / (3.0 * math.sqrt(3.0))


@dataclass(frozen=True)
class XiLaw:
    """Quadrature rule for the noise law: ``E g(xi) = sum_k w_k g(nodes[k])``."""

    kind: str  # "finite" | "uniform_interval"
    nodes: np.ndarray  # (K, d)
    weights: np.ndarray  # (K,)
    support: tuple[float, float]


@dataclass(frozen=True)
class ProblemSpec:
    family: str
    dim: int = 1
    mu: float = 1.0
    noise_scale: float = 0.5
    quad_nodes: int = 64

    def __post_init__(self):
        if self.family not in FAMILY_CODE:
            raise ConfigurationError(f"unknown family_id {self.family!r}; expected one of {FAMILIES}")
        if int(self.dim) != self.dim or self.dim < 1:
            raise ConfigurationError(f"dimension must be a positive integer, got {self.dim}")
        if self.family != "quadratic" and self.dim != 1:
            raise ConfigurationError(f"family {self.family!r} is one-dimensional")
        if self.family != "double_well" and not self.mu > 0:
            raise ConfigurationError(f"mu must be positive, got {self.mu}")
        if not self.noise_scale >= 0:
            raise ConfigurationError(f"noise_scale must be nonnegative, got {self.noise_scale}")

    @property
    def s(self) -> float:
        return float(self.noise_scale)

    @property
    def code(self) -> int:
        return FAMILY_CODE[self.family]

    @property
    def is_convex(self) -> bool:
        """Whether the expected loss is strongly convex on all of space."""
        return self.family != "double_well"

    @property
    def strong_convexity(self) -> float:
        return self.mu if self.is_convex else 0.0

    @cached_property
    def xi_law(self) -> XiLaw:
        s = self.s
        if self.family == "trig":
            t, w = np.polynomial.legendre.leggauss(self.quad_nodes)
            nodes = np.pi * (t + 1.0)
            return XiLaw("uniform_interval", nodes[:, None], w / 2.0, (0.0, 2.0 * np.pi))
        pts = np.array(list(itertools.product((-s, s), repeat=self.dim)), dtype=float)
        w = np.full(len(pts), 1.0 / len(pts))
        return XiLaw("finite", pts, w, (-s, s))

    def with_quadrature(self, n: int) -> "ProblemSpec":
        return ProblemSpec(self.family, self.dim, self.mu, self.noise_scale, n)


@dataclass(frozen=True)
class ProblemConstants:
    nu: float
    L: float
    M1: float
    M2: float
    eta0: float
    R: float


def _points(spec: ProblemSpec, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.ndim == 0:
        x = x[None]
    if x.shape[-1] != spec.dim:
        if spec.dim == 1:
            x = x[..., None]
        else:
            raise ValueError(f"expected trailing axis of length {spec.dim}, got shape {x.shape}")
    return x


def sample_xi(spec: ProblemSpec, u: np.ndarray) -> np.ndarray:
    """Inverse-CDF map from uniforms ``u`` (shape ``(..., d)``) to noise samples."""
    u = np.asarray(u, dtype=float)
    if spec.family == "trig":
        return 2.0 * np.pi * u
    return np.where(u < 0.5, spec.s, -spec.s)


def grad_random(spec: ProblemSpec, x, xi) -> np.ndarray:
    """Gradient of the sample loss ``f(.; xi)`` at ``x``."""
    x = _points(spec, x)
    xi = np.asarray(xi, dtype=float)
    if spec.family == "quadratic":
        return spec.mu * x + xi
    if spec.family == "trig":
        return spec.mu * x + spec.s * np.cos(x + xi)
    if spec.family == "double_well":
        return x**3 - x + xi
    raise ConfigurationError(f"unknown family_id {spec.family!r}")


def grad_expected(spec: ProblemSpec, x) -> np.ndarray:
    x = _points(spec, x)
    if spec.family in ("quadratic", "trig"):
        return spec.mu * x
    return x**3 - x


def hess_expected(spec: ProblemSpec, x) -> np.ndarray:
    """Diagonal of the Hessian of the expected loss (all built-ins are separable)."""
    x = _points(spec, x)
    if spec.family in ("quadratic", "trig"):
        return np.full_like(x, spec.mu)
    return 3.0 * x**2 - 1.0


def expected_loss(spec: ProblemSpec, x) -> np.ndarray:
    x = _points(spec, x)
    if spec.family in ("quadratic", "trig"):
        return 0.5 * spec.mu * np.sum(x * x, axis=-1)
    return 0.25 * (x[..., 0] ** 2 - 1.0) ** 2


def correction_drift(spec: ProblemSpec, x) -> np.ndarray:
    """``(1/4) grad |grad f|^2`` for the expected loss."""
    g = grad_expected(spec, x)
    return 0.5 * hess_expected(spec, x) * g


def sigma(spec: ProblemSpec, x=None) -> np.ndarray:
    """Covariance of the stochastic gradient; constant in ``x`` for every built-in."""
    d = spec.dim
    if spec.family == "trig":
        var = 0.5 * spec.s**2
    else:
        var = spec.s**2
    out = var * np.eye(d)
    if x is None:
        return out
    x = _points(spec, x)
    return np.broadcast_to(out, x.shape[:-1] + (d, d)).copy()


def sigma_quadrature(spec: ProblemSpec, x) -> np.ndarray:
    """Covariance by exact quadrature over the noise law at a single point."""
    x = _points(spec, x).reshape(spec.dim)
    law = spec.xi_law
    dev = grad_random(spec, x[None, :], law.nodes) - grad_expected(spec, x)
    cov = np.einsum("k,ki,kj->ij", law.weights, dev, dev)
    return 0.5 * (cov + cov.T)


def sigma_mc(spec: ProblemSpec, x, m: int, seed: int = 0) -> np.ndarray:
    """Unbiased sample covariance of ``grad_random(x, xi)`` over ``m`` draws."""
    if m < 2:
        raise ValueError(f"sigma_mc needs m >= 2 samples, got {m}")
    x = _points(spec, x).reshape(spec.dim)
    u = rng.uniforms(seed, rng.SIGMA_MC, 0, m * spec.dim).reshape(m, spec.dim)
    g = grad_random(spec, x[None, :], sample_xi(spec, u))
    dev = g - g.mean(axis=0)
    cov = dev.T @ dev / (m - 1)
    return 0.5 * (cov + cov.T)


def confinement_radius(spec: ProblemSpec) -> tuple[float, float]:
    """``(nu, L)`` with ``x . grad f(x; xi) >= nu |x|^2`` for ``|x| >= L``.

    Returns ``L = 0`` when the bound holds everywhere (noise-free convex case).
    """
    if spec.family in ("quadratic", "trig"):
        s_eff = spec.s * math.sqrt(spec.dim)
        return 0.5 * spec.mu, 2.0 * s_eff / spec.mu
    # r^3 - 5/4 r - s >= 0  <=>  x(x^3 - x) - s|x| >= x^2 / 4
    s = spec.s
    g = lambda r: r**3 - 1.25 * r - s  # noqa: E731
    lo = math.sqrt(1.25 / 3.0)
    hi = 2.0 + s
    L = optimize.brentq(g, lo, hi, xtol=1e-12, rtol=1e-14)
    return 0.25, float(L)


def grad_sup(spec: ProblemSpec, r: float) -> float:
    """``sup_xi sup_{|x| <= r} |grad f(x; xi)|`` in closed form."""
    if spec.family in ("quadratic", "trig"):
        return spec.mu * r + spec.s * math.sqrt(spec.dim)
    inner = max(_DW_INNER_MAX if r >= 1.0 / math.sqrt(3.0) else r - r**3, abs(r**3 - r))
    return inner + spec.s


def constants(spec: ProblemSpec, R: float) -> ProblemConstants:
    """Trapping constants for the ball ``B(0, R)``.

    ``eta0 = min((R - L) / M1, 2 nu L^2 / M2^2)`` guarantees that SGD started
    in ``B(0, R)`` never leaves it.
    """
    nu, L = confinement_radius(spec)
    if L == 0.0:
        # no noise: any positive L works; R/2 balances the two branches well enough
        L = 0.5 * R
    if not R > L:
        raise DomainError(f"R={R} must exceed the confinement radius L={L:.6g} for {spec.family}")
    M1 = grad_sup(spec, L)
    M2 = grad_sup(spec, R)
    eta0 = min((R - L) / M1, 2.0 * nu * L**2 / M2**2)
    return ProblemConstants(nu=nu, L=L, M1=M1, M2=M2, eta0=eta0, R=float(R))
