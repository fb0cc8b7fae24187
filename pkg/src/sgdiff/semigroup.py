"""Deterministic ``U^n = S^n phi`` on a 1-D grid.

``(S u)(x) = E u(x - eta grad f(x; xi))`` is evaluated at every node by exact
quadrature over the noise law and local 4-point (cubic) Lagrange
interpolation of ``u``.  On ``[-R, R]`` with ``eta <= eta0(R)`` every query
point stays inside the grid, so no boundary condition is needed.

Interpolation error budget: one application commits ``O(h^4 |u''''|)``; with
``h = 2R / 4096`` that is ~1e-11 for ``R = 2`` and unit fourth derivative,
which stays far below the ``eta^3`` local signal even after 10^3 steps.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import _kernels, problems
from .errors import DomainError
from .observables import ObservableSpec
from .problems import ProblemSpec

# query points may sit on the boundary up to round-off
_EXCESS_TOL = 1e-12


@dataclass(frozen=True)
class Grid1D:
    R: float
    n_points: int = 4097

    def __post_init__(self):
        if self.n_points < 16:
            raise ValueError(f"grid needs at least 16 points, got {self.n_points}")
        if not self.R > 0:
            raise ValueError("grid half-width must be positive")

    @property
    def lo(self) -> float:
        return -float(self.R)

    @property
    def hi(self) -> float:
        return float(self.R)

    @property
    def h(self) -> float:
        return (self.hi - self.lo) / (self.n_points - 1)

    @property
    def x(self) -> np.ndarray:
        x = self.lo + self.h * np.arange(self.n_points)
        x[-1] = self.hi
        return x


@dataclass(frozen=True)
class GridFunction:
    grid: Grid1D
    values: np.ndarray

    def __call__(self, y) -> np.ndarray:
        """Cubic interpolation at arbitrary points inside the grid."""
        return _kernels.lagrange4_np(self.values, self.grid.lo, self.grid.h, np.asarray(y, dtype=float))

    def sup(self) -> float:
        return float(np.max(np.abs(self.values)))

    def to_csv(self, dest: str | Path) -> None:
        with open(dest, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["x", "u"])
            for xv, uv in zip(self.grid.x, self.values):
                w.writerow([f"{xv:.17g}", f"{uv:.17g}"])


def _check_problem(problem: ProblemSpec) -> None:
    if problem.dim != 1:
        raise ValueError("the grid solver is one-dimensional; use Monte Carlo for d > 1")


def check_step(problem: ProblemSpec, grid: Grid1D, eta: float) -> float:
    """Raise unless ``eta <= eta0`` for the grid half-width; returns eta0."""
    eta0 = problems.constants(problem, grid.R).eta0
    if eta > eta0 * (1 + 1e-12):
        raise DomainError(f"eta={eta} exceeds eta0={eta0:.6g} for R={grid.R}: queries would leave the grid")
    return eta0


def apply_S(problem: ProblemSpec, uf: GridFunction, eta: float, numba: bool | None = None,
            checked: bool = False) -> GridFunction:
    """One application of the transfer operator."""
    _check_problem(problem)
    grid = uf.grid
    if not checked:
        check_step(problem, grid, eta)
    law = problem.xi_law
    out, excess = _kernels.apply_S(
        np.ascontiguousarray(uf.values, dtype=float), grid.x, grid.lo, grid.h, float(eta),
        problem.code, float(problem.mu), problem.s,
        np.ascontiguousarray(law.nodes[:, 0]), np.ascontiguousarray(law.weights),
        numba=numba,
    )
    if excess > _EXCESS_TOL * max(1.0, grid.R):
        raise DomainError(f"transfer operator queried {excess:.3e} outside the grid")
    return GridFunction(grid, out)


def sample(problem: ProblemSpec, phi: ObservableSpec, grid: Grid1D) -> GridFunction:
    return GridFunction(grid, np.asarray(phi(problem, grid.x), dtype=float))


def iterate_S(problem: ProblemSpec, phi: ObservableSpec, grid: Grid1D, eta: float, n: int,
              keep_all: bool = False, numba: bool | None = None):
    """``S^n phi`` on the grid; with ``keep_all`` returns the ``(n + 1, n_points)`` stack of iterates.

    The L-infinity contraction ``sup|S u| <= sup|u|`` is asserted at every step.
    """
    _check_problem(problem)
    check_step(problem, grid, eta)
    uf = sample(problem, phi, grid)
    stack = [uf.values] if keep_all else None
    prev_sup = uf.sup()
    for _ in range(n):
        uf = apply_S(problem, uf, eta, numba=numba, checked=True)
        cur = uf.sup()
        # cubic interpolation may overshoot at round-off level
        if cur > prev_sup * (1 + 1e-10) + 1e-14:
            raise AssertionError(f"max principle violated: sup grew from {prev_sup:.17g} to {cur:.17g}")
        prev_sup = cur
        if keep_all:
            stack.append(uf.values)
    if keep_all:
        return np.array(stack)
    return uf
