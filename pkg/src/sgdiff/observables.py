"""Test functions ``phi`` whose expectations are tracked."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import problems
from .errors import ConfigurationError
from .problems import ProblemSpec

KINDS = ("coordinate", "squared_norm", "expected_loss", "custom_polynomial")
# kernel codes; NORM_POWER is internal (moment curves)
KIND_CODE = {k: i for i, k in enumerate(KINDS)}
NORM_POWER = 4


@dataclass(frozen=True)
class ObservableSpec:
    """``coordinate``: ``x_i``; ``squared_norm``: ``|x|^2``; ``expected_loss``: ``f(x)``;
    ``custom_polynomial``: ``sum_k c_k x_i^k``."""

    kind: str = "coordinate"
    index: int = 0
    coefficients: tuple[float, ...] = field(default=())

    def __post_init__(self):
        if self.kind not in KIND_CODE:
            raise ConfigurationError(f"unknown observable kind {self.kind!r}; expected one of {KINDS}")
        if self.kind == "custom_polynomial" and not self.coefficients:
            raise ConfigurationError("custom_polynomial needs coefficients")
        object.__setattr__(self, "coefficients", tuple(float(c) for c in self.coefficients))

    @property
    def code(self) -> int:
        return KIND_CODE[self.kind]

    def coeff_array(self) -> np.ndarray:
        return np.asarray(self.coefficients if self.coefficients else (0.0,), dtype=float)

    def __call__(self, problem: ProblemSpec, x) -> np.ndarray:
        x = problems._points(problem, x)
        if self.index >= problem.dim:
            raise ConfigurationError(f"coordinate index {self.index} out of range for d={problem.dim}")
        if self.kind == "coordinate":
            return x[..., self.index].copy()
        if self.kind == "squared_norm":
            return np.sum(x * x, axis=-1)
        if self.kind == "expected_loss":
            return problems.expected_loss(problem, x)
        return np.polynomial.polynomial.polyval(x[..., self.index], self.coeff_array())


def parse_observable(obj) -> ObservableSpec:
    """Accept ``"coordinate"``, ``"coordinate(1)"`` or a mapping with ``kind``/``index``/``coefficients``."""
    if isinstance(obj, ObservableSpec):
        return obj
    if isinstance(obj, str):
        name = obj.strip()
        if name.endswith(")") and "(" in name:
            head, arg = name[:-1].split("(", 1)
            return ObservableSpec(head.strip(), index=int(arg))
        return ObservableSpec(name)
    if isinstance(obj, dict):
        return ObservableSpec(
            obj.get("kind", "coordinate"),
            index=int(obj.get("index", 0)),
            coefficients=tuple(obj.get("coefficients", ())),
        )
    raise ConfigurationError(f"cannot interpret observable {obj!r}")
