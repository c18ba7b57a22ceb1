"""Confinement potentials ``V(x, lam)`` with analytic control derivatives.

Two families ship with the package:

``splitting_poly``
    ``beta*x**4 + alpha*(1 - 2*lam)*x**2``. ``lam = 0`` is a single well,
    ``lam = 1`` a double well with minima at ``+-sqrt(alpha/(2*beta))``.
    ``lam`` is dimensionless.
``shaking_shifted``
    An anharmonic single well ``V0(y) = M*omega**2*y**2/2 + c4*y**4 +
    c6*y**6`` evaluated at ``y = x - lam``; ``lam`` is the displacement of
    the well minimum in micrometres.

Further families are added with :func:`register_family`.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping, NamedTuple, Optional, Tuple

import numpy as np

from .grid import SpatialGrid

__all__ = [
    "PotentialFamily",
    "FamilyDefinition",
    "register_family",
    "available_families",
    "evaluate",
    "d_dlambda",
    "d2_dlambda2",
]


class FamilyDefinition(NamedTuple):
    value: Callable
    first: Callable
    second: Callable
    defaults: Mapping[str, float]
    lambda_unit: str


_FAMILIES: dict = {}


def register_family(kind: str, value, first, second, defaults, lambda_unit="1"):
    """Register a potential family.

    ``value``, ``first`` and ``second`` take ``(x, lam, coefficients)`` and
    return ``V``, ``dV/dlam`` and ``d2V/dlam2`` on the array ``x``.
    """
    _FAMILIES[kind] = FamilyDefinition(value, first, second, dict(defaults), lambda_unit)


def available_families():
    return sorted(_FAMILIES)


def _split_value(x, lam, c):
    return c["beta"] * x**4 + c["alpha"] * (1.0 - 2.0 * lam) * x**2


def _split_first(x, lam, c):
    return -2.0 * c["alpha"] * x**2


def _split_second(x, lam, c):
    return np.zeros_like(x)


register_family(
    "splitting_poly",
    _split_value,
    _split_first,
    _split_second,
    defaults={"alpha": 18.0, "beta": 4.0},
    lambda_unit="1",
)


def _shake_v0(y, c):
    y2 = y * y
    return y2 * (0.5 * c["mass"] * c["omega"] ** 2 + y2 * (c["c4"] + c["c6"] * y2))


def _shake_v0_prime(y, c):
    y2 = y * y
    return y * (c["mass"] * c["omega"] ** 2 + y2 * (4.0 * c["c4"] + 6.0 * c["c6"] * y2))


def _shake_v0_second(y, c):
    y2 = y * y
    return c["mass"] * c["omega"] ** 2 + y2 * (12.0 * c["c4"] + 30.0 * c["c6"] * y2)


register_family(
    "shaking_shifted",
    lambda x, lam, c: _shake_v0(x - lam, c),
    lambda x, lam, c: -_shake_v0_prime(x - lam, c),
    lambda x, lam, c: _shake_v0_second(x - lam, c),
    defaults={"mass": 0.5, "omega": 12.0, "c4": 20.0, "c6": 0.0},
    lambda_unit="um",
)


@dataclass(frozen=True)
class PotentialFamily:
    """A named potential family with its coefficients and optional bounds.

    Missing coefficients are filled from the family defaults.
    """

    kind: str
    coefficients: Mapping[str, float] = field(default_factory=dict)
    bounds: Optional[Tuple[float, float]] = None

    def __post_init__(self):
        if self.kind not in _FAMILIES:
            raise ValueError(
                f"unknown potential kind {self.kind!r}; known: {available_families()}"
            )
        defn = _FAMILIES[self.kind]
        unknown = set(self.coefficients) - set(defn.defaults)
        if unknown:
            raise ValueError(f"unknown coefficients for {self.kind}: {sorted(unknown)}")
        merged = dict(defn.defaults)
        merged.update({k: float(v) for k, v in self.coefficients.items()})
        object.__setattr__(self, "coefficients", merged)
        if self.bounds is not None:
            lo, hi = (float(b) for b in self.bounds)
            if not lo < hi:
                raise ValueError("bounds must satisfy lo < hi")
            object.__setattr__(self, "bounds", (lo, hi))

    @property
    def lambda_unit(self) -> str:
        return _FAMILIES[self.kind].lambda_unit

    def _check(self, lam):
        if self.bounds is not None:
            lam_arr = np.asarray(lam)
            lo, hi = self.bounds
            if np.any(lam_arr < lo) or np.any(lam_arr > hi):
                raise ValueError(f"lambda={lam!r} outside bounds {self.bounds}")

    def value(self, x, lam):
        self._check(lam)
        return _FAMILIES[self.kind].value(x, lam, self.coefficients)

    def first(self, x, lam):
        self._check(lam)
        return _FAMILIES[self.kind].first(x, lam, self.coefficients)

    def second(self, x, lam):
        self._check(lam)
        return _FAMILIES[self.kind].second(x, lam, self.coefficients)

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "coefficients": dict(self.coefficients),
            "bounds": list(self.bounds) if self.bounds is not None else None,
        }


def evaluate(family: PotentialFamily, grid: SpatialGrid, lam: float) -> np.ndarray:
    """``V(x_j, lam)`` on every grid point."""
    return family.value(grid.x, float(lam))


def d_dlambda(family: PotentialFamily, grid: SpatialGrid, lam: float) -> np.ndarray:
    return family.first(grid.x, float(lam))


def d2_dlambda2(family: PotentialFamily, grid: SpatialGrid, lam: float) -> np.ndarray:
    return family.second(grid.x, float(lam))
