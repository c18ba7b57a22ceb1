"""Grids, state containers, inner products and Fourier helpers.

Units are fixed throughout the package: hbar = 1, time in ms, length in
micrometres. Wavefunctions live on a uniform periodic grid and are
normalized with the rectangle rule, ``sum(|psi|**2) * dx == 1``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

import numpy as np

__all__ = [
    "GridMismatchError",
    "SpatialGrid",
    "TimeGrid",
    "Role",
    "WaveFunction",
    "ControlField",
    "PhysicalParams",
    "inner_product",
    "fidelity_overlap",
    "power_spectrum",
    "spectral_bandwidth",
]


class GridMismatchError(ValueError):
    """Raised when two objects that must share a grid do not."""


@dataclass(frozen=True)
class SpatialGrid:
    """Uniform periodic grid on ``[x_min, x_max)``.

    Parameters
    ----------
    x_min, x_max : float
        Box edges in micrometres. ``x_max`` itself is not a grid point.
    n_points : int
        Number of grid points (at least 8; powers of two are fastest).
    """

    x_min: float
    x_max: float
    n_points: int

    def __post_init__(self):
        if int(self.n_points) != self.n_points or self.n_points < 8:
            raise ValueError(f"n_points must be an integer >= 8, got {self.n_points}")
        if not self.x_max > self.x_min:
            raise ValueError("x_max must exceed x_min")
        object.__setattr__(self, "n_points", int(self.n_points))

    @property
    def dx(self) -> float:
        return (self.x_max - self.x_min) / self.n_points

    @property
    def x(self) -> np.ndarray:
        return self.x_min + self.dx * np.arange(self.n_points)

    @property
    def wavenumbers(self) -> np.ndarray:
        """Angular wavenumbers in standard FFT ordering."""
        return 2.0 * np.pi * np.fft.fftfreq(self.n_points, d=self.dx)

    def refined(self, factor: int = 2) -> "SpatialGrid":
        return SpatialGrid(self.x_min, self.x_max, self.n_points * factor)


@dataclass(frozen=True)
class TimeGrid:
    """Uniform grid of ``n_steps + 1`` nodes on ``[0, t_final]``."""

    t_final: float
    n_steps: int

    def __post_init__(self):
        if not self.t_final > 0:
            raise ValueError("t_final must be positive")
        if int(self.n_steps) != self.n_steps or self.n_steps < 1:
            raise ValueError("n_steps must be a positive integer")
        object.__setattr__(self, "n_steps", int(self.n_steps))

    @property
    def dt(self) -> float:
        return self.t_final / self.n_steps

    @property
    def t(self) -> np.ndarray:
        return np.linspace(0.0, self.t_final, self.n_steps + 1)

    @property
    def n_nodes(self) -> int:
        return self.n_steps + 1

    def refined(self, factor: int = 2) -> "TimeGrid":
        return TimeGrid(self.t_final, self.n_steps * factor)


class Role(str, Enum):
    STATE = "state"
    COSTATE = "costate"
    DESIRED = "desired"


@dataclass
class WaveFunction:
    """Complex field on a :class:`SpatialGrid`.

    States and desired states must be normalized to one; co-states carry
    gradient information in their norm and are left alone.
    """

    grid: SpatialGrid
    amplitudes: np.ndarray
    role: Role = Role.STATE

    def __post_init__(self):
        self.amplitudes = np.asarray(self.amplitudes, dtype=complex)
        self.role = Role(self.role)
        if self.amplitudes.shape != (self.grid.n_points,):
            raise ValueError(
                f"amplitudes must have shape ({self.grid.n_points},), "
                f"got {self.amplitudes.shape}"
            )
        if not np.all(np.isfinite(self.amplitudes)):
            raise ValueError("wavefunction contains non-finite amplitudes")

    @property
    def norm(self) -> float:
        return float(np.sqrt(np.sum(np.abs(self.amplitudes) ** 2) * self.grid.dx))

    @property
    def density(self) -> np.ndarray:
        return np.abs(self.amplitudes) ** 2

    def normalized(self) -> "WaveFunction":
        return WaveFunction(self.grid, self.amplitudes / self.norm, self.role)

    def check_normalized(self, tol: float = 1e-9) -> None:
        if self.role is not Role.COSTATE and abs(self.norm - 1.0) > tol:
            raise ValueError(f"{self.role.value} wavefunction has norm {self.norm!r}")

    @classmethod
    def from_function(cls, grid, func, role=Role.STATE, normalize=True):
        psi = cls(grid, func(grid.x), role)
        return psi.normalized() if normalize else psi


@dataclass
class ControlField:
    """Real control values at the ``n_steps + 1`` nodes of a time grid."""

    time_grid: TimeGrid
    values: np.ndarray
    fixed_endpoints: bool = True

    def __post_init__(self):
        self.values = np.array(self.values, dtype=float)
        if self.values.shape != (self.time_grid.n_nodes,):
            raise ValueError(
                f"control needs {self.time_grid.n_nodes} node values, "
                f"got shape {self.values.shape}"
            )
        if not np.all(np.isfinite(self.values)):
            raise ValueError("control contains non-finite values")

    @property
    def midpoints(self) -> np.ndarray:
        """Control value used during each time step (average of its nodes)."""
        return 0.5 * (self.values[1:] + self.values[:-1])

    def copy(self) -> "ControlField":
        return ControlField(self.time_grid, self.values.copy(), self.fixed_endpoints)

    def with_values(self, values) -> "ControlField":
        return ControlField(self.time_grid, values, self.fixed_endpoints)


@dataclass(frozen=True)
class PhysicalParams:
    """Atom mass ``M`` (simulation units) and nonlinearity ``kappa``."""

    mass: float = 0.5
    kappa: float = 0.5 * np.pi

    def __post_init__(self):
        if not self.mass > 0:
            raise ValueError("mass must be positive")
        if not self.kappa >= 0:
            raise ValueError("kappa must be non-negative")


def _check_same_grid(a: WaveFunction, b: WaveFunction) -> None:
    if a.grid != b.grid:
        raise GridMismatchError(f"grid mismatch: {a.grid} vs {b.grid}")


def inner_product(a: WaveFunction, b: WaveFunction) -> complex:
    """Return ``<a|b> = sum(conj(a) * b) * dx``."""
    _check_same_grid(a, b)
    return complex(np.vdot(a.amplitudes, b.amplitudes) * a.grid.dx)


def fidelity_overlap(psi: WaveFunction, psi_d: WaveFunction) -> float:
    """Return ``|<psi_d|psi>|**2``, insensitive to global phases."""
    return abs(inner_product(psi_d, psi)) ** 2


def power_spectrum(field: ControlField):
    """One-sided power spectrum of a control history.

    The control is treated as one period of a signal on ``[0, T)``: the
    node at ``t = T`` is dropped, so a sine with an integer number of
    periods lands in a single frequency bin. Normalization follows the
    continuous Fourier transform, so that
    ``sum(values[:-1]**2) * dt == sum(power) * dnu``.

    Returns
    -------
    nu : ndarray
        Non-negative frequencies in cycles per ms.
    power : ndarray
        ``|dt * FFT(values)|**2`` with the negative-frequency half folded in.
    """
    dt = field.time_grid.dt
    samples = field.values[:-1]
    n = samples.size
    spectrum = np.fft.rfft(samples) * dt
    power = np.abs(spectrum) ** 2
    power[1:] *= 2.0
    if n % 2 == 0:
        power[-1] /= 2.0
    nu = np.fft.rfftfreq(n, d=dt)
    return nu, power


def spectral_bandwidth(nu: np.ndarray, power: np.ndarray) -> float:
    """Standard deviation of the normalized power spectrum over ``nu``."""
    total = power.sum()
    if total == 0.0:
        return 0.0
    weights = power / total
    mean = np.sum(weights * nu)
    return float(np.sqrt(np.sum(weights * (nu - mean) ** 2)))
