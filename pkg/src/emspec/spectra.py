"""Linear input-output reflection of a resonator coupled to mechanical modes.

Conventions: all rates and frequencies are angular (rad/s) except the
``Spectrum`` container, whose grid is stored in Hz like measured data.
The susceptibility of a damped mode is ``[2i(w - w0)/linewidth + 1]**-1``;
its complex conjugate convention gives the same ``|S11|``, only the sign of
the phase differs.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

__all__ = [
    "InvalidGridError",
    "ResonatorParams",
    "MechanicalMode",
    "SystemModel",
    "Spectrum",
    "resonator_susceptibility",
    "mechanical_susceptibility",
    "s11_bare",
    "s11_coupled",
    "cooperativity",
    "quality_factor",
    "evaluate_spectrum",
]

TWO_PI = 2 * np.pi


class InvalidGridError(ValueError):
    """Frequency grid is empty, non-finite or not strictly increasing."""


@dataclass(frozen=True)
class ResonatorParams:
    """Microwave mode: frequency, total linewidth and external (port) linewidth."""

    frequency: float
    linewidth: float
    external_linewidth: float

    def __post_init__(self):
        if not (np.isfinite(self.frequency) and self.frequency > 0):
            raise ValueError("resonator frequency must be positive")
        if not (np.isfinite(self.linewidth) and self.linewidth > 0):
            raise ValueError("resonator linewidth must be positive")
        if not 0 <= self.external_linewidth <= self.linewidth:
            raise ValueError("external linewidth must lie in [0, linewidth]")

    @property
    def internal_linewidth(self) -> float:
        return self.linewidth - self.external_linewidth

    @property
    def coupling_efficiency(self) -> float:
        return self.external_linewidth / self.linewidth

    def retuned(self, frequency: float) -> "ResonatorParams":
        return ResonatorParams(frequency, self.linewidth, self.external_linewidth)


@dataclass(frozen=True)
class MechanicalMode:
    """Mechanical mode: frequency, energy decay rate and coupling to the resonator."""

    frequency: float
    linewidth: float
    coupling: float = 0.0

    def __post_init__(self):
        if not (np.isfinite(self.frequency) and self.frequency > 0):
            raise ValueError("mechanical frequency must be positive")
        if not (np.isfinite(self.linewidth) and self.linewidth > 0):
            raise ValueError("mechanical linewidth must be positive")
        if not (np.isfinite(self.coupling) and self.coupling >= 0):
            raise ValueError("coupling must be non-negative")


@dataclass(frozen=True)
class SystemModel:
    """One resonator, any number of mechanical modes and a Kerr coefficient.

    Modes are kept in ascending frequency order; the constructor sorts
    them and rejects duplicate frequencies. ``kerr`` is in rad/s and must
    be non-positive.
    """

    resonator: ResonatorParams
    modes: tuple = ()
    kerr: float = 0.0

    def __post_init__(self):
        modes = tuple(sorted(self.modes, key=lambda m: m.frequency))
        freqs = [m.frequency for m in modes]
        if any(b <= a for a, b in zip(freqs, freqs[1:])):
            raise ValueError("mechanical mode frequencies must be distinct")
        if not (np.isfinite(self.kerr) and self.kerr <= 0):
            raise ValueError("kerr coefficient must be <= 0")
        object.__setattr__(self, "modes", modes)

    def with_resonator(self, resonator: ResonatorParams) -> "SystemModel":
        return SystemModel(resonator, self.modes, self.kerr)

    def with_resonator_frequency(self, frequency: float) -> "SystemModel":
        return self.with_resonator(self.resonator.retuned(frequency))

    def cooperativities(self) -> np.ndarray:
        return np.array([cooperativity(m, self.resonator) for m in self.modes])


@dataclass(frozen=True)
class Spectrum:
    """Complex reflection sampled on a probe grid given in Hz."""

    frequencies: np.ndarray
    s11: np.ndarray
    metadata: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        f = np.asarray(self.frequencies, dtype=float)
        s = np.asarray(self.s11, dtype=complex)
        if f.ndim != 1 or s.shape != f.shape:
            raise ValueError("frequencies and s11 must be 1-D arrays of equal length")
        _check_grid(f)
        if not np.all(np.isfinite(s)):
            raise ValueError("s11 contains non-finite values")
        object.__setattr__(self, "frequencies", f)
        object.__setattr__(self, "s11", s)

    def __len__(self):
        return self.frequencies.size

    @property
    def angular_frequencies(self) -> np.ndarray:
        return TWO_PI * self.frequencies


def _check_grid(grid: np.ndarray) -> None:
    if grid.size == 0:
        raise InvalidGridError("frequency grid is empty")
    if not np.all(np.isfinite(grid)):
        raise InvalidGridError("frequency grid contains non-finite values")
    if np.any(np.diff(grid) <= 0):
        raise InvalidGridError("frequency grid must be strictly increasing")


def _lorentzian(omega, center, linewidth):
    return 1.0 / (2j * (np.asarray(omega, dtype=float) - center) / linewidth + 1.0)


def resonator_susceptibility(omega, r: ResonatorParams):
    """Dimensionless resonator response, equal to 1 on resonance."""
    return _lorentzian(omega, r.frequency, r.linewidth)


def mechanical_susceptibility(omega, m: MechanicalMode):
    """Dimensionless mechanical response, equal to 1 on resonance."""
    return _lorentzian(omega, m.frequency, m.linewidth)


def s11_bare(omega, r: ResonatorParams):
    """Reflection of the resonator alone, ``-1 + 2 eta_e chi_r``."""
    return -1.0 + 2.0 * r.coupling_efficiency * resonator_susceptibility(omega, r)


def cooperativity(m: MechanicalMode, r: ResonatorParams) -> float:
    """``4 g**2 / (kappa gamma)``."""
    return 4.0 * m.coupling**2 / (r.linewidth * m.linewidth)


def quality_factor(m: MechanicalMode) -> float:
    return m.frequency / m.linewidth


def s11_coupled(omega, model: SystemModel):
    """Reflection with every mechanical mode of ``model`` coupled in.

    The Kerr term is ignored (linear response). With all couplings zero the
    result is bitwise identical to :func:`s11_bare`.
    """
    r = model.resonator
    chi_r = resonator_susceptibility(omega, r)
    loading = 0.0
    for m in model.modes:
        loading = loading + cooperativity(m, r) * mechanical_susceptibility(omega, m)
    return -1.0 + 2.0 * r.coupling_efficiency * chi_r / (1.0 + loading * chi_r)


def evaluate_spectrum(model: SystemModel, grid: Sequence[float]) -> Spectrum:
    """Sample :func:`s11_coupled` on a probe grid given in Hz."""
    grid = np.atleast_1d(np.asarray(grid, dtype=float))
    if grid.ndim != 1:
        raise InvalidGridError("frequency grid must be one-dimensional")
    _check_grid(grid)
    return Spectrum(grid, s11_coupled(TWO_PI * grid, model))
