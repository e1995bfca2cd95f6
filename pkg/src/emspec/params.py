"""Circuit-level quantities of a SQUID-array resonator.

Everything here is a closed-form function of the fabricated circuit:
lumped inductance and capacitance, number of SQUIDs in the array, and the
flux bias. Frequencies are angular (rad/s); divide by 2*pi for Hz.

Flux convention
---------------
The flux quantum is the conventional h/2e and the tuning curve is written
``cos(2*pi*flux/flux_quantum)``. With flux expressed in units of the flux
quantum this is simply ``cos(2*pi*flux)``, so the resonance is periodic in
flux with period 1/2 (because of the absolute value) and vanishes at 1/4.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import constants as _sc

__all__ = [
    "PhysicalConstants",
    "CONSTANTS",
    "CircuitDesign",
    "FluxCalibration",
    "resonator_frequency",
    "impedance",
    "charging_energy",
    "kerr_anharmonicity",
    "flux_tuned_frequency",
    "voltage_to_frequency",
    "frequency_to_voltage",
    "zero_point_voltage",
]


@dataclass(frozen=True)
class PhysicalConstants:
    hbar: float
    electron_charge: float
    flux_quantum: float

    def __post_init__(self):
        for name in ("hbar", "electron_charge", "flux_quantum"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")

    @property
    def planck(self) -> float:
        return 2 * np.pi * self.hbar


CONSTANTS = PhysicalConstants(
    hbar=_sc.hbar,
    electron_charge=_sc.e,
    flux_quantum=_sc.h / (2 * _sc.e),
)


@dataclass(frozen=True)
class CircuitDesign:
    """Fabrication-level description of the resonator.

    Parameters
    ----------
    inductance : float
        Total Josephson inductance of the array, in henry.
    capacitance : float
        Total capacitance across the array, in farad.
    squid_count : int
        Number of SQUIDs in series.
    """

    inductance: float
    capacitance: float
    squid_count: int = 1

    def __post_init__(self):
        if not (np.isfinite(self.inductance) and self.inductance > 0):
            raise ValueError("inductance must be a positive finite number")
        if not (np.isfinite(self.capacitance) and self.capacitance > 0):
            raise ValueError("capacitance must be a positive finite number")
        if int(self.squid_count) != self.squid_count or self.squid_count < 1:
            raise ValueError("squid_count must be an integer >= 1")


@dataclass(frozen=True)
class FluxCalibration:
    """Bias-voltage calibration ``w(V) = max_frequency * sqrt(|cos(gain*V + offset)|)``.

    ``max_frequency`` is in rad/s, ``gain`` in rad/V and ``offset`` in rad.
    A calibration with ``gain = 2*pi`` and ``offset = 0`` maps an axis given
    in flux quanta onto the bare tuning curve.
    """

    max_frequency: float
    gain: float
    offset: float = 0.0

    def __post_init__(self):
        if not (np.isfinite(self.max_frequency) and self.max_frequency > 0):
            raise ValueError("max_frequency must be positive")
        if not (np.isfinite(self.gain) and np.isfinite(self.offset)):
            raise ValueError("gain and offset must be finite")

    @classmethod
    def from_flux_quanta(cls, max_frequency: float) -> "FluxCalibration":
        return cls(max_frequency, 2 * np.pi, 0.0)


def resonator_frequency(design: CircuitDesign) -> float:
    """Angular resonance frequency ``1/sqrt(L C)``."""
    return 1.0 / np.sqrt(design.inductance * design.capacitance)


def impedance(design: CircuitDesign) -> float:
    """Characteristic impedance ``sqrt(L/C)`` in ohm."""
    return np.sqrt(design.inductance / design.capacitance)


def charging_energy(design: CircuitDesign, constants: PhysicalConstants = CONSTANTS) -> float:
    """Charging energy ``e**2 / (2 C)`` in joule."""
    return constants.electron_charge**2 / (2 * design.capacitance)


def kerr_anharmonicity(design: CircuitDesign, constants: PhysicalConstants = CONSTANTS) -> float:
    """Kerr coefficient of the array mode, ``-E_C / (hbar N**2)``, in rad/s.

    Always negative. For ``squid_count == 1`` this is the transmon-like
    value ``-E_C/hbar``.
    """
    return -charging_energy(design, constants) / (constants.hbar * design.squid_count**2)


def flux_tuned_frequency(max_frequency, flux):
    """Resonance frequency at external flux ``flux`` (in flux quanta).

    Returns ``max_frequency * sqrt(|cos(2*pi*flux)|)``; accepts arrays.
    """
    if not max_frequency > 0:
        raise ValueError("max_frequency must be positive")
    return max_frequency * np.sqrt(np.abs(np.cos(2 * np.pi * np.asarray(flux, dtype=float))))


def voltage_to_frequency(cal: FluxCalibration, bias):
    """Evaluate a bias calibration curve at ``bias`` (volts, or any axis unit)."""
    phase = cal.gain * np.asarray(bias, dtype=float) + cal.offset
    return cal.max_frequency * np.sqrt(np.abs(np.cos(phase)))


def zero_point_voltage(frequency: float, capacitance: float,
                       constants: PhysicalConstants = CONSTANTS) -> float:
    """Zero-point voltage fluctuation ``sqrt(hbar w / (2 C))`` across the capacitor.

    At fixed frequency this scales as ``sqrt(Z)``, since ``Z = 1/(w C)``.
    """
    if not (frequency > 0 and capacitance > 0):
        raise ValueError("frequency and capacitance must be positive")
    return np.sqrt(constants.hbar * frequency / (2 * capacitance))


def frequency_to_voltage(cal: FluxCalibration, frequency):
    """Bias on the principal branch where the calibration curve reaches ``frequency``.

    The principal branch is ``0 <= gain*V + offset <= pi/2``, on which the
    frequency falls monotonically from ``max_frequency`` to zero.
    """
    ratio = np.asarray(frequency, dtype=float) / cal.max_frequency
    if np.any(ratio < 0) or np.any(ratio > 1):
        raise ValueError("frequency outside the calibrated tuning range")
    return (np.arccos(ratio**2) - cal.offset) / cal.gain

