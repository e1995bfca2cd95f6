"""Mean-field time evolution of the driven resonator and its mechanical modes.

The equations of motion are integrated in the frame rotating at the drive
frequency, where a stable drive produces a time-independent steady state.
The frame uses detunings ``w_mode - w_drive``, the time convention under
which the steady-state reflection equals the susceptibility form
``[2i(w - w0)/linewidth + 1]**-1`` of :mod:`emspec.spectra` including its
phase. In this convention the Kerr term enters as ``+i kerr |alpha|**2
alpha``, so a negative ``kerr`` lowers the resonance.
Without the Kerr term this steady state must reproduce the closed-form
reflection of :mod:`emspec.spectra`, which makes this module an independent
check on it. With the Kerr term it produces the power-dependent resonance
pull used for photon-number calibration.

Two conventions for the Kerr pull appear in practice. The mean-field
fixed point shifts the resonance by ``kerr * n``; the calibration formula
used in :func:`emspec.fitting.fit_kerr_calibration` by default writes
``kerr * n / 2``. This module always works with the mean-field value.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize_scalar

from . import _kernel
from .spectra import SystemModel

__all__ = [
    "InvalidModelError",
    "UndefinedReflectionError",
    "DriveConfig",
    "MeanFieldState",
    "SteadyStateTolerances",
    "SteadyStateResult",
    "ProbeScan",
    "KerrShiftCurve",
    "mean_field_derivative",
    "integrate_to_steady_state",
    "kerr_shift_curve",
]


class InvalidModelError(ValueError):
    """The model has no dissipation channel, so no steady state exists."""


class UndefinedReflectionError(ZeroDivisionError):
    """Reflection requested for a zero input field."""


@dataclass(frozen=True)
class DriveConfig:
    """Coherent drive: angular frequency and input amplitude in sqrt(photons/s)."""

    frequency: float
    amplitude: complex

    def __post_init__(self):
        if not (np.isfinite(self.frequency) and self.frequency > 0):
            raise ValueError("drive frequency must be positive")
        if not np.isfinite(self.amplitude):
            raise ValueError("drive amplitude must be finite")


@dataclass(frozen=True)
class MeanFieldState:
    resonator: complex
    mechanics: np.ndarray = field(default_factory=lambda: np.zeros(0, complex))

    def __post_init__(self):
        object.__setattr__(self, "mechanics", np.asarray(self.mechanics, dtype=complex).ravel())
        object.__setattr__(self, "resonator", complex(self.resonator))

    def as_vector(self) -> np.ndarray:
        return np.concatenate([[self.resonator], self.mechanics])

    @classmethod
    def from_vector(cls, y) -> "MeanFieldState":
        y = np.asarray(y, dtype=complex)
        return cls(y[0], y[1:].copy())

    @classmethod
    def vacuum(cls, mode_count: int) -> "MeanFieldState":
        return cls(0j, np.zeros(mode_count, complex))

    @property
    def occupation(self) -> float:
        return abs(self.resonator) ** 2


@dataclass(frozen=True)
class SteadyStateTolerances:
    """Integration controls.

    ``rtol`` is the local error tolerance of the Runge-Kutta pair;
    ``residual`` bounds ``|dy/dt| / (lambda_slow |y|)`` where
    ``lambda_slow`` is half the smallest bare linewidth; the run stops
    after ``max_time_factor / gamma_min`` model seconds otherwise.
    """

    rtol: float = 1e-12
    residual: float = 1e-8
    max_time_factor: float = 50.0
    max_steps: int = 50_000_000


@dataclass(frozen=True)
class SteadyStateResult:
    state: MeanFieldState
    s11: complex
    converged: bool
    residual: float
    elapsed_model_time: float
    steps: int = 0


def _check_dissipative(model: SystemModel) -> None:
    if not model.resonator.linewidth > 0 or any(not m.linewidth > 0 for m in model.modes):
        raise InvalidModelError("all linewidths must be positive for a steady state to exist")


def _operator(model: SystemModel, drive_frequency: float):
    r = model.resonator
    diag = np.empty(len(model.modes) + 1, complex)
    diag[0] = 1j * (r.frequency - drive_frequency) - r.linewidth / 2
    for k, m in enumerate(model.modes, start=1):
        diag[k] = 1j * (m.frequency - drive_frequency) - m.linewidth / 2
    g = np.array([m.coupling for m in model.modes], dtype=float)
    return diag, g


def mean_field_derivative(state: MeanFieldState, model: SystemModel, drive: DriveConfig,
                          include_kerr: bool = False) -> MeanFieldState:
    """Time derivative of the mean fields in the frame rotating at the drive."""
    r = model.resonator
    a = state.resonator
    b = state.mechanics
    g = np.array([m.coupling for m in model.modes], dtype=float)
    det_m = np.array([m.frequency - drive.frequency for m in model.modes])
    gam = np.array([m.linewidth for m in model.modes])

    da = ((1j * (r.frequency - drive.frequency) - r.linewidth / 2) * a
          - 1j * np.sum(g * b) + np.sqrt(r.external_linewidth) * drive.amplitude)
    if include_kerr:
        da = da + 1j * model.kerr * abs(a) ** 2 * a
    db = (1j * det_m - gam / 2) * b - 1j * g * a
    return MeanFieldState(da, db)


def integrate_to_steady_state(model: SystemModel, drive: DriveConfig, include_kerr: bool = False,
                              tolerances: SteadyStateTolerances = SteadyStateTolerances(),
                              initial_state: MeanFieldState | None = None) -> SteadyStateResult:
    """Integrate the mean-field equations until they stop moving.

    Starts from vacuum unless ``initial_state`` is given. Non-convergence is
    reported through ``converged=False`` rather than raised.

    Raises
    ------
    InvalidModelError
        If any linewidth is not positive.
    UndefinedReflectionError
        If the drive amplitude is zero.
    """
    _check_dissipative(model)
    if drive.amplitude == 0:
        raise UndefinedReflectionError("reflection is undefined for zero input amplitude")

    r = model.resonator
    n_modes = len(model.modes)
    y = (np.zeros(n_modes + 1, complex) if initial_state is None
         else initial_state.as_vector().astype(complex))
    if y.size != n_modes + 1:
        raise ValueError("initial state does not match the number of modes")

    drive_term = np.sqrt(r.external_linewidth) * complex(drive.amplitude)
    if drive_term == 0 and not np.any(y):
        # nothing ever enters the resonator
        return SteadyStateResult(MeanFieldState.from_vector(y), -1.0 + 0j, True, 0.0, 0.0, 0)

    diag, g = _operator(model, drive.frequency)
    slowest = min([r.linewidth] + [m.linewidth for m in model.modes])
    rate_scale = slowest / 2
    # absolute floor set by the driven amplitude, not by a large initial transient
    amp_scale = 2 * abs(drive_term) / r.linewidth
    atol = 1e-3 * tolerances.rtol * amp_scale
    kerr = model.kerr if include_kerr else 0.0

    t, steps, residual, converged = _kernel.integrate(
        y, diag, g, drive_term, float(kerr), tolerances.rtol, atol, tolerances.residual,
        rate_scale, tolerances.max_time_factor / slowest, tolerances.max_steps)

    s11 = (-drive.amplitude + np.sqrt(r.external_linewidth) * y[0]) / drive.amplitude
    return SteadyStateResult(MeanFieldState.from_vector(y), complex(s11), bool(converged),
                             float(residual), float(t), int(steps))


@dataclass(frozen=True)
class ProbeScan:
    """How :func:`kerr_shift_curve` searches for the driven resonance.

    For each drive amplitude the probe runs over ``points`` frequencies from
    ``red_margin`` linewidths below the largest possible mean-field pull to
    ``blue_margin`` linewidths above the bare resonance. The coarse minimum
    of ``|S11|`` is refined by a bounded scalar search to ``xatol`` (in
    units of the linewidth).
    """

    points: int = 61
    red_margin: float = 2.0
    blue_margin: float = 2.0
    refine: bool = True
    xatol: float = 1e-7
    hysteresis_tol: float = 1e-3


@dataclass(frozen=True)
class KerrShiftCurve:
    amplitudes: np.ndarray
    occupations: np.ndarray
    shifts: np.ndarray
    bistable: np.ndarray
    converged: np.ndarray

    @property
    def powers(self) -> np.ndarray:
        return np.abs(self.amplitudes) ** 2

    def __len__(self):
        return self.amplitudes.size


def _sweep(model, omegas, amplitude, tol, reverse=False):
    """Quasi-static sweep: each point starts from the previous steady state."""
    order = range(len(omegas) - 1, -1, -1) if reverse else range(len(omegas))
    state = None
    occ = np.empty(len(omegas))
    for i in order:
        res = integrate_to_steady_state(model, DriveConfig(omegas[i], amplitude), True, tol, state)
        state = res.state
        occ[i] = res.state.occupation
    return occ


def kerr_shift_curve(model: SystemModel, amplitudes, probe: ProbeScan = ProbeScan(),
                     tolerances: SteadyStateTolerances = SteadyStateTolerances()) -> KerrShiftCurve:
    """Driven resonance pull versus drive amplitude.

    For every amplitude the Kerr steady state is found from vacuum at each
    probe frequency, and the probe frequency minimising ``|S11|`` is taken
    as the driven resonance. Reported per point: occupation ``|alpha|**2``
    at that frequency and the pull ``w_found - w_r`` in rad/s. Where the
    upward and downward quasi-static sweeps disagree the point is flagged
    as bistable; the vacuum branch is still reported.
    """
    if model.kerr > 0:
        raise ValueError("kerr coefficient must be <= 0")
    amplitudes = np.asarray(amplitudes, dtype=complex).ravel()
    if np.any(np.diff(np.abs(amplitudes)) < 0):
        raise ValueError("amplitudes must be sorted by increasing magnitude")
    _check_dissipative(model)

    r = model.resonator
    kappa = r.linewidth
    occ = np.zeros(amplitudes.size)
    shift = np.zeros(amplitudes.size)
    bistable = np.zeros(amplitudes.size, bool)
    converged = np.ones(amplitudes.size, bool)

    for j, amp in enumerate(amplitudes):
        if amp == 0:
            continue
        n_max = r.external_linewidth * abs(amp) ** 2 / (kappa / 2) ** 2
        lo = r.frequency + model.kerr * n_max - probe.red_margin * kappa
        hi = r.frequency + probe.blue_margin * kappa
        if lo <= 0:
            raise ValueError(f"drive amplitude {abs(amp):.3g} would pull the resonance below "
                             "zero frequency; reduce the drive")
        omegas = np.linspace(lo, hi, probe.points)

        results = [integrate_to_steady_state(model, DriveConfig(w, amp), True, tolerances)
                   for w in omegas]
        # unsettled points (critical slowing at a fold) never count as the minimum
        mags = np.array([abs(res.s11) if res.converged else np.inf for res in results])
        i = int(np.argmin(mags))
        best_w, best = omegas[i], results[i]

        if probe.refine:
            a, b = omegas[max(i - 1, 0)], omegas[min(i + 1, omegas.size - 1)]
            cache = {}

            def objective(w):
                res = integrate_to_steady_state(model, DriveConfig(w, amp), True, tolerances)
                cache[w] = res
                return abs(res.s11) if res.converged else 2.0

            opt = minimize_scalar(objective, bounds=(a, b), method="bounded",
                                  options={"xatol": probe.xatol * kappa})
            if opt.fun < abs(best.s11):
                best_w, best = opt.x, cache.get(opt.x) or integrate_to_steady_state(
                    model, DriveConfig(opt.x, amp), True, tolerances)

        up = _sweep(model, omegas, amp, tolerances)
        down = _sweep(model, omegas, amp, tolerances, reverse=True)
        scale = max(np.max(up), np.max(down), 1e-300)
        bistable[j] = np.max(np.abs(up - down)) / scale > probe.hysteresis_tol

        occ[j] = best.state.occupation
        shift[j] = best_w - r.frequency
        converged[j] = best.converged

    return KerrShiftCurve(amplitudes, occ, shift, bistable, converged)
