"""Seeded synthetic measurement data.

Noise
-----
Additive circular complex Gaussian noise, independent per point, with
``E|n|^2 = sigma^2`` (each quadrature has standard deviation
``sigma/sqrt(2)``).

Random numbers (``RNG_NAME``)
-----------------------------
Every noise stream is a Philox-4x64-10 counter generator keyed with the
128-bit integer ``seed + (stream << 64)``. The stream index is 0 for a
single spectrum or Kerr sweep and ``row + 1`` for row ``row`` of a map, so
rows can be produced independently and in any order. Map ``i`` of a survey
adds ``(i + 1) << 32`` to its row streams. Raw 64-bit outputs
``x`` become uniforms ``((x >> 11) + 1) * 2**-53`` in (0, 1], and consecutive
pairs ``(u1, u2)`` become a normal pair by Box-Muller,
``sqrt(-2 ln u1) * (cos 2 pi u2, sin 2 pi u2)``, used as the real and
imaginary part of one noise sample. Nothing depends on NumPy's own normal
sampler, so the stream can be reproduced in any language with a Philox
implementation.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .dynamics import ProbeScan, SteadyStateTolerances, kerr_shift_curve
from .fitting import AnticrossingMap
from .params import FluxCalibration, frequency_to_voltage, voltage_to_frequency
from .spectra import (MechanicalMode, ResonatorParams, Spectrum, SystemModel,
                      evaluate_spectrum)

__all__ = [
    "RNG_NAME",
    "NoiseSpec",
    "FrequencyGrid",
    "ScenarioSpec",
    "ClusterStatistics",
    "KerrSweep",
    "complex_noise",
    "background",
    "generate_spectrum",
    "generate_anticrossing_map",
    "generate_mode_cluster",
    "generate_survey_maps",
    "generate_kerr_sweep",
]

RNG_NAME = "philox4x64-10/box-muller/v1"
TWO_PI = 2 * np.pi
_MASK64 = (1 << 64) - 1


@dataclass(frozen=True)
class NoiseSpec:
    sigma: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if not self.sigma >= 0:
            raise ValueError("sigma must be >= 0")
        if not 0 <= int(self.seed) <= _MASK64:
            raise ValueError("seed must fit in 64 unsigned bits")


@dataclass(frozen=True)
class FrequencyGrid:
    """Evenly spaced probe grid in Hz."""

    start: float
    stop: float
    points: int

    def __post_init__(self):
        if not (np.isfinite(self.start) and np.isfinite(self.stop)):
            raise ValueError("grid range must be finite")
        if self.points < 1 or (self.points > 1 and not self.stop > self.start):
            raise ValueError("grid needs stop > start and at least one point")

    def values(self) -> np.ndarray:
        return np.linspace(self.start, self.stop, int(self.points))


@dataclass(frozen=True)
class ScenarioSpec:
    """Everything needed to synthesize one dataset.

    ``background`` holds complex polynomial coefficients ``c_k`` of a smooth
    multiplicative ripple ``sum_k c_k x**k`` with ``x`` running from -1 to 1
    across the probe window; ``None`` means no background. ``flux`` is the
    row axis of an anti-crossing map (same unit as the calibration).
    """

    model: SystemModel
    grid: FrequencyGrid
    noise: NoiseSpec = NoiseSpec()
    background: tuple | None = None
    flux: FrequencyGrid | None = None


def _uniforms(seed: int, stream: int, count: int) -> np.ndarray:
    bitgen = np.random.Philox(key=(int(seed) & _MASK64) + (int(stream) << 64))
    raw = np.asarray(bitgen.random_raw(count), dtype=np.uint64)
    return ((raw >> np.uint64(11)).astype(np.float64) + 1.0) * 2.0**-53


def complex_noise(sigma: float, size: int, seed: int, stream: int = 0) -> np.ndarray:
    """``size`` samples of circular complex Gaussian noise with ``E|n|^2 = sigma^2``."""
    if size == 0 or sigma == 0:
        return np.zeros(size, complex)
    u = _uniforms(seed, stream, 2 * size).reshape(size, 2)
    radius = np.sqrt(-2.0 * np.log(u[:, 0]))
    phase = TWO_PI * u[:, 1]
    return (sigma / np.sqrt(2)) * radius * (np.cos(phase) + 1j * np.sin(phase))


def background(frequencies, coefficients) -> np.ndarray:
    f = np.asarray(frequencies, dtype=float)
    if f.size > 1:
        x = 2 * (f - f[0]) / (f[-1] - f[0]) - 1
    else:
        x = np.zeros_like(f)
    out = np.zeros(f.shape, complex)
    for k, c in enumerate(coefficients):
        out = out + complex(c) * x**k
    return out


def _decorate(grid, s11, scenario, stream):
    if scenario.background is not None:
        s11 = s11 * background(grid, scenario.background)
    if scenario.noise.sigma > 0:
        s11 = s11 + complex_noise(scenario.noise.sigma, s11.size, scenario.noise.seed, stream)
    return s11


def generate_spectrum(scenario: ScenarioSpec) -> Spectrum:
    """Model spectrum times optional background plus seeded noise."""
    clean = evaluate_spectrum(scenario.model, scenario.grid.values())
    s11 = _decorate(clean.frequencies, clean.s11, scenario, 0)
    return Spectrum(clean.frequencies, s11,
                    {"sigma": scenario.noise.sigma, "seed": scenario.noise.seed, "rng": RNG_NAME})


def generate_anticrossing_map(scenario: ScenarioSpec, cal: FluxCalibration,
                              stream_offset: int = 0) -> AnticrossingMap:
    """Rows of reflection spectra with the resonator tuned along the flux axis.

    The resonator frequency of each row follows the calibration; every other
    model parameter is held fixed. If no mechanical mode lies between the
    lowest and highest tuned frequency, ``metadata["warnings"]`` says so.
    """
    if scenario.flux is None:
        raise ValueError("an anti-crossing scenario needs a flux axis")
    flux = scenario.flux.values()
    grid = scenario.grid.values()
    omega_r = np.asarray(voltage_to_frequency(cal, flux), float)
    rows = np.empty((flux.size, grid.size), complex)
    for j, w in enumerate(omega_r):
        model = scenario.model.with_resonator_frequency(float(w))
        rows[j] = _decorate(grid, evaluate_spectrum(model, grid).s11, scenario,
                            stream_offset + j + 1)

    warnings = []
    lo, hi = omega_r.min(), omega_r.max()
    if not any(lo <= m.frequency <= hi for m in scenario.model.modes):
        warnings.append("tuning range does not cross any mechanical mode")
    meta = {"sigma": scenario.noise.sigma, "seed": scenario.noise.seed, "rng": RNG_NAME,
            "warnings": warnings}
    return AnticrossingMap(flux, grid, rows, cal, meta)


@dataclass(frozen=True)
class ClusterStatistics:
    """Shape of a synthetic mechanical spectrum.

    Mode frequencies are drawn around ``clusters`` uniformly placed centres
    with Gaussian spread ``cluster_width`` (rad/s), at least
    ``min_spacing`` apart. Quality factors are log-uniform in
    ``q_range``; couplings log-normal around ``coupling`` with log-sigma
    ``coupling_spread``. If ``strong_coupling`` is set, the mode closest to
    the band centre gets that coupling instead.
    """

    clusters: int = 3
    cluster_width: float = TWO_PI * 40e6
    min_spacing: float = TWO_PI * 30e6
    q_range: tuple = (1e4, 5e4)
    coupling: float = TWO_PI * 100e3
    coupling_spread: float = 0.3
    strong_coupling: float | None = TWO_PI * 1.6e6
    seed: int = 0


def generate_mode_cluster(count: int, band: tuple, statistics: ClusterStatistics = ClusterStatistics(),
                          resonator: ResonatorParams | None = None, kerr: float = 0.0) -> SystemModel:
    """Draw a clustered set of ``count`` mechanical modes inside ``band`` (rad/s)."""
    lo, hi = map(float, band)
    if not (0 < lo < hi):
        raise ValueError("band must be (low, high) with 0 < low < high")
    if resonator is None:
        resonator = ResonatorParams((lo + hi) / 2, TWO_PI * 11e6, TWO_PI * 6.3e6)
    if count <= 0:
        return SystemModel(resonator, (), kerr)

    rng = np.random.Generator(np.random.Philox(key=int(statistics.seed) & _MASK64))
    n_clusters = max(1, min(statistics.clusters, count))
    margin = min(statistics.cluster_width, (hi - lo) / 4)
    centres = rng.uniform(lo + margin, hi - margin, n_clusters)

    freqs = []
    attempts = 0
    while len(freqs) < count:
        attempts += 1
        if attempts > 10_000 * count:
            raise ValueError("cannot place modes with the requested minimum spacing")
        c = centres[len(freqs) % n_clusters]
        f = rng.normal(c, statistics.cluster_width)
        if not lo <= f <= hi:
            continue
        if any(abs(f - other) < statistics.min_spacing for other in freqs):
            continue
        freqs.append(f)
    freqs = np.sort(freqs)

    qlo, qhi = statistics.q_range
    q = np.exp(rng.uniform(np.log(qlo), np.log(qhi), count))
    g = statistics.coupling * np.exp(rng.normal(0.0, statistics.coupling_spread, count))
    if statistics.strong_coupling is not None:
        g[int(np.argmin(np.abs(freqs - (lo + hi) / 2)))] = statistics.strong_coupling
    modes = tuple(MechanicalMode(float(f), float(f / qq), float(gg))
                  for f, qq, gg in zip(freqs, q, g))
    return SystemModel(resonator, modes, kerr)


def generate_survey_maps(model: SystemModel, cal: FluxCalibration, *, window: float = TWO_PI * 25e6,
                         points: int = 500, flux_rows: int = 50,
                         tuning_span: float = TWO_PI * 30e6, noise: NoiseSpec = NoiseSpec(),
                         background=None) -> list:
    """One anti-crossing map per mechanical mode of ``model``.

    Map ``i`` probes a ``window`` (rad/s) centred on mode ``i`` while the
    bias tunes the resonator over ``tuning_span`` around it. Each map keeps
    only the modes inside its own probe window. Modes outside it pull the
    resonator dispersively by ``g**2/detuning``, which a calibration curve
    measured on the device would already contain.
    """
    maps = []
    reach = window / 2
    for i, mode in enumerate(model.modes):
        centre = mode.frequency
        local = SystemModel(model.resonator,
                            tuple(m for m in model.modes if abs(m.frequency - centre) <= reach),
                            model.kerr)
        v = frequency_to_voltage(cal, [centre + tuning_span / 2, centre - tuning_span / 2])
        lo, hi = float(min(v)), float(max(v))
        f0 = (centre - window / 2) / TWO_PI
        f1 = (centre + window / 2) / TWO_PI
        scenario = ScenarioSpec(local, FrequencyGrid(f0, f1, points), noise, background,
                                FrequencyGrid(lo, hi, flux_rows))
        amap = generate_anticrossing_map(scenario, cal, stream_offset=(i + 1) << 32)
        amap.metadata["mode_index"] = i
        maps.append(amap)
    return maps


@dataclass(frozen=True)
class KerrSweep:
    """Drive-power sweep: ``shifts`` are in rad/s, ``powers`` are ``|alpha_in|**2``."""

    amplitudes: np.ndarray
    powers: np.ndarray
    occupations: np.ndarray
    shifts: np.ndarray
    bistable: np.ndarray
    converged: np.ndarray = field(default=None)


def generate_kerr_sweep(model: SystemModel, amplitudes, noise: NoiseSpec = NoiseSpec(),
                        probe: ProbeScan = ProbeScan(),
                        tolerances: SteadyStateTolerances = SteadyStateTolerances()) -> KerrSweep:
    """Resonance pulls from the mean-field oracle with seeded additive noise.

    ``noise.sigma`` is the standard deviation of the pull noise in units of
    the resonator linewidth. Zero-amplitude points stay exactly zero.
    """
    curve = kerr_shift_curve(model, amplitudes, probe, tolerances)
    shifts = curve.shifts.copy()
    if noise.sigma > 0:
        u = _uniforms(noise.seed, 0, 2 * shifts.size).reshape(-1, 2)
        normal = np.sqrt(-2.0 * np.log(u[:, 0])) * np.cos(TWO_PI * u[:, 1])
        shifts = shifts + noise.sigma * model.resonator.linewidth * normal
        shifts[curve.amplitudes == 0] = 0.0
    return KerrSweep(curve.amplitudes, curve.powers, curve.occupations, shifts,
                     curve.bistable, curve.converged)
