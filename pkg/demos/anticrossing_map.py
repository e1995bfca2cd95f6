"""Extract a mechanical mode from a flux-swept anti-crossing.

The resonator is tuned through a mechanical mode by flux. Each row of the
map is one reflection trace; a joint fit of all rows recovers the mode.

Run with ``python3 demos/anticrossing_map.py``.
"""
import math

import numpy as np

from emspec import (FluxCalibration, MechanicalMode, ResonatorParams, SystemModel,
                    fit_anticrossing)
from emspec.fitting import model_from_fit
from emspec.spectra import cooperativity, quality_factor
from emspec.synth import FrequencyGrid, NoiseSpec, ScenarioSpec, generate_anticrossing_map

TWO_PI = 2 * math.pi

resonator = ResonatorParams(TWO_PI * 5.90e9, TWO_PI * 11e6, TWO_PI * 6.3e6)
mode = MechanicalMode(TWO_PI * 5.9754e9, TWO_PI * 220e3, TWO_PI * 1.65e6)
cal = FluxCalibration.from_flux_quanta(TWO_PI * 8.31e9)

# Flux window that sweeps the resonator about 25 MHz across the mode.
centre = math.acos((mode.frequency / cal.max_frequency) ** 2) / TWO_PI
flux = FrequencyGrid(centre - 4e-4, centre + 4e-4, 50)
f0 = mode.frequency / TWO_PI
scenario = ScenarioSpec(SystemModel(resonator, (mode,)),
                        FrequencyGrid(f0 - 12.5e6, f0 + 12.5e6, 500),
                        NoiseSpec(sigma=0.02, seed=11), flux=flux)
amap = generate_anticrossing_map(scenario, cal)
print(f"map: {amap.s11.shape[0]} flux rows x {amap.s11.shape[1]} frequencies")

# The row closest to the crossing shows two dips split by about 2g.
row = np.argmin(np.abs(amap.flux_axis - centre))
depth = np.abs(amap.s11[row])
print(f"row {row}: deepest point at {amap.frequency_axis[depth.argmin()] / 1e9:.6f} GHz")

fit = fit_anticrossing(amap, cal)
print(f"converged: {fit.converged}")
for name in fit.names:
    print(f"  {name:8s} {fit[name] / TWO_PI / 1e6:12.4f} MHz  +- {fit.error(name) / TWO_PI / 1e3:.2f} kHz")

fitted = model_from_fit(fit)
m, r = fitted.modes[0], fitted.resonator
print(f"Q_m = {quality_factor(m):.0f}   C = {cooperativity(m, r):.2f}"
      f"   (truth Q_m {quality_factor(mode):.0f}, C {cooperativity(mode, resonator):.2f})")
