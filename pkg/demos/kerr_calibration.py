"""Calibrate intracavity photon number from Kerr pulls of the resonance.

Stronger driving pulls the resonance down in frequency. While the pull is
small it grows linearly with power, and the slope converts probe power
to photon number. At larger occupation the response bends and then turns
bistable.

Run with ``python3 demos/kerr_calibration.py`` (takes a few seconds).
"""
import math

import numpy as np

from emspec import ResonatorParams, SystemModel
from emspec.fitting import fit_kerr_calibration
from emspec.synth import generate_kerr_sweep

TWO_PI = 2 * math.pi

resonator = ResonatorParams(TWO_PI * 5.90e9, TWO_PI * 11e6, TWO_PI * 6.3e6)
kerr = -TWO_PI * 2.0e6
model = SystemModel(resonator, (), kerr)

# Amplitudes chosen so |kerr| * n spans 0.005 to 2 linewidths.
kappa = resonator.linewidth
load = np.array([0.005, 0.01, 0.02, 0.05, 0.5, 1.0, 1.5, 2.0])
amps = np.sqrt(load * kappa / abs(kerr) * (kappa / 2) ** 2 / resonator.external_linewidth)
sweep = generate_kerr_sweep(model, np.concatenate([[0.0], amps]))

print(" |kerr| n / kappa    pull (MHz)   pull/(kerr n)   bistable")
for n, shift, flag in zip(sweep.occupations[1:], sweep.shifts[1:], sweep.bistable[1:]):
    print(f"{abs(kerr) * n / kappa:16.3f} {shift / TWO_PI / 1e6:13.4f} "
          f"{shift / (kerr * n):15.3f}   {bool(flag)}")

cal = fit_kerr_calibration(sweep.powers, sweep.shifts, kerr, convention="mean_field")
name = cal.names[0]
print(f"weak-drive calibration: {name} = {cal[name]:.4g} +- {cal.error(name):.2g}")
print(f"expected 4 kappa_e / kappa^2 = {4 * resonator.external_linewidth / kappa**2:.4g}")
