"""Fit a single noisy reflection trace of the bare resonator.

Run with ``python3 demos/bare_resonator_fit.py``.
"""
import math

import numpy as np

from emspec import ResonatorParams, SystemModel, fit_bare_resonator
from emspec.synth import FrequencyGrid, NoiseSpec, ScenarioSpec, generate_spectrum

TWO_PI = 2 * math.pi

# A 5.9 GHz resonator, slightly over-coupled.
truth = ResonatorParams(TWO_PI * 5.90e9, TWO_PI * 11e6, TWO_PI * 6.3e6)
scenario = ScenarioSpec(SystemModel(truth), FrequencyGrid(5.85e9, 5.95e9, 2001),
                        NoiseSpec(sigma=0.01, seed=3))
trace = generate_spectrum(scenario)
print(f"{trace.frequencies.size} points, deepest |S11| = {np.abs(trace.s11).min():.3f}")

# No starting point needed: the guess comes from the dip itself.
fit = fit_bare_resonator(trace)
print(f"converged: {fit.converged}  (optimality {fit.optimality:.1e})")
for name, true in zip(fit.names, (truth.frequency, truth.linewidth, truth.external_linewidth)):
    value, err = fit[name], fit.error(name)
    print(f"  {name:8s} {value / TWO_PI:16.1f} Hz  +- {err / TWO_PI:8.1f}"
          f"   truth {true / TWO_PI:16.1f}   pull {(value - true) / err:+.2f}")

eta = fit["kappa_e"] / fit["kappa"]
print(f"coupling efficiency kappa_e/kappa = {eta:.3f}")
