"""Survey a cluster of mechanical modes, one anti-crossing map per mode.

A random but seeded cluster of nine modes is placed across the tuning band.
Each mode gets its own map. The maps are fitted in parallel and the
results come back as one table sorted by frequency.

Run with ``python3 demos/mode_survey.py``.
"""
import math

from emspec import FluxCalibration, mode_survey
from emspec.synth import ClusterStatistics, NoiseSpec, generate_mode_cluster, generate_survey_maps

TWO_PI = 2 * math.pi

cal = FluxCalibration.from_flux_quanta(TWO_PI * 8.31e9)
band = (TWO_PI * 5.9e9, TWO_PI * 6.5e9)
model = generate_mode_cluster(9, band, ClusterStatistics(seed=5))
maps = generate_survey_maps(model, cal, noise=NoiseSpec(sigma=0.001, seed=1))

survey = mode_survey(maps, cal, max_workers=4)
print(f"{len(survey)} modes fitted, {len(survey.failures)} failures")
print("  f_m (GHz)      g (MHz)   gamma (kHz)       Q_m       C")
truth = sorted(model.modes, key=lambda m: m.frequency)
for row, mode in zip(survey.rows, truth):
    print(f"{row['omega_m'] / TWO_PI / 1e9:11.6f} {row['g'] / TWO_PI / 1e6:12.4f}"
          f" {row['gamma'] / TWO_PI / 1e3:12.2f} {row['Q_m']:9.0f} {row['C']:7.2f}"
          f"   (g truth {mode.coupling / TWO_PI / 1e6:.4f})")
