"""Reflection spectroscopy of a tunable microwave resonator coupled to mechanical modes.

Modules
-------
params    circuit quantities and flux tuning
spectra   closed-form reflection
dynamics  mean-field time evolution and the Kerr pull
fitting   parameter extraction
synth     seeded synthetic data
formats   file formats
cli       command-line interface
"""
from . import dynamics, fitting, params, spectra, synth
from .dynamics import DriveConfig, integrate_to_steady_state, kerr_shift_curve
from .fitting import (AnticrossingMap, FitResult, fit_anticrossing, fit_bare_resonator,
                      fit_flux_calibration, fit_kerr_calibration, mode_survey)
from .params import CircuitDesign, FluxCalibration
from .spectra import MechanicalMode, ResonatorParams, Spectrum, SystemModel, evaluate_spectrum

__version__ = "0.1.0"
