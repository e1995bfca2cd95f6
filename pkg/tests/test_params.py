import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from emspec.params import (CONSTANTS, CircuitDesign, FluxCalibration, charging_energy,
                           flux_tuned_frequency, frequency_to_voltage, impedance,
                           kerr_anharmonicity, resonator_frequency, voltage_to_frequency,
                           zero_point_voltage)

TWO_PI = 2 * math.pi
# CODATA 2018 exact values, typed in independently of scipy
H = 6.62607015e-34
E = 1.602176634e-19
HBAR = H / TWO_PI

DEVICE = CircuitDesign(11e-9, 33e-15, 17)


def test_constants_match_codata():
    assert CONSTANTS.hbar == pytest.approx(HBAR, rel=1e-15)
    assert CONSTANTS.electron_charge == E
    assert CONSTANTS.flux_quantum == pytest.approx(H / (2 * E), rel=1e-15)
    assert CONSTANTS.flux_quantum == pytest.approx(2.067833848e-15, rel=1e-9)


@pytest.mark.parametrize("kwargs", [
    dict(inductance=0, capacitance=1e-15),
    dict(inductance=1e-9, capacitance=-1),
    dict(inductance=1e-9, capacitance=1e-15, squid_count=0),
    dict(inductance=float("nan"), capacitance=1e-15),
])
def test_design_rejects_invalid(kwargs):
    with pytest.raises(ValueError):
        CircuitDesign(**kwargs)


def test_device_values():
    # 1/sqrt(11e-9 * 33e-15) / 2pi, sqrt(11e-9/33e-15), e^2/(2C hbar N^2)/2pi
    assert resonator_frequency(DEVICE) / TWO_PI == pytest.approx(8.35346e9, rel=1e-5)
    assert impedance(DEVICE) == pytest.approx(577.350, rel=1e-5)
    assert kerr_anharmonicity(DEVICE) / TWO_PI == pytest.approx(-2.03106e6, rel=1e-5)
    assert charging_energy(DEVICE) / H == pytest.approx(586.977e6, rel=1e-5)


def test_frequency_scaling_and_units():
    assert resonator_frequency(CircuitDesign(1.0, 1.0)) == 1.0
    w = resonator_frequency(DEVICE)
    assert resonator_frequency(CircuitDesign(4 * 11e-9, 33e-15)) == pytest.approx(w / 2)


def test_impedance_identities():
    assert impedance(CircuitDesign(2e-9, 2e-9)) == pytest.approx(1.0)
    assert impedance(CircuitDesign(22e-9, 66e-15)) == pytest.approx(impedance(DEVICE))


def test_kerr_scaling():
    chi = kerr_anharmonicity(DEVICE)
    assert kerr_anharmonicity(CircuitDesign(11e-9, 33e-15, 34)) == pytest.approx(chi / 4)
    assert kerr_anharmonicity(CircuitDesign(11e-9, 66e-15, 17)) == pytest.approx(chi / 2)
    single = CircuitDesign(11e-9, 33e-15, 1)
    assert kerr_anharmonicity(single) == pytest.approx(-E**2 / (2 * 33e-15) / HBAR, rel=1e-12)


def test_flux_tuning_examples():
    wmax = TWO_PI * 8.31e9
    assert flux_tuned_frequency(wmax, 0.0) == wmax
    assert flux_tuned_frequency(wmax, 1 / 6) == pytest.approx(wmax * math.sqrt(0.5), rel=1e-12)
    assert flux_tuned_frequency(wmax, 0.25) == pytest.approx(0.0, abs=1e-6 * wmax)
    with pytest.raises(ValueError):
        flux_tuned_frequency(0.0, 0.1)


def test_voltage_calibration_examples():
    cal = FluxCalibration(TWO_PI * 8.31e9, 3.0, 0.4)
    v0 = -0.4 / 3.0
    assert voltage_to_frequency(cal, v0) == pytest.approx(cal.max_frequency, rel=1e-15)
    v = (math.pi / 3 - 0.4) / 3.0
    assert voltage_to_frequency(cal, v) == pytest.approx(cal.max_frequency * math.sqrt(0.5))
    period = math.pi / cal.gain
    vs = np.linspace(-1, 1, 101)
    assert np.allclose(voltage_to_frequency(cal, vs + period), voltage_to_frequency(cal, vs),
                       rtol=1e-9)


def test_frequency_to_voltage_inverts_principal_branch():
    cal = FluxCalibration(TWO_PI * 8.31e9, 2.0, 0.1)
    w = TWO_PI * np.linspace(5e9, 8e9, 7)
    assert np.allclose(voltage_to_frequency(cal, frequency_to_voltage(cal, w)), w, rtol=1e-12)
    with pytest.raises(ValueError):
        frequency_to_voltage(cal, 2 * cal.max_frequency)


def test_zero_point_voltage():
    # sqrt(hbar * 2pi 8.31 GHz / (2 * 33 fF))
    assert zero_point_voltage(TWO_PI * 8.31e9, 33e-15) == pytest.approx(9.13e-6, rel=2e-3)
    w = TWO_PI * 8e9
    # Z = 1/(wC): quadrupling Z at fixed w means C/4
    assert zero_point_voltage(w, 33e-15 / 4) == pytest.approx(2 * zero_point_voltage(w, 33e-15))
    assert zero_point_voltage(w, 4 * 33e-15) == pytest.approx(zero_point_voltage(w, 33e-15) / 2)
    with pytest.raises(ValueError):
        zero_point_voltage(0.0, 1e-15)


designs = st.builds(
    CircuitDesign,
    st.floats(1e-12, 1e-6),
    st.floats(1e-16, 1e-12),
    st.integers(1, 100),
)


@settings(max_examples=1000, deadline=None)
@given(designs)
def test_impedance_times_frequency_is_inverse_capacitance(d):
    assert impedance(d) * resonator_frequency(d) == pytest.approx(1 / d.capacitance, rel=1e-12)
    assert kerr_anharmonicity(d) < 0


@settings(max_examples=1000, deadline=None)
@given(st.floats(-10, 10))
def test_flux_curve_periodic_and_even(phi):
    wmax = 1.0
    f = flux_tuned_frequency(wmax, phi)
    assert 0 <= f <= wmax
    assert flux_tuned_frequency(wmax, phi + 0.5) == pytest.approx(f, abs=1e-6)
    assert flux_tuned_frequency(wmax, -phi) == f


def test_flux_curve_monotone_on_first_quarter():
    phi = np.linspace(0, 0.25, 2001)
    assert np.all(np.diff(flux_tuned_frequency(1.0, phi)) < 0)
