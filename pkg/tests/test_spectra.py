import math

import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st

from emspec.spectra import (InvalidGridError, MechanicalMode, ResonatorParams, Spectrum,
                            SystemModel, cooperativity, evaluate_spectrum,
                            mechanical_susceptibility, quality_factor,
                            resonator_susceptibility, s11_bare, s11_coupled)

TWO_PI = 2 * math.pi
R = ResonatorParams(TWO_PI * 5.9754e9, TWO_PI * 11e6, TWO_PI * 6.3e6)
M = MechanicalMode(TWO_PI * 5.9754e9, TWO_PI * 220e3, TWO_PI * 1.65e6)


def test_param_validation():
    with pytest.raises(ValueError):
        ResonatorParams(1.0, 1.0, 2.0)
    with pytest.raises(ValueError):
        ResonatorParams(1.0, 0.0, 0.0)
    with pytest.raises(ValueError):
        MechanicalMode(1.0, 0.0)
    with pytest.raises(ValueError):
        MechanicalMode(1.0, 1.0, -1.0)
    with pytest.raises(ValueError):
        SystemModel(R, (M, M))
    with pytest.raises(ValueError):
        SystemModel(R, (), kerr=1.0)


def test_modes_sorted():
    lo = MechanicalMode(1.0, 1.0)
    hi = MechanicalMode(2.0, 1.0)
    assert SystemModel(R, (hi, lo)).modes == (lo, hi)


def test_resonator_susceptibility_examples():
    assert resonator_susceptibility(R.frequency, R) == 1 + 0j
    assert resonator_susceptibility(R.frequency + R.linewidth / 2, R) == pytest.approx(1 / (1 + 1j))
    assert abs(resonator_susceptibility(R.frequency + 1e6 * R.linewidth, R)) < 1e-6


def test_mechanical_susceptibility_examples():
    assert mechanical_susceptibility(M.frequency, M) == 1
    assert mechanical_susceptibility(M.frequency - M.linewidth / 2, M) == pytest.approx(1 / (1 - 1j))
    assert abs(mechanical_susceptibility(M.frequency + 1e6 * M.linewidth, M)) < 1e-6


def test_bare_reflection_examples():
    # -1 + 2 * 6.3 / 11
    assert s11_bare(R.frequency, R) == pytest.approx(0.14545454545454545, abs=1e-15)
    crit = ResonatorParams(1.0, 2.0, 1.0)
    assert s11_bare(1.0, crit) == 0
    dark = ResonatorParams(1.0, 2.0, 0.0)
    assert np.all(s11_bare(np.linspace(0, 3, 11), dark) == -1)


def test_coupled_reflection_on_resonance():
    model = SystemModel(R, (M,))
    c = cooperativity(M, R)
    eta = 6.3 / 11
    assert s11_coupled(R.frequency, model) == pytest.approx(-1 + 2 * eta / (1 + c), abs=1e-12)
    # with C = 4.5 exactly the value is -0.7917
    m45 = MechanicalMode(M.frequency, M.linewidth, math.sqrt(4.5 * R.linewidth * M.linewidth / 4))
    assert s11_coupled(R.frequency, SystemModel(R, (m45,))).real == pytest.approx(-0.79174, abs=1e-5)


def test_decoupled_is_bitwise_bare():
    w = R.frequency + np.linspace(-3, 3, 1001) * R.linewidth
    model = SystemModel(R, (MechanicalMode(M.frequency, M.linewidth, 0.0),))
    assert np.array_equal(s11_coupled(w, model), s11_bare(w, R))


def test_far_detuned_mode_barely_matters():
    far = MechanicalMode(R.frequency + 100 * R.linewidth, M.linewidth, M.coupling)
    w = R.frequency + np.linspace(-0.5, 0.5, 501) * R.linewidth
    diff = np.abs(s11_coupled(w, SystemModel(R, (far,))) - s11_bare(w, R))
    assert diff.max() < 1e-3


def test_cooperativity_and_quality_factor():
    assert cooperativity(M, R) == pytest.approx(4 * 1.65**2 / (11 * 0.22), rel=1e-12)
    assert cooperativity(M, R) == pytest.approx(4.5, abs=0.05)
    assert cooperativity(MechanicalMode(1.0, 1.0, 0.0), R) == 0
    doubled = MechanicalMode(M.frequency, M.linewidth, 2 * M.coupling)
    assert cooperativity(doubled, R) == pytest.approx(4 * cooperativity(M, R))
    assert quality_factor(M) == pytest.approx(5.9754e9 / 220e3, rel=1e-12)
    assert quality_factor(MechanicalMode(3.0, 3.0)) == 1
    assert quality_factor(MechanicalMode(M.frequency, M.linewidth / 2)) == pytest.approx(
        2 * quality_factor(M))


def test_evaluate_spectrum():
    sp = evaluate_spectrum(SystemModel(R), [5.9754e9])
    assert len(sp) == 1
    assert sp.s11[0] == pytest.approx(s11_bare(R.frequency, R), abs=1e-15)
    sp = evaluate_spectrum(SystemModel(R, (M,)), np.linspace(5.95e9, 6.0e9, 77))
    assert len(sp) == 77
    with pytest.raises(InvalidGridError):
        evaluate_spectrum(SystemModel(R), np.linspace(6e9, 5e9, 5))
    with pytest.raises(InvalidGridError):
        evaluate_spectrum(SystemModel(R), [])


def test_spectrum_container_validation():
    with pytest.raises(ValueError):
        Spectrum([1.0, 2.0], [0j])
    with pytest.raises(ValueError):
        Spectrum([1.0, 2.0], [0j, np.nan])
    assert np.allclose(Spectrum([1.0], [0j]).angular_frequencies, [TWO_PI])


# ----------------------------------------------------------------------------
# randomized invariants

@st.composite
def models(draw, max_modes=4):
    w_r = draw(st.floats(1e9, 1e10)) * TWO_PI
    kappa = w_r * draw(st.floats(1e-5, 1e-2))
    ke = kappa * draw(st.floats(0, 1))
    modes = []
    for _ in range(draw(st.integers(0, max_modes))):
        modes.append(MechanicalMode(w_r + kappa * draw(st.floats(-5, 5)),
                                    kappa * draw(st.floats(1e-4, 1)),
                                    kappa * draw(st.floats(0, 2))))
    freqs = [m.frequency for m in modes]
    if len(set(freqs)) != len(freqs):
        modes = modes[:1]
    return SystemModel(ResonatorParams(w_r, kappa, ke), tuple(modes))


@settings(max_examples=1000, deadline=None)
@given(models(), st.floats(-20, 20))
def test_passivity(model, detuning):
    r = model.resonator
    assert abs(s11_coupled(r.frequency + detuning * r.linewidth, model)) <= 1 + 1e-12


@settings(max_examples=200, deadline=None)
@given(models())
def test_asymptotic_full_reflection(model):
    r = model.resonator
    w = r.frequency + 1e4 * r.linewidth
    assert abs(s11_coupled(w, model) + 1) < 1e-3


@settings(max_examples=1000, deadline=None)
@given(models(max_modes=0), st.floats(0, 50))
def test_bare_magnitude_symmetric(model, delta):
    r = model.resonator
    d = delta * r.linewidth
    assert abs(s11_bare(r.frequency + d, r)) == pytest.approx(abs(s11_bare(r.frequency - d, r)),
                                                              abs=1e-12)


@settings(max_examples=1000, deadline=None)
@given(st.floats(-5, 5), st.floats(1e-3, 1), st.floats(1e-3, 3))
def test_poles_are_coupled_mode_eigenvalues(det, gam_ratio, g_ratio):
    """Roots of ``1 + C chi_m chi_r`` are the normal modes of the 2x2 problem.

    With the susceptibility convention used here the poles sit in the upper
    half plane, at the eigenvalues of ``[[w_r + i k/2, g], [g, w_m + i y/2]]``.
    """
    kappa = 1.0
    w_r, w_m = 10.0, 10.0 + det
    gam, g = gam_ratio * kappa, g_ratio * kappa
    c = 4 * g**2 / (kappa * gam)
    # keep away from the exceptional point, where both roots and eigenvalues
    # are only accurate to the square root of machine precision
    half_gap = ((w_r - w_m) + 0.5j * (kappa - gam)) / 2
    assume(abs(half_gap**2 + g**2) > 1e-6 * kappa**2)
    # (2i(w - w_r)/k + 1)(2i(w - w_m)/y + 1) + C = 0, as a quadratic in w
    a_r, b_r = 2j / kappa, 1 - 2j * w_r / kappa
    a_m, b_m = 2j / gam, 1 - 2j * w_m / gam
    roots = np.roots([a_r * a_m, a_r * b_m + b_r * a_m, b_r * b_m + c])
    eig = np.linalg.eigvals(np.array([[w_r + 0.5j * kappa, g], [g, w_m + 0.5j * gam]]))
    # pair each eigenvalue with its nearest root
    matched = roots[[int(np.argmin(np.abs(roots - e))) for e in eig]]
    assert np.allclose(matched, eig, rtol=1e-9, atol=1e-9 * w_r)
    # each root zeroes the denominator (evaluated near a pole of chi_m, so
    # the tolerance absorbs the conditioning of that evaluation)
    r = ResonatorParams(w_r, kappa, 0.5)
    m = MechanicalMode(w_m, gam, g)
    for z in roots:
        chi_r = 1 / (2j * (z - w_r) / kappa + 1)
        chi_m = 1 / (2j * (z - w_m) / gam + 1)
        assert abs(1 + cooperativity(m, r) * chi_m * chi_r) < 1e-6


def test_decoupled_limit_linear_in_cooperativity():
    w = R.frequency + np.linspace(-2, 2, 2001) * R.linewidth
    devs = []
    cs = np.array([1e-3, 1e-4, 1e-5])
    for c in cs:
        g = math.sqrt(c * R.linewidth * M.linewidth / 4)
        model = SystemModel(R, (MechanicalMode(M.frequency, M.linewidth, g),))
        devs.append(np.max(np.abs(s11_coupled(w, model) - s11_bare(w, R))))
    ratios = np.array(devs) / cs
    assert np.allclose(ratios, ratios[-1], rtol=1e-2)
