import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from emspec import formats
from emspec.dynamics import KerrShiftCurve
from emspec.fitting import fit_bare_resonator
from emspec.formats import DataFileError, SchemaError
from emspec.params import FluxCalibration
from emspec.spectra import MechanicalMode, Spectrum, SystemModel
from emspec.synth import generate_anticrossing_map, generate_spectrum
from scenarios import MAP_CAL, MODE, RESONATOR, bare_scenario, crossing_scenario


def write_json(path, doc):
    path.write_text(json.dumps(doc))
    return path


def test_design_round_trip(tmp_path):
    p = write_json(tmp_path / "d.json", {"L_r_H": 11e-9, "C_r_F": 33e-15, "N_SQ": 17})
    d = formats.read_design(p)
    assert (d.inductance, d.capacitance, d.squid_count) == (11e-9, 33e-15, 17)


@pytest.mark.parametrize("missing", ["L_r_H", "C_r_F", "N_SQ"])
def test_design_missing_field_named(tmp_path, missing):
    doc = {"L_r_H": 11e-9, "C_r_F": 33e-15, "N_SQ": 17}
    del doc[missing]
    with pytest.raises(SchemaError, match=missing):
        formats.read_design(write_json(tmp_path / "d.json", doc))


def test_design_wrong_types(tmp_path):
    with pytest.raises(SchemaError, match="N_SQ"):
        formats.read_design(write_json(tmp_path / "d.json",
                                       {"L_r_H": 11e-9, "C_r_F": 33e-15, "N_SQ": 1.5}))
    with pytest.raises(SchemaError):
        formats.read_design(write_json(tmp_path / "d.json",
                                       {"L_r_H": -1.0, "C_r_F": 33e-15, "N_SQ": 1}))
    (tmp_path / "bad.json").write_text("{not json")
    with pytest.raises(DataFileError):
        formats.read_design(tmp_path / "bad.json")


def test_model_round_trip(tmp_path):
    model = SystemModel(RESONATOR, (MODE, MechanicalMode(MODE.frequency * 1.01, 1e5, 2e5)),
                        kerr=-12.5e6)
    formats.write_model(tmp_path / "m.json", model)
    assert formats.read_model(tmp_path / "m.json") == model


def test_model_defaults_and_errors():
    doc = {"resonator": {"frequency_Hz": 6e9, "linewidth_Hz": 1e7, "external_linewidth_Hz": 5e6}}
    model = formats.model_from_dict(doc)
    assert model.modes == () and model.kerr == 0.0
    doc["modes"] = [{"frequency_Hz": 6e9}]
    with pytest.raises(SchemaError, match="linewidth_Hz"):
        formats.model_from_dict(doc)
    with pytest.raises(SchemaError, match="resonator"):
        formats.model_from_dict({})


def test_calibration_round_trip():
    cal = FluxCalibration(2 * math.pi * 8.31e9, 1.7, 0.25)
    back = formats.calibration_from_dict(json.loads(json.dumps(formats.calibration_to_dict(cal))))
    assert back == cal


finite = st.floats(-1e3, 1e3, allow_nan=False)


@settings(max_examples=200, deadline=None)
@given(st.lists(st.tuples(finite, finite), min_size=1, max_size=20))
def test_spectrum_round_trip_is_exact(tmp_path_factory, values):
    f = np.cumsum(np.full(len(values), 1.37e3)) + 5e9
    s = np.array([complex(a, b) for a, b in values])
    path = tmp_path_factory.mktemp("s") / "s.csv"
    formats.write_spectrum(path, Spectrum(f, s))
    back = formats.read_spectrum(path)
    assert back.frequencies.tobytes() == f.tobytes()
    assert back.s11.tobytes() == s.tobytes()


def test_spectrum_header_and_bytes(tmp_path):
    spec = Spectrum([1.0, 2.5], [-1 + 0.5j, complex(0.25, -0.0)])
    formats.write_spectrum(tmp_path / "s.csv", spec)
    assert (tmp_path / "s.csv").read_text() == (
        "frequency_Hz,re_s11,im_s11\n"
        "1.0000000000000000e+00,-1.0000000000000000e+00,5.0000000000000000e-01\n"
        "2.5000000000000000e+00,2.5000000000000000e-01,-0.0000000000000000e+00\n")


def test_spectrum_bad_files(tmp_path):
    p = tmp_path / "s.csv"
    p.write_text("f,re,im\n1,2,3\n")
    with pytest.raises(DataFileError, match="header"):
        formats.read_spectrum(p)
    p.write_text("frequency_Hz,re_s11,im_s11\n1,2\n")
    with pytest.raises(DataFileError, match="line 2"):
        formats.read_spectrum(p)
    p.write_text("frequency_Hz,re_s11,im_s11\n1,x,3\n")
    with pytest.raises(DataFileError):
        formats.read_spectrum(p)
    p.write_text("frequency_Hz,re_s11,im_s11\n2,0,0\n1,0,0\n")
    with pytest.raises(DataFileError):
        formats.read_spectrum(p)


def test_map_round_trip(tmp_path):
    amap = generate_anticrossing_map(crossing_scenario(0.01, 1, rows=4, points=30), MAP_CAL)
    header, payload = formats.write_map(tmp_path / "map", amap, flux_unit="flux quanta")
    assert header.name == "map.json" and payload.name == "map.csv"
    doc = json.loads(header.read_text())
    assert doc["units"] == {"flux_axis": "flux quanta", "frequency_axis": "Hz"}
    assert payload.read_text().splitlines()[0] == "flux_index,frequency_Hz,re_s11,im_s11"
    back = formats.read_map(tmp_path / "map.csv")
    assert back.s11.tobytes() == amap.s11.tobytes()
    assert back.flux_axis.tobytes() == amap.flux_axis.tobytes()
    assert back.calibration == MAP_CAL


def test_map_inconsistent_payload(tmp_path):
    amap = generate_anticrossing_map(crossing_scenario(rows=3, points=10), MAP_CAL)
    header, payload = formats.write_map(tmp_path / "map.json", amap)
    lines = payload.read_text().splitlines()
    payload.write_text("\n".join(lines[:-1]) + "\n")
    with pytest.raises(DataFileError, match="rows"):
        formats.read_map(header)
    payload.unlink()
    with pytest.raises(DataFileError, match="not found"):
        formats.read_map(header)


def test_kerr_curve_round_trip(tmp_path):
    curve = KerrShiftCurve(np.array([0, 1.5, 3.0], complex), np.array([0, 0.5, 1.0]),
                           np.array([0, -1e6, -2.5e6]), np.array([False, False, True]),
                           np.ones(3, bool))
    formats.write_kerr_curve(tmp_path / "k.csv", curve)
    text = (tmp_path / "k.csv").read_text().splitlines()
    assert text[0] == "drive_amplitude,occupation_n_r,shift_Hz,bistable_flag"
    assert text[-1].endswith(",1")
    back = formats.read_kerr_curve(tmp_path / "k.csv")
    np.testing.assert_allclose(back.shifts, curve.shifts, rtol=1e-15)
    assert back.bistable.tolist() == [False, False, True]


def test_fit_result_json(tmp_path):
    res = fit_bare_resonator(generate_spectrum(bare_scenario(0.01, 1)))
    formats.write_fit_result(tmp_path / "fit.json", res)
    doc = json.loads((tmp_path / "fit.json").read_text())
    names = [p["name"] for p in doc["parameters"]]
    assert names == ["omega_r_Hz", "kappa_Hz", "kappa_e_Hz"]
    assert doc["parameters"][1]["value"] == pytest.approx(11e6, rel=0.01)
    assert doc["converged"] is True


def test_non_finite_becomes_null():
    assert json.loads(formats.dump_json({"x": float("nan"), "y": [np.inf, 1.0]})) == {
        "x": None, "y": [None, 1.0]}


def test_atomic_write_leaves_no_temp(tmp_path, monkeypatch):
    target = tmp_path / "out.txt"
    target.write_text("old")

    def boom(src, dst):
        raise OSError("disk full")

    monkeypatch.setattr(formats.os, "replace", boom)
    with pytest.raises(OSError):
        formats.atomic_write(target, "new")
    assert target.read_text() == "old"
    assert [p.name for p in tmp_path.iterdir()] == ["out.txt"]


def test_scenario_parsing(tmp_path):
    model = formats.model_to_dict(SystemModel(RESONATOR, (MODE,)))
    doc = {"kind": "map", "model": model,
           "grid": {"start_Hz": 5.96e9, "stop_Hz": 5.99e9, "points": 100},
           "flux": {"start": 0.16, "stop": 0.17, "points": 10},
           "noise": {"sigma": 0.01, "seed": 9}, "background": [[1, 0], [0.1, -0.1]],
           "calibration": formats.calibration_to_dict(MAP_CAL)}
    parsed = formats.read_scenario(write_json(tmp_path / "s.json", doc))
    scen = parsed["scenario"]
    assert scen.noise.seed == 9 and scen.flux.points == 10
    assert scen.background == (1 + 0j, 0.1 - 0.1j)
    del doc["calibration"]
    with pytest.raises(SchemaError, match="calibration"):
        formats.read_scenario(write_json(tmp_path / "s.json", doc))
    with pytest.raises(SchemaError, match="kind"):
        formats.read_scenario(write_json(tmp_path / "s.json", {"kind": "movie"}))


def test_flux_points(tmp_path):
    p = tmp_path / "f.csv"
    p.write_text("bias_V,frequency_Hz\n0.0,8.0e9\n0.1,7.9e9\n")
    v, w = formats.read_flux_points(p)
    assert v.tolist() == [0.0, 0.1]
    assert w[0] == pytest.approx(2 * math.pi * 8e9)
