"""File formats.

Everything on disk is in Hz (``omega / 2 pi``); everything in memory is in
rad/s. The conversion happens here and nowhere else.

Spectrum CSV
    ``frequency_Hz,re_s11,im_s11`` with a header row.
Map
    A JSON header ``{"flux_axis", "frequency_axis", "units", "payload",
    "calibration", "metadata"}`` next to a CSV payload
    ``flux_index,frequency_Hz,re_s11,im_s11`` in row-major order.
Kerr curve CSV
    ``drive_amplitude,occupation_n_r,shift_Hz,bistable_flag``.
Flux calibration points CSV
    ``bias_V,frequency_Hz``.

Floats are written as ``%.16e`` (17 significant digits), which round-trips
every double exactly. All writers replace the target atomically.
"""
from __future__ import annotations

import csv
import io
import json
import math
import os
import tempfile
from pathlib import Path

import numpy as np

from .dynamics import KerrShiftCurve
from .fitting import AnticrossingMap, FitResult
from .params import CircuitDesign, FluxCalibration
from .spectra import MechanicalMode, ResonatorParams, Spectrum, SystemModel
from .synth import ClusterStatistics, FrequencyGrid, NoiseSpec, ScenarioSpec

__all__ = [
    "SchemaError",
    "DataFileError",
    "atomic_write",
    "read_design",
    "read_calibration",
    "calibration_to_dict",
    "model_from_dict",
    "model_to_dict",
    "read_model",
    "write_model",
    "write_spectrum",
    "read_spectrum",
    "write_map",
    "read_map",
    "write_kerr_curve",
    "read_kerr_curve",
    "read_flux_points",
    "fit_result_to_dict",
    "write_fit_result",
    "read_scenario",
]

TWO_PI = 2 * np.pi
FLOAT = "%.16e"

# fit parameters that are not angular frequencies or rates
_DIMENSIONLESS = {"eta_e": "1", "gain": "rad/V", "offset": "rad",
                  "photons_per_unit_power": "photons per unit power"}


class SchemaError(ValueError):
    """A JSON input lacks a field or has one of the wrong type."""


class DataFileError(ValueError):
    """A data file cannot be parsed."""


def atomic_write(path, text: str) -> Path:
    """Write ``text`` to a temporary file in the target directory, then rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def _load_json(path) -> dict:
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise DataFileError(f"{path}: not valid JSON ({exc})") from exc
    if not isinstance(doc, dict):
        raise SchemaError(f"{path}: top level must be a JSON object")
    return doc


def _field(doc: dict, name: str, kind=float, where: str = ""):
    if name not in doc:
        raise SchemaError(f"missing field {name!r}{where}")
    value = doc[name]
    if kind is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise SchemaError(f"field {name!r}{where} must be an integer")
        return value
    if kind is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise SchemaError(f"field {name!r}{where} must be a number")
        return float(value)
    return value


def _fmt(x) -> str:
    return FLOAT % x


def _json_safe(obj):
    """Plain JSON types; non-finite floats become null."""
    if isinstance(obj, dict):
        return {str(k): _json_safe(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_json_safe(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _json_safe(obj.tolist())
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        return float(obj) if math.isfinite(obj) else None
    if isinstance(obj, complex):
        return [_json_safe(obj.real), _json_safe(obj.imag)]
    if obj is None or isinstance(obj, str):
        return obj
    return str(obj)


def dump_json(obj) -> str:
    return json.dumps(_json_safe(obj), indent=2, sort_keys=False) + "\n"


# ----------------------------------------------------------------------------
# design, calibration, model


def read_design(path) -> CircuitDesign:
    doc = _load_json(path)
    where = f" in {Path(path).name}"
    L = _field(doc, "L_r_H", float, where)
    C = _field(doc, "C_r_F", float, where)
    N = _field(doc, "N_SQ", int, where)
    try:
        return CircuitDesign(L, C, N)
    except ValueError as exc:
        raise SchemaError(str(exc)) from exc


def calibration_from_dict(doc: dict, where: str = "") -> FluxCalibration:
    try:
        return FluxCalibration(TWO_PI * _field(doc, "omega_max_Hz", float, where),
                               _field(doc, "G_rad_per_V", float, where),
                               _field(doc, "phi_offset_rad", float, where))
    except SchemaError:
        raise
    except ValueError as exc:
        raise SchemaError(str(exc)) from exc


def calibration_to_dict(cal: FluxCalibration) -> dict:
    return {"omega_max_Hz": cal.max_frequency / TWO_PI, "G_rad_per_V": cal.gain,
            "phi_offset_rad": cal.offset}


def read_calibration(path) -> FluxCalibration:
    return calibration_from_dict(_load_json(path), f" in {Path(path).name}")


def model_to_dict(model: SystemModel) -> dict:
    r = model.resonator
    return {
        "resonator": {"frequency_Hz": r.frequency / TWO_PI,
                      "linewidth_Hz": r.linewidth / TWO_PI,
                      "external_linewidth_Hz": r.external_linewidth / TWO_PI},
        "modes": [{"frequency_Hz": m.frequency / TWO_PI, "linewidth_Hz": m.linewidth / TWO_PI,
                   "coupling_Hz": m.coupling / TWO_PI} for m in model.modes],
        "kerr_Hz": model.kerr / TWO_PI,
    }


def model_from_dict(doc: dict) -> SystemModel:
    """Model from its JSON form; ``modes`` and ``kerr_Hz`` are optional."""
    r = _field(doc, "resonator", dict)
    if not isinstance(r, dict):
        raise SchemaError("field 'resonator' must be an object")
    try:
        res = ResonatorParams(TWO_PI * _field(r, "frequency_Hz", where=" of resonator"),
                              TWO_PI * _field(r, "linewidth_Hz", where=" of resonator"),
                              TWO_PI * _field(r, "external_linewidth_Hz", where=" of resonator"))
        modes = []
        for k, m in enumerate(doc.get("modes", [])):
            where = f" of modes[{k}]"
            modes.append(MechanicalMode(TWO_PI * _field(m, "frequency_Hz", where=where),
                                        TWO_PI * _field(m, "linewidth_Hz", where=where),
                                        TWO_PI * float(m.get("coupling_Hz", 0.0))))
        kerr = TWO_PI * float(doc.get("kerr_Hz", 0.0))
        return SystemModel(res, tuple(modes), kerr)
    except SchemaError:
        raise
    except (ValueError, TypeError, AttributeError) as exc:
        raise SchemaError(f"invalid model: {exc}") from exc


def read_model(path) -> SystemModel:
    return model_from_dict(_load_json(path))


def write_model(path, model: SystemModel) -> Path:
    return atomic_write(path, dump_json(model_to_dict(model)))


# ----------------------------------------------------------------------------
# spectra and maps


def _csv_rows(header, columns) -> str:
    buf = io.StringIO()
    buf.write(",".join(header) + "\n")
    for row in zip(*columns):
        buf.write(",".join(v if isinstance(v, str) else _fmt(v) for v in row) + "\n")
    return buf.getvalue()


def _read_table(path, header) -> list:
    try:
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
    except UnicodeDecodeError as exc:
        raise DataFileError(f"{path}: not a text file") from exc
    if not rows or [c.strip() for c in rows[0]] != list(header):
        raise DataFileError(f"{path}: expected header {','.join(header)}")
    body = [r for r in rows[1:] if r]
    for i, r in enumerate(body, start=2):
        if len(r) != len(header):
            raise DataFileError(f"{path}: line {i} has {len(r)} fields, expected {len(header)}")
    return body


def _floats(path, body, col):
    try:
        return np.array([float(r[col]) for r in body])
    except ValueError as exc:
        raise DataFileError(f"{path}: {exc}") from exc


def _complex(re, im):
    # re + 1j*im would turn -0.0 imaginary parts into +0.0
    out = np.empty(re.shape, complex)
    out.real, out.imag = re, im
    return out


SPECTRUM_HEADER = ("frequency_Hz", "re_s11", "im_s11")


def write_spectrum(path, spectrum: Spectrum) -> Path:
    s = spectrum.s11
    return atomic_write(path, _csv_rows(SPECTRUM_HEADER, (spectrum.frequencies, s.real, s.imag)))


def read_spectrum(path) -> Spectrum:
    body = _read_table(path, SPECTRUM_HEADER)
    f, re, im = (_floats(path, body, c) for c in range(3))
    try:
        return Spectrum(f, _complex(re, im))
    except ValueError as exc:
        raise DataFileError(f"{path}: {exc}") from exc


MAP_HEADER = ("flux_index", "frequency_Hz", "re_s11", "im_s11")


def write_map(path, amap: AnticrossingMap, flux_unit: str = "V") -> tuple:
    """Write ``<stem>.json`` and ``<stem>.csv``; ``path`` may name either."""
    path = Path(path)
    header_path = path.with_suffix(".json")
    payload_path = path.with_suffix(".csv")
    nf = amap.frequency_axis.size
    idx = np.repeat(np.arange(amap.flux_axis.size), nf)
    freq = np.tile(amap.frequency_axis, amap.flux_axis.size)
    s = amap.s11.ravel()
    index_text = [str(i) for i in idx]
    atomic_write(payload_path, _csv_rows(MAP_HEADER, (index_text, freq, s.real, s.imag)))
    header = {
        "flux_axis": amap.flux_axis,
        "frequency_axis": amap.frequency_axis,
        "units": {"flux_axis": flux_unit, "frequency_axis": "Hz"},
        "payload": payload_path.name,
        "calibration": calibration_to_dict(amap.calibration) if amap.calibration else None,
        "metadata": amap.metadata,
    }
    # repr-exact axes: json writes shortest round-trip floats
    atomic_write(header_path, dump_json(header))
    return header_path, payload_path


def read_map(path) -> AnticrossingMap:
    path = Path(path)
    header_path = path.with_suffix(".json")
    doc = _load_json(header_path)
    where = f" in {header_path.name}"
    try:
        flux = np.asarray(_field(doc, "flux_axis", list, where), dtype=float)
        freq = np.asarray(_field(doc, "frequency_axis", list, where), dtype=float)
    except (TypeError, ValueError) as exc:
        raise DataFileError(f"{header_path}: bad axis ({exc})") from exc
    payload = header_path.parent / doc.get("payload", header_path.with_suffix(".csv").name)
    if not payload.exists():
        raise DataFileError(f"{header_path}: payload {payload.name} not found")
    cal = doc.get("calibration")
    cal = calibration_from_dict(cal, where) if cal else None

    body = _read_table(payload, MAP_HEADER)
    if len(body) != flux.size * freq.size:
        raise DataFileError(f"{payload}: {len(body)} rows, expected {flux.size * freq.size}")
    try:
        idx = np.array([int(r[0]) for r in body])
    except ValueError as exc:
        raise DataFileError(f"{payload}: {exc}") from exc
    f = _floats(payload, body, 1)
    s = _complex(_floats(payload, body, 2), _floats(payload, body, 3))
    expected = np.repeat(np.arange(flux.size), freq.size)
    if not np.array_equal(idx, expected) or not np.array_equal(f, np.tile(freq, flux.size)):
        raise DataFileError(f"{payload}: rows do not match the axes in {header_path.name}")
    try:
        return AnticrossingMap(flux, freq, s.reshape(flux.size, freq.size), cal,
                               doc.get("metadata") or {})
    except ValueError as exc:
        raise DataFileError(f"{header_path}: {exc}") from exc


# ----------------------------------------------------------------------------
# Kerr curves and flux points


KERR_HEADER = ("drive_amplitude", "occupation_n_r", "shift_Hz", "bistable_flag")


def write_kerr_curve(path, curve) -> Path:
    """Write a :class:`KerrShiftCurve` or a synthetic sweep (amplitude magnitudes)."""
    flags = [str(int(b)) for b in np.asarray(curve.bistable, bool)]
    return atomic_write(path, _csv_rows(KERR_HEADER, (
        np.abs(curve.amplitudes), curve.occupations, np.asarray(curve.shifts) / TWO_PI, flags)))


def read_kerr_curve(path) -> KerrShiftCurve:
    body = _read_table(path, KERR_HEADER)
    amp, occ, shift = (_floats(path, body, c) for c in range(3))
    try:
        flags = np.array([int(r[3]) != 0 for r in body], bool)
    except ValueError as exc:
        raise DataFileError(f"{path}: {exc}") from exc
    return KerrShiftCurve(amp.astype(complex), occ, TWO_PI * shift, flags,
                          np.ones(amp.size, bool))


FLUX_HEADER = ("bias_V", "frequency_Hz")


def read_flux_points(path) -> tuple:
    body = _read_table(path, FLUX_HEADER)
    return _floats(path, body, 0), TWO_PI * _floats(path, body, 1)


# ----------------------------------------------------------------------------
# fit results


def fit_result_to_dict(result: FitResult) -> dict:
    params = []
    for name, value, err in zip(result.names, result.values, result.standard_errors):
        if name in _DIMENSIONLESS:
            params.append({"name": name, "value": value, "standard_error": err,
                           "unit": _DIMENSIONLESS[name]})
        else:
            params.append({"name": f"{name}_Hz", "value": value / TWO_PI,
                           "standard_error": err / TWO_PI, "unit": "Hz"})
    return {
        "parameters": params,
        "converged": result.converged,
        "residual_norm": result.residual_norm,
        "iterations": result.iterations,
        "optimality": result.optimality,
        "diagnostics": result.diagnostics,
    }


def write_fit_result(path, result: FitResult) -> Path:
    return atomic_write(path, dump_json(fit_result_to_dict(result)))


# ----------------------------------------------------------------------------
# scenarios


def _grid(doc, where, unit="_Hz") -> FrequencyGrid:
    if not isinstance(doc, dict):
        raise SchemaError(f"grid{where} must be an object")
    try:
        return FrequencyGrid(_field(doc, f"start{unit}", where=where),
                             _field(doc, f"stop{unit}", where=where),
                             _field(doc, "points", int, where))
    except SchemaError:
        raise
    except ValueError as exc:
        raise SchemaError(f"grid{where}: {exc}") from exc


def read_scenario(path) -> dict:
    """Parse a scenario file.

    Schema::

        {"kind": "spectrum" | "map" | "survey",
         "model": <model JSON>,                      # spectrum, map
         "grid": {"start_Hz", "stop_Hz", "points"},  # spectrum, map
         "noise": {"sigma", "seed"},                 # optional
         "background": [[re, im], ...],              # optional
         "flux": {"start", "stop", "points"},        # map
         "calibration": <calibration JSON>,          # map, survey
         "survey": {"count", "band_Hz": [lo, hi], "window_Hz", "points",
                    "flux_rows", "tuning_span_Hz", "resonator", "cluster"}}

    Returns a dict with ``kind`` plus the parsed objects. For ``spectrum``
    and ``map`` the key ``scenario`` holds a :class:`ScenarioSpec`.
    """
    doc = _load_json(path)
    kind = doc.get("kind", "spectrum")
    if kind not in ("spectrum", "map", "survey"):
        raise SchemaError(f"unknown scenario kind {kind!r}")
    noise_doc = doc.get("noise") or {}
    try:
        noise = NoiseSpec(float(noise_doc.get("sigma", 0.0)), int(noise_doc.get("seed", 0)))
    except (TypeError, ValueError) as exc:
        raise SchemaError(f"noise: {exc}") from exc
    bg = doc.get("background")
    if bg is not None:
        try:
            bg = tuple(complex(c[0], c[1]) if isinstance(c, list) else complex(c) for c in bg)
        except (TypeError, ValueError, IndexError) as exc:
            raise SchemaError(f"background: {exc}") from exc
    out = {"kind": kind, "noise": noise}
    cal_doc = doc.get("calibration")
    if kind in ("map", "survey"):
        if cal_doc is None:
            raise SchemaError(f"missing field 'calibration' for a {kind} scenario")
        out["calibration"] = calibration_from_dict(cal_doc, " of calibration")

    if kind == "survey":
        sv = _field(doc, "survey", dict)
        lo, hi = (TWO_PI * float(x) for x in _field(sv, "band_Hz", list, " of survey"))
        cl = sv.get("cluster") or {}
        stats = ClusterStatistics(
            clusters=int(cl.get("clusters", 3)),
            cluster_width=TWO_PI * float(cl.get("cluster_width_Hz", 40e6)),
            min_spacing=TWO_PI * float(cl.get("min_spacing_Hz", 30e6)),
            q_range=tuple(cl.get("q_range", (1e4, 5e4))),
            coupling=TWO_PI * float(cl.get("coupling_Hz", 100e3)),
            coupling_spread=float(cl.get("coupling_spread", 0.3)),
            strong_coupling=(None if cl.get("strong_coupling_Hz", 1.6e6) is None
                             else TWO_PI * float(cl.get("strong_coupling_Hz", 1.6e6))),
            seed=int(cl.get("seed", noise.seed)))
        res = sv.get("resonator") or {}
        out.update({
            "count": _field(sv, "count", int, " of survey"),
            "band": (lo, hi),
            "statistics": stats,
            "linewidth": TWO_PI * float(res.get("linewidth_Hz", 11e6)),
            "external_linewidth": TWO_PI * float(res.get("external_linewidth_Hz", 6.3e6)),
            "window": TWO_PI * float(sv.get("window_Hz", 25e6)),
            "points": int(sv.get("points", 500)),
            "flux_rows": int(sv.get("flux_rows", 50)),
            "tuning_span": TWO_PI * float(sv.get("tuning_span_Hz", 30e6)),
            "background": bg,
        })
        return out

    model = model_from_dict(_field(doc, "model", dict))
    grid = _grid(_field(doc, "grid", dict), " of grid")
    flux = _grid(_field(doc, "flux", dict), " of flux", unit="") if kind == "map" else None
    out["scenario"] = ScenarioSpec(model, grid, noise, bg, flux)
    return out
