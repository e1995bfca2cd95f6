"""Command-line interface.

Subcommands: ``derive``, ``simulate``, ``synth``, ``fit``, ``survey`` and
``kerr``. Every run writes its outputs plus one ``manifest.json`` into the
output directory (``--out-dir``, else ``$EMSPEC_OUT_DIR``, else
``./emspec_out``). Settings resolve as flags > ``--config`` file >
defaults, and the resolved values are echoed in the manifest.

Exit codes: 0 success, 1 usage error, 2 data error, 3 non-convergence.
"""
from __future__ import annotations

import argparse
import datetime as _dt
import json
import logging
import os
import sys
from importlib import metadata
from pathlib import Path

import numpy as np

from . import formats
from .dynamics import ProbeScan, kerr_shift_curve
from .fitting import (FitError, fit_anticrossing, fit_bare_resonator, fit_flux_calibration,
                      fit_kerr_calibration, mode_survey)
from .params import (CONSTANTS, charging_energy, impedance, kerr_anharmonicity,
                     resonator_frequency, zero_point_voltage)
from .spectra import InvalidGridError, evaluate_spectrum
from .synth import (RNG_NAME, NoiseSpec, ScenarioSpec, generate_anticrossing_map,
                    generate_mode_cluster, generate_spectrum, generate_survey_maps)

log = logging.getLogger("emspec")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NONCONVERGED = 0, 1, 2, 3
OUT_DIR_ENV = "EMSPEC_OUT_DIR"
DEFAULT_OUT_DIR = "emspec_out"
TWO_PI = 2 * np.pi

# defaults for settings that may also come from a config file
DEFAULTS = {
    "simulate": {"start_hz": None, "stop_hz": None, "points": 1001, "output": "spectrum.csv"},
    "synth": {},
    "fit": {"residual": "complex", "kerr_hz": None, "convention": "half",
            "max_deviation": 0.1, "output": "fit.json"},
    "survey": {"workers": 1, "output": "modes.csv"},
    "kerr": {"amplitudes": None, "probe_points": 61, "output": "kerr.csv"},
    "derive": {"output": "derive.json"},
}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    """argparse exits with 2 on bad usage; this toolkit reserves 2 for data errors."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _version() -> str:
    try:
        return metadata.version("artifact")
    except metadata.PackageNotFoundError:
        return "unknown"


def _now() -> str:
    return _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")


def _global_flags(parser, default):
    parser.add_argument("--seed", type=int, default=default, help="override the noise seed")
    parser.add_argument("--out-dir", default=default,
                        help=f"output directory (default ${OUT_DIR_ENV} or ./{DEFAULT_OUT_DIR})")
    parser.add_argument("--config", default=default, help="JSON file with per-command defaults")
    parser.add_argument("-v", "--verbose", action="store_true", default=default or False)


def build_parser() -> argparse.ArgumentParser:
    # global flags work before or after the subcommand; the copy on the
    # subcommands must not reset values given before it
    common = argparse.ArgumentParser(add_help=False)
    _global_flags(common, argparse.SUPPRESS)

    p = _Parser(prog="emspec", description=__doc__.split("\n\n")[0])
    _global_flags(p, None)
    sub = p.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True

    s = sub.add_parser("derive", parents=[common], help="circuit quantities from a design file")
    s.add_argument("design")
    s.add_argument("--output")

    s = sub.add_parser("simulate", parents=[common], help="closed-form reflection spectrum")
    s.add_argument("model")
    s.add_argument("--start-hz", type=float)
    s.add_argument("--stop-hz", type=float)
    s.add_argument("--points", type=int)
    s.add_argument("--output")

    s = sub.add_parser("synth", parents=[common], help="seeded synthetic data from a scenario")
    s.add_argument("scenario")

    s = sub.add_parser("fit", parents=[common], help="fit a data file")
    s.add_argument("data")
    s.add_argument("--kind", required=True, choices=["bare", "anticrossing", "flux", "kerr"])
    s.add_argument("--guess", help="JSON with initial parameter values in Hz")
    s.add_argument("--calibration", help="calibration JSON for anticrossing maps")
    s.add_argument("--residual", choices=["complex", "magnitude"])
    s.add_argument("--kerr-hz", type=float, help="Kerr coefficient in Hz (kind=kerr)")
    s.add_argument("--convention", choices=["half", "mean_field"])
    s.add_argument("--max-deviation", type=float)
    s.add_argument("--output")

    s = sub.add_parser("survey", parents=[common], help="fit every map in a directory")
    s.add_argument("directory")
    s.add_argument("--workers", type=int)
    s.add_argument("--output")

    s = sub.add_parser("kerr", parents=[common], help="mean-field Kerr pull versus drive")
    s.add_argument("model")
    s.add_argument("--amplitudes", help="comma-separated drive amplitudes, sqrt(photons/s)")
    s.add_argument("--probe-points", type=int)
    s.add_argument("--output")
    return p


def _resolve(args, command: str) -> dict:
    """Flags beat the config file, which beats the defaults."""
    resolved = dict(DEFAULTS.get(command, {}))
    config = {}
    if args.config:
        try:
            with open(args.config) as fh:
                config = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"cannot read config {args.config}: {exc}") from exc
        if not isinstance(config, dict):
            raise UsageError("config file must hold a JSON object")
    for key in ("seed", "out_dir"):
        resolved[key] = config.get(key)
    section = config.get(command, {})
    unknown = set(section) - set(resolved)
    if unknown:
        raise UsageError(f"unknown config keys for {command}: {', '.join(sorted(unknown))}")
    resolved.update(section)
    for key in list(resolved):
        value = getattr(args, key, None)
        if value is not None:
            resolved[key] = value
    if resolved["out_dir"] is None:
        resolved["out_dir"] = os.environ.get(OUT_DIR_ENV) or DEFAULT_OUT_DIR
    return resolved


class _Run:
    """Collects outputs and writes the manifest last."""

    def __init__(self, command, args, settings, argv):
        self.command = command
        self.argv = list(argv)
        self.settings = settings
        self.out_dir = Path(settings["out_dir"])
        self.inputs = {k: str(Path(v).resolve()) for k, v in vars(args).items()
                       if k in ("design", "model", "scenario", "data", "directory", "guess",
                                "calibration", "config") and v}
        self.outputs = []
        self.extra = {}
        self.started = _now()

    def path(self, name) -> Path:
        return self.out_dir / name

    def written(self, *paths):
        self.outputs.extend(str(Path(p).name) for p in paths)

    def finish(self, status: int):
        manifest = {
            "command": self.command,
            "argv": self.argv,
            "inputs": self.inputs,
            "outputs": self.outputs,
            "config": self.settings,
            "version": _version(),
            "seed": self.settings.get("seed"),
            "rng": RNG_NAME,
            "exit_code": status,
            "started": self.started,
            "finished": _now(),
        }
        manifest.update(self.extra)
        formats.atomic_write(self.path("manifest.json"), formats.dump_json(manifest))
        return status


# ----------------------------------------------------------------------------
# commands


def cmd_derive(args, run: _Run) -> int:
    design = formats.read_design(args.design)
    w = resonator_frequency(design)
    report = {
        "omega_r_Hz": w / TWO_PI,
        "Z_r_ohm": impedance(design),
        "E_C_Hz": charging_energy(design) / CONSTANTS.planck,
        "chi_Hz": kerr_anharmonicity(design) / TWO_PI,
        "V_zp_V": zero_point_voltage(w, design.capacitance),
    }
    print(f"omega_r/2pi = {report['omega_r_Hz'] / 1e9:.6g} GHz")
    print(f"Z_r         = {report['Z_r_ohm']:.6g} ohm")
    print(f"E_C/h       = {report['E_C_Hz'] / 1e6:.6g} MHz")
    print(f"chi/2pi     = {report['chi_Hz'] / 1e6:.6g} MHz")
    print(f"V_zp        = {report['V_zp_V'] * 1e6:.6g} uV")
    run.written(formats.atomic_write(run.path(run.settings["output"]), formats.dump_json(report)))
    return EXIT_OK


def cmd_simulate(args, run: _Run) -> int:
    st = run.settings
    model = formats.read_model(args.model)
    if st["start_hz"] is None or st["stop_hz"] is None:
        raise UsageError("--start-hz and --stop-hz are required")
    if st["points"] < 1:
        raise UsageError("--points must be at least 1")
    if st["points"] > 1 and not st["stop_hz"] > st["start_hz"]:
        raise UsageError("--stop-hz must exceed --start-hz")
    grid = np.linspace(st["start_hz"], st["stop_hz"], st["points"])
    try:
        spectrum = evaluate_spectrum(model, grid)
    except InvalidGridError as exc:
        raise UsageError(str(exc)) from exc
    run.written(formats.write_spectrum(run.path(st["output"]), spectrum))
    return EXIT_OK


def _with_seed(noise: NoiseSpec, seed) -> NoiseSpec:
    return noise if seed is None else NoiseSpec(noise.sigma, seed)


def cmd_synth(args, run: _Run) -> int:
    sc = formats.read_scenario(args.scenario)
    seed = run.settings["seed"]
    noise = _with_seed(sc["noise"], seed)
    run.settings["seed"] = noise.seed
    warnings = []
    if sc["kind"] == "spectrum":
        spec = sc["scenario"]
        spectrum = generate_spectrum(ScenarioSpec(spec.model, spec.grid, noise, spec.background))
        run.written(formats.write_spectrum(run.path("spectrum.csv"), spectrum))
    elif sc["kind"] == "map":
        spec = sc["scenario"]
        amap = generate_anticrossing_map(
            ScenarioSpec(spec.model, spec.grid, noise, spec.background, spec.flux),
            sc["calibration"])
        warnings = amap.metadata.get("warnings", [])
        run.written(*formats.write_map(run.path("map"), amap))
    else:
        model = generate_mode_cluster(sc["count"], sc["band"], sc["statistics"])
        model = model.with_resonator(type(model.resonator)(
            model.resonator.frequency, sc["linewidth"], sc["external_linewidth"]))
        maps = generate_survey_maps(model, sc["calibration"], window=sc["window"],
                                    points=sc["points"], flux_rows=sc["flux_rows"],
                                    tuning_span=sc["tuning_span"], noise=noise,
                                    background=sc["background"])
        for i, amap in enumerate(maps):
            run.written(*formats.write_map(run.path(f"map_{i:03d}"), amap))
        run.written(formats.write_model(run.path("truth.json"), model))
    for w in warnings:
        print(f"warning: {w}", file=sys.stderr)
    run.extra["warnings"] = warnings
    return EXIT_OK


def _load_guess(path, names):
    if path is None:
        return None
    with open(path) as fh:
        doc = json.load(fh)
    try:
        return [TWO_PI * float(doc[f"{n}_Hz"]) if f"{n}_Hz" in doc else float(doc[n])
                for n in names]
    except KeyError as exc:
        raise formats.SchemaError(f"missing field {exc.args[0]!r} in guess file") from exc


def cmd_fit(args, run: _Run) -> int:
    st = run.settings
    kind = args.kind
    if kind == "bare":
        guess = _load_guess(args.guess, ("omega_r", "kappa", "kappa_e"))
        result = fit_bare_resonator(formats.read_spectrum(args.data), guess,
                                    residual=st["residual"])
    elif kind == "anticrossing":
        amap = formats.read_map(args.data)
        cal = formats.read_calibration(args.calibration) if args.calibration else None
        if cal is None and amap.calibration is None:
            raise UsageError("the map has no calibration; pass --calibration")
        guess = _load_guess(args.guess, ("omega_m", "gamma", "g", "kappa", "kappa_e"))
        result = fit_anticrossing(amap, cal, guess, residual=st["residual"])
    elif kind == "flux":
        bias, freq = formats.read_flux_points(args.data)
        guess = _load_guess(args.guess, ("omega_max", "gain", "offset"))
        result = fit_flux_calibration(bias, freq, guess)
    else:
        if st["kerr_hz"] is None:
            raise UsageError("--kerr-hz is required for kind=kerr")
        curve = formats.read_kerr_curve(args.data)
        result = fit_kerr_calibration(curve.powers, curve.shifts, TWO_PI * st["kerr_hz"],
                                      convention=st["convention"],
                                      max_deviation=st["max_deviation"])
    run.written(formats.write_fit_result(run.path(st["output"]), result))
    for p in formats.fit_result_to_dict(result)["parameters"]:
        print(f"{p['name']:>24s} = {p['value']:.10g} +- {p['standard_error']:.3g} {p['unit']}")
    if not result.converged:
        print("fit did not converge: " + str(result.diagnostics.get("message", "")),
              file=sys.stderr)
        return EXIT_NONCONVERGED
    return EXIT_OK


SURVEY_HEADER = ("map", "status", "frequency_Hz", "frequency_err_Hz", "gamma_Hz", "gamma_err_Hz",
                 "g_Hz", "g_err_Hz", "kappa_Hz", "kappa_e_Hz", "Q_m", "cooperativity")


def cmd_survey(args, run: _Run) -> int:
    directory = Path(args.directory)
    if not directory.is_dir():
        raise UsageError(f"{directory} is not a directory")
    headers = sorted(p for p in directory.glob("*.json") if p.name != "manifest.json"
                     and p.with_suffix(".csv").exists())
    loaded, errors = [], []
    for path in headers:
        try:
            loaded.append((path, formats.read_map(path)))
        except (ValueError, OSError) as exc:
            errors.append((path.stem, str(exc)))
    result = mode_survey([m for _, m in loaded], max_workers=run.settings["workers"])
    errors += [(loaded[i][0].stem, msg) for i, msg in result.failures]

    nan = float("nan")
    rows = []
    for r in result.rows:
        rows.append([loaded[r["index"]][0].stem, "ok", r["omega_m"] / TWO_PI,
                     r["omega_m_err"] / TWO_PI, r["gamma"] / TWO_PI, r["gamma_err"] / TWO_PI,
                     r["g"] / TWO_PI, r["g_err"] / TWO_PI, r["kappa"] / TWO_PI,
                     r["kappa_e"] / TWO_PI, r["Q_m"], r["C"]])
    for name, msg in sorted(errors):
        rows.append([name, "error: " + msg.replace(",", ";").replace("\n", " ")]
                    + [nan] * (len(SURVEY_HEADER) - 2))
    cols = list(zip(*rows)) if rows else [[] for _ in SURVEY_HEADER]
    run.written(formats.atomic_write(run.path(run.settings["output"]),
                                     formats._csv_rows(SURVEY_HEADER, cols)))
    run.extra["warnings"] = len(errors)
    print(f"{len(result.rows)} modes, {len(errors)} warnings")
    for name, msg in errors:
        print(f"warning: {name}: {msg}", file=sys.stderr)
    return EXIT_OK


def cmd_kerr(args, run: _Run) -> int:
    st = run.settings
    model = formats.read_model(args.model)
    if not st["amplitudes"]:
        raise UsageError("--amplitudes is required")
    try:
        amps = np.array([float(x) for x in str(st["amplitudes"]).split(",")])
    except ValueError as exc:
        raise UsageError(f"bad --amplitudes: {exc}") from exc
    if np.any(amps < 0) or np.any(np.diff(amps) < 0):
        raise UsageError("amplitudes must be non-negative and increasing")
    curve = kerr_shift_curve(model, amps, ProbeScan(points=st["probe_points"]))
    run.written(formats.write_kerr_curve(run.path(st["output"]), curve))
    if not np.all(curve.converged):
        print("some drive points did not settle", file=sys.stderr)
        return EXIT_NONCONVERGED
    return EXIT_OK


COMMANDS = {"derive": cmd_derive, "simulate": cmd_simulate, "synth": cmd_synth,
            "fit": cmd_fit, "survey": cmd_survey, "kerr": cmd_kerr}


def main(argv=None) -> int:
    parser = build_parser()
    argv = sys.argv[1:] if argv is None else list(argv)
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # --help exits 0, bad usage exits EXIT_USAGE
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.ERROR,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        settings = _resolve(args, args.command)
    except UsageError as exc:
        print(f"emspec: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    run = _Run(args.command, args, settings, argv)
    try:
        status = COMMANDS[args.command](args, run)
    except (UsageError, formats.SchemaError) as exc:
        print(f"emspec: error: {exc}", file=sys.stderr)
        status = EXIT_USAGE
    except (formats.DataFileError, FitError, OSError, ValueError) as exc:
        print(f"emspec: data error: {exc}", file=sys.stderr)
        status = EXIT_DATA
    run.finish(status)
    return status


if __name__ == "__main__":
    sys.exit(main())
