"""Parameter extraction from reflection data.

All fits are Levenberg-Marquardt on stacked real and imaginary residuals
(or on ``|S11|`` when the phase is not calibrated) with analytic
Jacobians. Internally every fit works in offset-and-scaled coordinates so
that a 6 GHz resonance can be located to a few hertz without the optimizer
ever seeing numbers of order 1e10.

Standard errors come from the residual-scaled inverse Gauss-Newton Hessian
at the optimum.
"""
from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.optimize import least_squares

from .params import FluxCalibration, voltage_to_frequency
from .spectra import (MechanicalMode, ResonatorParams, Spectrum, SystemModel,
                      cooperativity, quality_factor)

__all__ = [
    "FitError",
    "GuessError",
    "BracketingError",
    "NormalizationError",
    "InsufficientLinearRangeError",
    "FitOptions",
    "FitResult",
    "AnticrossingMap",
    "SurveyResult",
    "fit_bare_resonator",
    "fit_anticrossing",
    "fit_flux_calibration",
    "fit_kerr_calibration",
    "select_weak_drive",
    "normalize_spectrum",
    "mode_survey",
]

log = logging.getLogger(__name__)

TWO_PI = 2 * np.pi


class FitError(ValueError):
    pass


class GuessError(FitError):
    """No resonance feature could be located to seed the fit."""


class BracketingError(FitError):
    """The tuned resonance never crosses the mechanical mode inside the map."""


class NormalizationError(ValueError):
    pass


class InsufficientLinearRangeError(FitError):
    pass


@dataclass(frozen=True)
class FitOptions:
    gtol: float = 1e-10
    xtol: float = 1e-12
    ftol: float = 1e-15
    max_iterations: int = 500
    # largest residual/Jacobian-column cosine accepted as converged; ``gtol``
    # is what the optimizer aims for, but rounding of GHz-scale frequencies
    # puts a floor near 1e-9 under narrow features
    optimality_tol: float = 1e-6
    # relative singular-value floor for declaring parameters non-identifiable
    rank_tol: float = 1e-10
    # anti-crossing: total mode signature over per-point noise needed to report a mode
    min_significance: float = 5.0


@dataclass(frozen=True)
class FitResult:
    """Estimates with uncertainties.

    Frequencies and rates are in rad/s. ``covariance`` is in the same
    units; ``standard_errors`` are the square roots of its diagonal.
    ``optimality`` is the largest cosine between the residual vector and a
    Jacobian column at the optimum (zero at an exact stationary point).
    """

    names: tuple
    values: np.ndarray
    standard_errors: np.ndarray
    covariance: np.ndarray
    residual_norm: float
    iterations: int
    converged: bool
    optimality: float = 0.0
    diagnostics: dict = field(default_factory=dict)

    @property
    def estimates(self) -> dict:
        return dict(zip(self.names, self.values.tolist()))

    @property
    def errors(self) -> dict:
        return dict(zip(self.names, self.standard_errors.tolist()))

    def __getitem__(self, name):
        return self.values[self.names.index(name)]

    def error(self, name):
        return self.standard_errors[self.names.index(name)]


@dataclass(frozen=True)
class AnticrossingMap:
    """Reflection on a (flux or bias) x frequency grid.

    ``flux_axis`` is in whatever unit the accompanying calibration expects
    (flux quanta for :meth:`FluxCalibration.from_flux_quanta`, volts for a
    bias calibration). ``frequency_axis`` is in Hz. ``s11`` has shape
    ``(len(flux_axis), len(frequency_axis))``.
    """

    flux_axis: np.ndarray
    frequency_axis: np.ndarray
    s11: np.ndarray
    calibration: FluxCalibration | None = None
    metadata: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        x = np.asarray(self.flux_axis, dtype=float).ravel()
        f = np.asarray(self.frequency_axis, dtype=float).ravel()
        s = np.asarray(self.s11, dtype=complex)
        for name, axis in (("flux_axis", x), ("frequency_axis", f)):
            if axis.size == 0 or not np.all(np.isfinite(axis)) or np.any(np.diff(axis) <= 0):
                raise ValueError(f"{name} must be non-empty and strictly increasing")
        if s.shape != (x.size, f.size):
            raise ValueError(f"s11 grid has shape {s.shape}, expected {(x.size, f.size)}")
        if not np.all(np.isfinite(s)):
            raise ValueError("s11 grid contains non-finite values")
        object.__setattr__(self, "flux_axis", x)
        object.__setattr__(self, "frequency_axis", f)
        object.__setattr__(self, "s11", s)

    def row(self, i: int) -> Spectrum:
        return Spectrum(self.frequency_axis, self.s11[i])


# ----------------------------------------------------------------------------
# generic Levenberg-Marquardt driver


@dataclass
class _Problem:
    names: tuple
    offset: np.ndarray
    scale: np.ndarray
    model: Callable        # p -> complex (or real) model values
    jacobian: Callable     # p -> (m, n) derivative of model
    data: np.ndarray
    kind: str = "complex"  # "complex", "magnitude" or "real"

    def to_p(self, u):
        return self.offset + self.scale * u

    def to_u(self, p):
        return (np.asarray(p, float) - self.offset) / self.scale

    def residual(self, u):
        p = self.to_p(u)
        mod = self.model(p)
        if self.kind == "complex":
            d = mod - self.data
            return np.concatenate([d.real, d.imag])
        if self.kind == "magnitude":
            return np.abs(mod) - np.abs(self.data)
        return mod - self.data

    def jac(self, u):
        p = self.to_p(u)
        dm = self.jacobian(p) * self.scale
        if self.kind == "complex":
            return np.vstack([dm.real, dm.imag])
        if self.kind == "magnitude":
            mod = self.model(p)
            mag = np.maximum(np.abs(mod), 1e-300)
            return (np.conj(mod)[:, None] * dm).real / mag[:, None]
        return dm


def _solve(problem: _Problem, p0, options: FitOptions) -> FitResult:
    u0 = problem.to_u(p0)
    sol = least_squares(problem.residual, u0, jac=problem.jac, method="lm",
                        gtol=options.gtol, xtol=options.xtol, ftol=options.ftol,
                        max_nfev=options.max_iterations)
    u = sol.x
    r = problem.residual(u)
    J = problem.jac(u)
    rnorm = float(np.linalg.norm(r))
    # a few plain Gauss-Newton steps squeeze out the last digits LM leaves behind
    for _ in range(3):
        if not np.all(np.isfinite(J)) or rnorm == 0:
            break
        step = np.linalg.lstsq(J, -r, rcond=None)[0]
        u_try = u + step
        r_try = problem.residual(u_try)
        n_try = float(np.linalg.norm(r_try))
        if not n_try < rnorm:
            break
        u, r, rnorm = u_try, r_try, n_try
        J = problem.jac(u)
    m, n = J.shape

    col = np.linalg.norm(J, axis=0)
    data_scale = float(np.linalg.norm(np.abs(problem.data))) or 1.0
    if rnorm <= 1e-12 * data_scale or np.any(col == 0):
        # exact fit: the residual direction carries no information
        optimality = 0.0
    else:
        optimality = float(np.max(np.abs(J.T @ r) / (col * rnorm)))

    diagnostics = {"status": int(sol.status), "message": sol.message, "points": m}
    converged = sol.status > 0 and optimality < options.optimality_tol

    safe = np.where(col > 0, col, 1.0)
    Jn = J / safe
    sv, vt = np.linalg.svd(Jn, full_matrices=False)[1:]
    rank_def = np.any(col == 0) or sv[-1] < options.rank_tol * sv[0]
    non_ident = []
    if rank_def:
        weak = sv < options.rank_tol * sv[0]
        null = vt[weak] if np.any(weak) else vt[-1:]
        strength = np.max(np.abs(null), axis=0)
        non_ident = [problem.names[i] for i in range(n) if strength[i] > 0.1 or col[i] == 0]
        converged = False

    dof = max(m - n, 1)
    s2 = rnorm**2 / dof
    try:
        cov_n = np.linalg.pinv(Jn.T @ Jn) if rank_def else np.linalg.inv(Jn.T @ Jn)
    except np.linalg.LinAlgError:
        cov_n = np.full((n, n), np.nan)
    cov_u = s2 * cov_n / np.outer(safe, safe)
    cov = cov_u * np.outer(problem.scale, problem.scale)
    values = problem.to_p(u)
    errors = np.sqrt(np.clip(np.diag(cov), 0, None))

    if non_ident:
        diagnostics["non_identifiable"] = non_ident
        for name in non_ident:
            i = problem.names.index(name)
            values[i] = np.nan
            errors[i] = np.nan
    diagnostics["condition"] = float(sv[0] / sv[-1]) if sv[-1] > 0 else float("inf")

    return FitResult(tuple(problem.names), values, errors, cov, rnorm, int(sol.nfev),
                     bool(converged), optimality, diagnostics)


def _reorder(result: FitResult, values, errors=None, **diag) -> FitResult:
    d = dict(result.diagnostics)
    d.update(diag)
    return FitResult(result.names, np.asarray(values, float),
                     result.standard_errors if errors is None else np.asarray(errors, float),
                     result.covariance, result.residual_norm, result.iterations,
                     result.converged, result.optimality, d)


# ----------------------------------------------------------------------------
# bare resonator


def _guess_bare(omega, s11, residual="complex"):
    """Dip position, width of 1-|S11|^2 at half depth, and coupling from depth."""
    absorption = 1.0 - np.abs(s11) ** 2
    edge = np.median(np.concatenate([absorption[:max(3, omega.size // 20)],
                                     absorption[-max(3, omega.size // 20):]]))
    peak = absorption - edge
    i = int(np.argmax(peak))
    depth = peak[i]
    if not depth > 1e-6 or i == 0 or i == omega.size - 1:
        raise GuessError("no resonance dip found inside the frequency window")

    half = depth / 2
    lo = i
    while lo > 0 and peak[lo] > half:
        lo -= 1
    hi = i
    while hi < omega.size - 1 and peak[hi] > half:
        hi += 1
    width = omega[hi] - omega[lo]
    step = np.min(np.diff(omega))
    kappa = max(width, 2 * step)

    if residual == "complex":
        eta = float(np.clip((1 + s11[i].real) / 2, 0.02, 1.0))
    else:
        # undercoupled branch; the overcoupled one is tried by the caller
        eta = float(np.clip((1 - abs(s11[i])) / 2, 0.02, 0.5))
    return omega[i], kappa, eta


def _bare_problem(omega, data, p0, residual, parameterization):
    def parts(p):
        w0, kappa, third = p
        ke = third * kappa if parameterization == "eta_e" else third
        a = kappa / 2 + 1j * (omega - w0)
        return ke, a

    def model(p):
        ke, a = parts(p)
        return -1.0 + ke / a

    def jacobian(p):
        w0, kappa, third = p
        ke, a = parts(p)
        d_w0 = 1j * ke / a**2
        if parameterization == "eta_e":
            d_kappa = third / a - ke / (2 * a**2)
            d_third = kappa / a
        else:
            d_kappa = -ke / (2 * a**2)
            d_third = 1 / a
        return np.column_stack([d_w0, d_kappa, d_third])

    third_name = "eta_e" if parameterization == "eta_e" else "kappa_e"
    kappa_scale = abs(p0[1])
    third_scale = 1.0 if parameterization == "eta_e" else kappa_scale
    return _Problem(("omega_r", "kappa", third_name),
                    np.array([p0[0], 0.0, 0.0]),
                    np.array([kappa_scale, kappa_scale, third_scale]),
                    model, jacobian, data, residual)


def fit_bare_resonator(spectrum: Spectrum, initial_guess=None, *, residual: str = "complex",
                       parameterization: str = "kappa_e",
                       options: FitOptions = FitOptions()) -> FitResult:
    """Fit ``S11 = -1 + 2 (kappa_e/kappa) chi_r`` to a spectrum.

    Parameters
    ----------
    spectrum : Spectrum
        Normalized reflection data; the dip must lie inside the window.
    initial_guess : ResonatorParams or sequence, optional
        ``(omega_r, kappa, kappa_e)`` in rad/s. Seeded from the data if omitted.
    residual : {"complex", "magnitude"}
        Fit real and imaginary parts, or ``|S11|`` only.
    parameterization : {"kappa_e", "eta_e"}
        Third fit parameter: the external linewidth or the coupling efficiency.

    Returns
    -------
    FitResult
        Parameters ``omega_r, kappa, kappa_e`` (or ``eta_e``). A fit whose
        linewidths violate ``0 <= kappa_e <= kappa`` is marked unconverged.
    """
    if residual not in ("complex", "magnitude"):
        raise ValueError(f"unknown residual kind {residual!r}")
    if parameterization not in ("kappa_e", "eta_e"):
        raise ValueError(f"unknown parameterization {parameterization!r}")
    omega = spectrum.angular_frequencies
    data = spectrum.s11

    def data_starts():
        w0, kappa, eta = _guess_bare(omega, data, residual)
        out = [(w0, kappa, eta)]
        if residual == "magnitude":
            out.append((w0, kappa, 1 - eta))
        return out

    def run(starts, best=None):
        for w0, kappa, eta in starts:
            third = eta if parameterization == "eta_e" else eta * kappa
            p0 = np.array([w0, kappa, third])
            res = _solve(_bare_problem(omega, data, p0, residual, parameterization), p0, options)
            if best is None or res.residual_norm < best.residual_norm:
                best = res
        return best

    if initial_guess is None:
        best = run(data_starts())
    else:
        if isinstance(initial_guess, ResonatorParams):
            initial_guess = (initial_guess.frequency, initial_guess.linewidth,
                             initial_guess.external_linewidth)
        w0, kappa, ke = map(float, initial_guess)
        best = run([(w0, kappa, ke / kappa)])
        if not best.converged:
            try:
                best = run(data_starts(), best)
            except GuessError:
                pass

    kappa, third = best.values[1], best.values[2]
    ke = third * kappa if parameterization == "eta_e" else third
    if best.converged and not (0 <= ke <= kappa):
        d = dict(best.diagnostics, unphysical="external linewidth outside [0, kappa]")
        best = FitResult(best.names, best.values, best.standard_errors, best.covariance,
                         best.residual_norm, best.iterations, False, best.optimality, d)
    return best


# ----------------------------------------------------------------------------
# anti-crossing


def _anticrossing_problem(omega, omega_r_rows, data, p0, residual):
    W = omega[None, :]
    WR = omega_r_rows[:, None]

    def parts(p):
        wm, gam, g, kappa, ke = p
        a = kappa / 2 + 1j * (W - WR)
        b = gam / 2 + 1j * (W - wm)
        D = a + g**2 / b
        return a, b, D

    def model(p):
        ke = p[4]
        D = parts(p)[2]
        return (-1.0 + ke / D).ravel()

    def jacobian(p):
        wm, gam, g, kappa, ke = p
        a, b, D = parts(p)
        q = -ke / D**2
        cols = [
            q * (1j * g**2 / b**2),   # omega_m
            q * (-g**2 / (2 * b**2)),  # gamma
            q * (2 * g / b),           # g
            q * 0.5 + 0 * D,           # kappa
            1 / D,                     # kappa_e
        ]
        return np.column_stack([c.ravel() for c in cols])

    kappa_s = abs(p0[3])
    scale = np.array([kappa_s, abs(p0[1]), abs(p0[2]), kappa_s, kappa_s])
    offset = np.array([p0[0], 0.0, 0.0, 0.0, 0.0])
    return _Problem(("omega_m", "gamma", "g", "kappa", "kappa_e"), offset, scale,
                    model, jacobian, data.ravel(), residual)


def _guess_anticrossing(amap: AnticrossingMap, omega_r_rows):
    omega = TWO_PI * amap.frequency_axis
    # resonator linewidths from the row whose resonance sits farthest from the
    # centre of the probe window (least perturbed by the mode)
    centre = omega.mean()
    inside = (omega_r_rows > omega[0]) & (omega_r_rows < omega[-1])
    candidates = np.flatnonzero(inside) if np.any(inside) else np.arange(omega_r_rows.size)
    far = candidates[np.argmax(np.abs(omega_r_rows[candidates] - centre))]
    try:
        bare = fit_bare_resonator(amap.row(far))
        kappa, ke = abs(bare["kappa"]), float(np.clip(bare["kappa_e"], 0, abs(bare["kappa"])))
    except FitError:
        kappa = (omega[-1] - omega[0]) / 4
        ke = kappa / 2
    if not np.isfinite(kappa) or kappa <= 0:
        kappa, ke = (omega[-1] - omega[0]) / 4, (omega[-1] - omega[0]) / 8

    # mechanical position: where the data departs from the bare model, summed over rows
    a = kappa / 2 + 1j * (omega[None, :] - omega_r_rows[:, None])
    dev = np.abs(amap.s11 - (-1 + ke / a))
    profile = dev.sum(axis=0)
    profile = profile - np.median(profile)
    k = int(np.argmax(profile))
    wm = omega[k]

    half = profile[k] / 2
    lo, hi = k, k
    while lo > 0 and profile[lo] > half:
        lo -= 1
    while hi < omega.size - 1 and profile[hi] > half:
        hi += 1
    step = np.min(np.diff(omega))
    gamma = max(omega[hi] - omega[lo], 2 * step) / 2

    # coupling: half the splitting of the two dips in the row closest to resonance
    j = int(np.argmin(np.abs(omega_r_rows - wm)))
    width = max(3, (omega.size // 100) | 1)
    mag = np.convolve(np.abs(amap.s11[j]), np.ones(width) / width, mode="same")
    inner = slice(width, omega.size - width)
    idx = np.arange(omega.size)[inner]
    mins = [i for i in idx if mag[i] < mag[i - 1] and mag[i] <= mag[i + 1]]
    mins.sort(key=lambda i: mag[i])
    g = None
    if mins:
        first = mins[0]
        others = [i for i in mins[1:] if abs(i - first) >= 2 * width]
        if others:
            g = abs(omega[first] - omega[others[0]]) / 2
    if g is None or not g > 0:
        # weak coupling: depth of the mechanical feature gives C ~ dev/(2 eta)
        c = max(dev[j].max() / max(2 * ke / kappa, 1e-3), 1e-4)
        g = np.sqrt(c * kappa * gamma / 4)
    return np.array([wm, gamma, g, kappa, ke])


def _matched_guess(amap: AnticrossingMap, omega_r_rows, kappa, ke):
    """Weak-coupling seed: scan ``(omega_m, gamma)`` for the best first-order signature.

    To first order in ``g**2`` the map departs from the bare resonator by
    ``g**2 * f`` with ``f = -kappa_e / (a**2 b)``. For every trial mode the
    least-squares ``g**2`` and the residual reduction it buys are closed
    form, so the scan is a matched filter over the frequency axis.
    """
    omega = TWO_PI * amap.frequency_axis
    WR = omega_r_rows[:, None]
    W = omega[None, :]

    # refine the resonator linewidths on the whole map first, so that their
    # error does not masquerade as a mode
    def bare(p):
        return (-1 + p[1] / (p[0] / 2 + 1j * (W - WR))).ravel()

    def bare_jac(p):
        d = p[0] / 2 + 1j * (W - WR)
        return np.column_stack([(-p[1] / (2 * d**2)).ravel(), (1 / d).ravel()])

    prob = _Problem(("kappa", "kappa_e"), np.zeros(2), np.array([kappa, kappa]),
                    bare, bare_jac, amap.s11.ravel())
    fit = _solve(prob, np.array([kappa, ke]), FitOptions(max_iterations=50))
    if np.all(np.isfinite(fit.values)) and fit.values[0] > 0:
        kappa, ke = fit.values

    a = kappa / 2 + 1j * (W - WR)
    dev = amap.s11 - (-1 + ke / a)
    # the row sums factor out of every trial mode
    u = np.sum(np.conj(1 / a**2) * dev, axis=0)
    v = np.sum(np.abs(1 / a**2) ** 2, axis=0)
    step = np.min(np.diff(omega)) if omega.size > 1 else kappa
    gammas = np.geomspace(max(2 * step, 1e-4 * kappa), kappa / 5, 8)
    best = (-np.inf, omega[omega.size // 2], gammas[0], 0.0)
    for gam in gammas:
        inv_b = 1 / (gam / 2 + 1j * (omega[None, :] - omega[:, None]))
        fd = (-ke * (np.conj(inv_b) @ u)).real
        ff = ke**2 * (np.abs(inv_b) ** 2 @ v)
        gain = np.where(fd > 0, fd**2 / ff, -np.inf)
        k = int(np.argmax(gain))
        if gain[k] > best[0]:
            best = (gain[k], omega[k], gam, fd[k] / ff[k])
    _, wm, gam, g2 = best
    return np.array([wm, gam, np.sqrt(max(g2, 0.0)) or gam, kappa, ke])


def fit_anticrossing(amap: AnticrossingMap, cal: FluxCalibration | None = None,
                     initial_guess=None, *, residual: str = "complex",
                     options: FitOptions = FitOptions()) -> FitResult:
    """Joint fit of every row of an anti-crossing map to the coupled-mode reflection.

    The resonator frequency of row ``j`` is fixed by the calibration,
    ``voltage_to_frequency(cal, flux_axis[j])``; the fit returns
    ``omega_m, gamma, g, kappa, kappa_e`` (rad/s).

    Raises
    ------
    BracketingError
        If the tuned resonator never crosses the probe window, so there is
        no crossing to fit.

    Notes
    -----
    When the mechanical signature vanishes (``g -> 0``), or its total
    weight over the map is below ``options.min_significance`` times the
    per-point noise, the mode parameters are not identifiable; they are
    returned as NaN, listed in ``diagnostics["non_identifiable"]`` and the
    fit is marked unconverged. Fits with a negative linewidth or
    ``kappa_e`` outside ``[0, kappa]`` are marked unconverged as well.
    """
    cal = cal or amap.calibration
    if cal is None:
        raise ValueError("a flux calibration is required")
    omega = TWO_PI * amap.frequency_axis
    omega_r_rows = np.asarray(voltage_to_frequency(cal, amap.flux_axis), float)
    if omega_r_rows.max() < omega[0] or omega_r_rows.min() > omega[-1]:
        raise BracketingError("resonator never enters the probe window")

    if initial_guess is None:
        p0 = _guess_anticrossing(amap, omega_r_rows)
        if not (omega_r_rows.min() <= p0[0] <= omega_r_rows.max()):
            raise BracketingError("the resonator is not tuned through the mechanical frequency")
    else:
        if isinstance(initial_guess, dict):
            initial_guess = [initial_guess[k] for k in ("omega_m", "gamma", "g", "kappa", "kappa_e")]
        p0 = np.asarray(initial_guess, dtype=float)

    def attempt(start):
        prob = _anticrossing_problem(omega, omega_r_rows, amap.s11, start, residual)
        return prob, _solve(prob, start, options)

    def physical(r):
        wm, gam, g, kappa, ke = r.values
        return bool(r.converged and gam > 0 and kappa > 0 and 0 <= ke <= kappa)

    def significance(prob, r):
        # the mode must stand out of the noise as a whole, not point by point
        wm, gam, g, kappa, ke = r.values
        a = kappa / 2 + 1j * (omega[None, :] - omega_r_rows[:, None])
        b = gam / 2 + 1j * (omega[None, :] - wm)
        signature = np.sqrt(np.sum(np.abs(ke / (a + g**2 / b) - ke / a) ** 2))
        noise = r.residual_norm / np.sqrt(max(prob.residual(prob.to_u(r.values)).size, 1))
        return float(signature / max(noise, 1e-12))

    def score(candidate):
        prob, r = candidate
        sig = significance(prob, r) if r.converged else 0.0
        found = physical(r) and sig >= options.min_significance
        return (found, physical(r), r.converged, -r.residual_norm)

    best = attempt(p0)
    starts = []
    if initial_guess is not None and not score(best)[0]:
        # a start far from the narrow mechanical feature can miss it; retry from the data
        p0 = _guess_anticrossing(amap, omega_r_rows)
        starts.append(p0)
    if initial_guess is None or starts:
        # weak modes hide in the noise of single traces; a matched scan finds them
        starts.append(_matched_guess(amap, omega_r_rows, p0[3], p0[4]))
    for start in starts:
        candidate = attempt(start)
        if score(candidate) > score(best):
            best = candidate
    problem, res = best

    values = res.values.copy()
    if np.isfinite(values[2]):
        values[2] = abs(values[2])
    extra = {}
    converged = res.converged
    errs = res.standard_errors.copy()
    if converged:
        sig = significance(problem, res)
        extra["significance"] = sig
        if sig < options.min_significance:
            extra["non_identifiable"] = ["omega_m", "gamma", "g"]
            values[:3] = np.nan
            errs[:3] = np.nan
            converged = False
        elif not physical(res):
            extra["unphysical"] = "linewidths outside their physical range"
            converged = False
    out = _reorder(res, values, errs, **extra)
    return FitResult(out.names, out.values, out.standard_errors, out.covariance,
                     out.residual_norm, out.iterations, converged, out.optimality,
                     out.diagnostics)


# ----------------------------------------------------------------------------
# flux calibration


def _canonical_flux(gain, offset):
    """Fold the symmetries of sqrt|cos| into gain > 0, offset in (-pi/2, pi/2]."""
    if gain < 0:
        gain, offset = -gain, -offset
    offset = offset - np.pi * np.ceil(offset / np.pi - 0.5)
    return gain, offset


def fit_flux_calibration(bias, frequency, initial_guess=None,
                         options: FitOptions = FitOptions()) -> FitResult:
    """Fit ``w(V) = w_max sqrt(|cos(G V + phi)|)`` to resonance positions.

    Parameters
    ----------
    bias : array_like
        Bias voltages (or any axis linear in flux).
    frequency : array_like
        Angular resonance frequencies at those biases.

    Returns
    -------
    FitResult
        Parameters ``omega_max`` (rad/s), ``gain`` (rad/V) and ``offset``
        (rad), with ``gain > 0`` and ``offset`` folded into (-pi/2, pi/2].
        ``omega_max`` may lie above every observed frequency.
    """
    v = np.asarray(bias, dtype=float).ravel()
    w = np.asarray(frequency, dtype=float).ravel()
    if v.size != w.size:
        raise ValueError("bias and frequency must have equal length")
    if v.size < 4:
        raise FitError("at least four calibration points are required")
    order = np.argsort(v)
    v, w = v[order], w[order]
    diagnostics = {}

    span = np.ptp(w)
    if span <= 1e-12 * np.mean(np.abs(w)):
        n = 3
        nan = np.full(n, np.nan)
        return FitResult(("omega_max", "gain", "offset"), np.array([np.max(w), np.nan, np.nan]),
                         nan, np.full((n, n), np.nan), 0.0, 0, False, 0.0,
                         {"non_identifiable": ["gain", "offset"],
                          "message": "constant frequency: gain is not identifiable"})

    steps = np.sign(np.diff(w))
    steps = steps[steps != 0]
    if steps.size and np.any(steps != steps[0]):
        diagnostics["warning"] = ("frequencies are not monotone in bias: the points may "
                                  "straddle a sweet spot or a cusp of the tuning curve")

    if initial_guess is None:
        p0 = _guess_flux(v, w)
    else:
        if isinstance(initial_guess, FluxCalibration):
            initial_guess = (initial_guess.max_frequency, initial_guess.gain, initial_guess.offset)
        p0 = np.asarray(initial_guess, dtype=float)

    vscale = max(np.ptp(v), 1e-300)

    def model(p):
        wmax, gain, off = p
        return wmax * np.sqrt(np.abs(np.cos(gain * v + off)))

    def jacobian(p):
        wmax, gain, off = p
        th = gain * v + off
        c = np.cos(th)
        root = np.sqrt(np.maximum(np.abs(c), 1e-300))
        dth = -wmax * np.sign(c) * np.sin(th) / (2 * root)
        return np.column_stack([root, dth * v, dth])

    problem = _Problem(("omega_max", "gain", "offset"), np.array([p0[0], 0.0, 0.0]),
                       np.array([span, 1 / vscale, 1.0]), model, jacobian, w, "real")
    res = _solve(problem, p0, options)
    values = res.values.copy()
    if np.all(np.isfinite(values)):
        gain, off = _canonical_flux(values[1], values[2])
        values[1], values[2] = gain, off
    return _reorder(res, values, **diagnostics)


def _guess_flux(v, w):
    """Linearize ``arccos((w/w_max)**2) = G V + phi`` for trial maxima; keep the best line."""
    best = None
    top = np.max(w)
    for factor in np.linspace(1.0005, 2.0, 200):
        wmax = top * factor
        theta = np.arccos(np.clip((w / wmax) ** 2, -1, 1))
        A = np.column_stack([v, np.ones_like(v)])
        coef, *_ = np.linalg.lstsq(A, theta, rcond=None)
        pred = wmax * np.sqrt(np.abs(np.cos(A @ coef)))
        cost = np.sum((pred - w) ** 2)
        if best is None or cost < best[0]:
            best = (cost, wmax, coef[0], coef[1])
    return np.array(best[1:])


# ----------------------------------------------------------------------------
# Kerr calibration


def select_weak_drive(power, shift, max_deviation: float = 0.1) -> np.ndarray:
    """Indices of the leading points whose local slope stays near the initial one.

    The initial slope is the chord from the origin to the first non-zero
    power point; each following point's slope with respect to its
    predecessor must deviate from it by less than ``max_deviation``.
    Zero-power points are always kept.
    """
    p = np.asarray(power, dtype=float)
    s = np.asarray(shift, dtype=float)
    order = np.argsort(p, kind="stable")
    keep = [i for i in order if p[i] == 0]
    nz = [i for i in order if p[i] > 0]
    if not nz:
        return np.array(keep, dtype=int)
    s0 = s[nz[0]] / p[nz[0]]
    keep.append(nz[0])
    prev = nz[0]
    for i in nz[1:]:
        dp = p[i] - p[prev]
        if dp <= 0:
            local = s[i] / p[i]
        else:
            local = (s[i] - s[prev]) / dp
        if s0 == 0 or abs(local - s0) >= max_deviation * abs(s0):
            break
        keep.append(i)
        prev = i
    return np.array(keep, dtype=int)


def fit_kerr_calibration(power, shift, kerr: float, *, convention: str = "half",
                         max_deviation: float = 0.1, min_points: int = 3) -> FitResult:
    """Photon number per unit probe power from weak-drive resonance pulls.

    A line through the origin is fitted to ``shift`` versus ``power`` over
    the weak-drive points picked by :func:`select_weak_drive`. The slope is
    converted with ``n = shift / (kerr/2)`` (``convention="half"``, the
    usual calibration formula) or ``n = shift / kerr``
    (``convention="mean_field"``, the pull of the mean-field fixed point);
    the two differ by exactly a factor of two.

    Parameters
    ----------
    power : array_like
        Probe power in any consistent unit (photons/s for ``|alpha_in|**2``).
    shift : array_like
        Resonance pulls in rad/s.
    kerr : float
        Kerr coefficient in rad/s (negative).
    """
    if convention not in ("half", "mean_field"):
        raise ValueError(f"unknown convention {convention!r}")
    if kerr == 0:
        raise ValueError("kerr coefficient must be non-zero")
    p = np.asarray(power, dtype=float).ravel()
    s = np.asarray(shift, dtype=float).ravel()
    if p.size != s.size:
        raise ValueError("power and shift must have equal length")

    idx = select_weak_drive(p, s, max_deviation)
    used = idx[p[idx] > 0]
    if used.size < min_points:
        raise InsufficientLinearRangeError(
            f"only {used.size} points lie in the linear weak-drive regime "
            f"(need {min_points})")

    x, y = p[used], s[used]
    sxx = np.sum(x * x)
    slope = np.sum(x * y) / sxx
    resid = y - slope * x
    dof = max(x.size - 1, 1)
    slope_err = np.sqrt(np.sum(resid**2) / dof / sxx)
    per_photon = kerr / 2 if convention == "half" else kerr
    value = slope / per_photon
    err = slope_err / abs(per_photon)
    return FitResult(("photons_per_unit_power",), np.array([value]), np.array([err]),
                     np.array([[err**2]]), float(np.linalg.norm(resid)), 1, True, 0.0,
                     {"slope": float(slope), "slope_error": float(slope_err),
                      "points_used": used.tolist(), "convention": convention})


# ----------------------------------------------------------------------------
# normalization and surveys


def normalize_spectrum(raw: Spectrum, reference: Spectrum) -> Spectrum:
    """Divide a trace by a reference trace taken on the same grid."""
    if raw.frequencies.shape != reference.frequencies.shape or not np.array_equal(
            raw.frequencies, reference.frequencies):
        raise NormalizationError("raw and reference spectra are on different grids")
    if np.any(reference.s11 == 0):
        raise NormalizationError("reference spectrum has zero points")
    return Spectrum(raw.frequencies, raw.s11 / reference.s11, dict(raw.metadata))


@dataclass
class SurveyResult:
    rows: list
    failures: list

    def __len__(self):
        return len(self.rows)


def _survey_row(index, amap, cal, options):
    res = fit_anticrossing(amap, cal, options=options)
    if not res.converged:
        raise FitError(res.diagnostics.get("message", "fit did not converge")
                       if "non_identifiable" not in res.diagnostics
                       else "mode parameters are not identifiable")
    wm, gam, g, kappa, ke = res.values
    mode = MechanicalMode(wm, gam, g)
    r = ResonatorParams(wm, kappa, float(np.clip(ke, 0, kappa)))
    return {
        "index": index,
        "omega_m": wm, "omega_m_err": res.error("omega_m"),
        "gamma": gam, "gamma_err": res.error("gamma"),
        "g": g, "g_err": res.error("g"),
        "kappa": kappa, "kappa_e": ke,
        "Q_m": quality_factor(mode),
        "C": cooperativity(mode, r),
        "fit": res,
    }


def mode_survey(maps: Sequence[AnticrossingMap], cal=None, *, max_workers: int | None = None,
                options: FitOptions = FitOptions()) -> SurveyResult:
    """Fit every anti-crossing map and tabulate the mechanical modes.

    ``cal`` is a single calibration shared by all maps, a sequence with one
    per map, or ``None`` to use each map's own calibration. A map whose fit
    fails is recorded in ``failures`` as ``(index, message)`` and the survey
    carries on.
    """
    maps = list(maps)
    if cal is None or isinstance(cal, FluxCalibration):
        cals = [cal] * len(maps)
    else:
        cals = list(cal)
        if len(cals) != len(maps):
            raise ValueError("one calibration per map is required")

    def task(i):
        try:
            return _survey_row(i, maps[i], cals[i], options), None
        except (ValueError, FloatingPointError, np.linalg.LinAlgError) as exc:
            log.warning("survey map %d failed: %s", i, exc)
            return None, (i, str(exc))

    if max_workers and max_workers > 1 and len(maps) > 1:
        with ThreadPoolExecutor(max_workers=max_workers) as pool:
            outcomes = list(pool.map(task, range(len(maps))))
    else:
        outcomes = [task(i) for i in range(len(maps))]

    rows = [row for row, _ in outcomes if row is not None]
    failures = [fail for _, fail in outcomes if fail is not None]
    rows.sort(key=lambda row: row["omega_m"])
    return SurveyResult(rows, failures)


def model_from_fit(result: FitResult, chi: float = 0.0) -> SystemModel:
    """Single-mode system model at the mechanical frequency from an anti-crossing fit."""
    wm, gam, g, kappa, ke = (result[k] for k in ("omega_m", "gamma", "g", "kappa", "kappa_e"))
    return SystemModel(ResonatorParams(wm, kappa, ke), (MechanicalMode(wm, gam, g),), chi)
