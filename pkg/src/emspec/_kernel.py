"""Compiled Dormand-Prince 5(4) integrator for the mean-field equations.

State layout is ``[alpha, beta_1, ..., beta_K]``. The right-hand side is

    d alpha / dt  = diag[0] alpha - i sum_k g_k beta_k + drive + i kerr |alpha|^2 alpha
    d beta_k / dt = diag[k] beta_k - i g_k alpha

with ``diag[j] = i*(w_j - w_drive) - linewidth_j/2``. ``kerr = 0`` switches
the nonlinearity off.
"""
import numpy as np
from numba import njit

# Dormand-Prince tableau
_A21 = 1 / 5
_A31, _A32 = 3 / 40, 9 / 40
_A41, _A42, _A43 = 44 / 45, -56 / 15, 32 / 9
_A51, _A52, _A53, _A54 = 19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729
_A61, _A62, _A63, _A64, _A65 = 9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656
_B1, _B3, _B4, _B5, _B6 = 35 / 384, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84
# difference between the 5th and embedded 4th order weights
_E1, _E3, _E4, _E5, _E6, _E7 = (71 / 57600, -71 / 16695, 71 / 1920,
                                -17253 / 339200, 22 / 525, -1 / 40)


@njit(cache=True)
def rhs(y, diag, g, drive, kerr, out):
    a = y[0]
    s = 0j
    for k in range(1, y.shape[0]):
        s += g[k - 1] * y[k]
        out[k] = diag[k] * y[k] - 1j * g[k - 1] * a
    out[0] = diag[0] * a - 1j * s + drive + 1j * kerr * (a.real * a.real + a.imag * a.imag) * a


@njit(cache=True)
def integrate(y, diag, g, drive, kerr, rtol, atol, residual_tol, rate_scale,
              t_max, max_steps):
    """Integrate in place until the relative derivative norm drops below tolerance.

    Returns ``(t, steps, residual, converged)`` where ``residual`` is
    ``|dy/dt| / (rate_scale |y|)`` at the final state.
    """
    n = y.shape[0]
    k1 = np.empty(n, np.complex128)
    k2 = np.empty(n, np.complex128)
    k3 = np.empty(n, np.complex128)
    k4 = np.empty(n, np.complex128)
    k5 = np.empty(n, np.complex128)
    k6 = np.empty(n, np.complex128)
    k7 = np.empty(n, np.complex128)
    yt = np.empty(n, np.complex128)
    yn = np.empty(n, np.complex128)

    rhs(y, diag, g, drive, kerr, k1)
    t = 0.0
    h = 1e-2 / rate_scale
    steps = 0
    residual = np.inf

    dn = 0.0
    ny = 0.0
    for i in range(n):
        dn += abs(k1[i]) ** 2
        ny += abs(y[i]) ** 2
    if ny > 0:
        residual = np.sqrt(dn / ny) / rate_scale
        if residual < residual_tol:
            return t, steps, residual, True

    while t < t_max and steps < max_steps:
        for i in range(n):
            yt[i] = y[i] + h * (_A21 * k1[i])
        rhs(yt, diag, g, drive, kerr, k2)
        for i in range(n):
            yt[i] = y[i] + h * (_A31 * k1[i] + _A32 * k2[i])
        rhs(yt, diag, g, drive, kerr, k3)
        for i in range(n):
            yt[i] = y[i] + h * (_A41 * k1[i] + _A42 * k2[i] + _A43 * k3[i])
        rhs(yt, diag, g, drive, kerr, k4)
        for i in range(n):
            yt[i] = y[i] + h * (_A51 * k1[i] + _A52 * k2[i] + _A53 * k3[i] + _A54 * k4[i])
        rhs(yt, diag, g, drive, kerr, k5)
        for i in range(n):
            yt[i] = y[i] + h * (_A61 * k1[i] + _A62 * k2[i] + _A63 * k3[i]
                                + _A64 * k4[i] + _A65 * k5[i])
        rhs(yt, diag, g, drive, kerr, k6)
        for i in range(n):
            yn[i] = y[i] + h * (_B1 * k1[i] + _B3 * k3[i] + _B4 * k4[i]
                                + _B5 * k5[i] + _B6 * k6[i])
        rhs(yn, diag, g, drive, kerr, k7)

        err = 0.0
        for i in range(n):
            e = h * (_E1 * k1[i] + _E3 * k3[i] + _E4 * k4[i]
                     + _E5 * k5[i] + _E6 * k6[i] + _E7 * k7[i])
            sc = atol + rtol * max(abs(y[i]), abs(yn[i]))
            err += (abs(e) / sc) ** 2
        err = np.sqrt(err / n)

        if err <= 1.0:
            t += h
            steps += 1
            dn = 0.0
            ny = 0.0
            for i in range(n):
                y[i] = yn[i]
                k1[i] = k7[i]
                dn += abs(k1[i]) ** 2
                ny += abs(y[i]) ** 2
            if ny > 0:
                residual = np.sqrt(dn / ny) / rate_scale
                if residual < residual_tol:
                    return t, steps, residual, True
            fac = 0.9 * err ** -0.2 if err > 0 else 5.0
            h *= min(5.0, max(0.2, fac))
        else:
            h *= max(0.2, 0.9 * err ** -0.2)
    return t, steps, residual, False
