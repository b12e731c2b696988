"""Bessel functions J0 and J1 of the first kind.

Power series up to the switch point, Hankel asymptotic expansion beyond;
both branches are accurate to well below 1e-10 over the working range
(arguments up to lambda ~ 5.52 in the disk solution, validated to 12 and
beyond in the tests).
"""

from __future__ import annotations

import numpy as np

_SWITCH = 12.0
_SERIES_TERMS = 40
_ASYMPTOTIC_TERMS = 22

# second zero of J0; Dirichlet eigenvalue of the disk pressure mode
J0_ZERO_2 = 5.52007811028631


def _series_j0(x):
    z = -0.25 * x * x
    term = np.ones_like(x)
    acc = np.ones_like(x)
    for k in range(1, _SERIES_TERMS):
        term = term * z / (k * k)
        acc += term
    return acc


def _series_j1(x):
    z = -0.25 * x * x
    term = np.ones_like(x)
    acc = np.ones_like(x)
    for k in range(1, _SERIES_TERMS):
        term = term * z / (k * (k + 1))
        acc += term
    return 0.5 * x * acc


def _hankel_pq(nu, x):
    """P and Q sums of the large-argument expansion for J_nu."""
    mu = 4.0 * nu * nu
    P = np.ones_like(x)
    Q = np.zeros_like(x)
    term = np.ones_like(x)
    for k in range(1, _ASYMPTOTIC_TERMS):
        term = term * (mu - (2 * k - 1) ** 2) / (8.0 * k * x)
        if k % 2 == 1:
            Q += term if k % 4 == 1 else -term
        else:
            P += term if k % 4 == 0 else -term
    return P, Q


def _asymptotic(nu, x):
    P, Q = _hankel_pq(nu, x)
    chi = x - (0.5 * nu + 0.25) * np.pi
    return np.sqrt(2.0 / (np.pi * x)) * (P * np.cos(chi) - Q * np.sin(chi))


def _eval(x, series, nu, odd):
    x = np.asarray(x, dtype=float)
    scalar = x.ndim == 0
    x = np.atleast_1d(x)
    sign = np.where(x < 0, -1.0 if odd else 1.0, 1.0)
    ax = np.abs(x)
    out = np.empty_like(ax)
    small = ax <= _SWITCH
    if small.any():
        out[small] = series(ax[small])
    if (~small).any():
        out[~small] = _asymptotic(nu, ax[~small])
    out *= sign
    return out[0] if scalar else out


def j0(x):
    """Bessel function of the first kind, order zero."""
    return _eval(x, _series_j0, 0.0, odd=False)


def j1(x):
    """Bessel function of the first kind, order one."""
    return _eval(x, _series_j1, 1.0, odd=True)
