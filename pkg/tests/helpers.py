"""Shared hand-derived oracles used across the test modules.

The closed forms below are independent chain-rule derivations for the
modulated second-order scalar symbol a(x, xi) = (2 + sin x) <xi>^2 in one
dimension; the library paths under test never see them.
"""

import numpy as np


def g(x):
    return 2.0 + np.sin(x)


def a_val(x, xi):
    return g(x) * (1.0 + xi ** 2)


def a_x(x, xi):
    return np.cos(x) * (1.0 + xi ** 2)


def a_xx(x, xi):
    return -np.sin(x) * (1.0 + xi ** 2)


def a_xi(x, xi):
    return g(x) * 2.0 * xi


def a_xixi(x, xi):
    return g(x) * 2.0


def a_xxi(x, xi):
    return np.cos(x) * 2.0 * xi


def a_xxxi(x, xi):
    return -np.sin(x) * 2.0 * xi


def a_xxixi(x, xi):
    return np.cos(x) * 2.0


def g0(x, xi, lam):
    return 1.0 / (a_val(x, xi) - lam)


def g1_hand(x, xi, lam):
    """First correction with the cancelling sign: -i a_xi a_x G^3."""
    return -1j * a_xi(x, xi) * a_x(x, xi) * g0(x, xi, lam) ** 3


def dg1_dxi_hand(x, xi, lam):
    G = g0(x, xi, lam)
    P = a_xi(x, xi) * a_x(x, xi)
    dP = a_xixi(x, xi) * a_x(x, xi) + a_xi(x, xi) * a_xxi(x, xi)
    return -1j * (dP * G ** 3 - 3.0 * P * a_xi(x, xi) * G ** 4)


def d2g1_dxi2_hand(x, xi, lam):
    # with P = a_xi a_x:  d2P = 2 a_xixi a_xxi + a_xi * d(a_xxi)/dxi,
    # and d(G^3) = -3 a_xi G^4,  d2(G^3) = -3 a_xixi G^4 + 12 a_xi^2 G^5
    G = g0(x, xi, lam)
    axi, ax = a_xi(x, xi), a_x(x, xi)
    axixi, axxi = a_xixi(x, xi), a_xxi(x, xi)
    P = axi * ax
    dP = axixi * ax + axi * axxi
    d2P = 2.0 * axixi * axxi + axi * (2.0 * np.cos(x))
    dG3 = -3.0 * axi * G ** 4
    d2G3 = -3.0 * axixi * G ** 4 + 12.0 * axi ** 2 * G ** 5
    return -1j * (d2P * G ** 3 + 2.0 * dP * dG3 + P * d2G3)


def d2g0_dxi2_hand(x, xi, lam):
    G = g0(x, xi, lam)
    return 2.0 * a_xi(x, xi) ** 2 * G ** 3 - a_xixi(x, xi) * G ** 2


def jm1_hand(x, xi, lam, N):
    """Truncation residual for N = 1, 2 (alpha budget <= N)."""
    G = g0(x, xi, lam)
    if N == 1:
        # (nu=0, |a|=1): d_xi G0 * D_x a
        return (-a_xi(x, xi) * G ** 2) * (-1j * a_x(x, xi))
    if N == 2:
        t02 = 0.5 * d2g0_dxi2_hand(x, xi, lam) * (-a_xx(x, xi))
        t11 = dg1_dxi_hand(x, xi, lam) * (-1j * a_x(x, xi))
        t12 = 0.5 * d2g1_dxi2_hand(x, xi, lam) * (-a_xx(x, xi))
        return t02 + t11 + t12
    raise ValueError("hand oracle covers N in {1, 2}")


def loglog_slope(xs, ys):
    xs = np.asarray(xs, dtype=float)
    ys = np.asarray(ys, dtype=float)
    keep = ys > 0
    return float(np.polyfit(np.log(xs[keep]), np.log(ys[keep]), 1)[0])
