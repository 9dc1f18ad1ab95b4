"""Independent high-precision oracles shared by the test modules.

Finite differences are taken in mpmath at 40 digits with central stencils and
two Richardson steps, so truncation and rounding are both far below the
tolerances asserted against them.
"""
import math

import mpmath as mp

mp.mp.dps = 40


def mp_bs_price(sigma, tau, x, k):
    sigma, tau, x, k = (mp.mpf(v) for v in (sigma, tau, x, k))
    v = sigma * mp.sqrt(tau)
    dp = (x - k) / v + v / 2
    return mp.exp(x) * mp.ncdf(dp) - mp.exp(k) * mp.ncdf(dp - v)


def _stencil(f, x0, n, h):
    total = mp.mpf(0)
    for i in range(n + 1):
        total += (-1) ** i * math.comb(n, i) * f(x0 + (mp.mpf(n) / 2 - i) * h)
    return total / h ** n


def richardson_derivative(f, x0, n, h):
    """n-th derivative of f at x0: central differences at h, h/2, h/4, two Richardson steps."""
    if n == 0:
        return f(mp.mpf(x0))
    x0, h = mp.mpf(x0), mp.mpf(h)
    d = [_stencil(f, x0, n, h / 2 ** i) for i in range(3)]
    r1 = [(4 * b - a) / 3 for a, b in zip(d, d[1:])]
    return (16 * r1[1] - r1[0]) / 15


def fd_sigma(n, sigma, tau, x, k):
    return richardson_derivative(lambda s: mp_bs_price(s, tau, x, k), sigma, n, mp.mpf(sigma) * mp.mpf("1e-4"))


def fd_xk(m_x, m_k, sigma, tau, x, k):
    h = mp.mpf(sigma) * mp.sqrt(tau) * mp.mpf("1e-4")

    def in_x(kk):
        return richardson_derivative(lambda xx: mp_bs_price(sigma, tau, xx, kk), x, m_x, h)

    return richardson_derivative(in_x, k, m_k, h)


def fd_tau(q, m_k, sigma, tau, x, k):
    h = mp.mpf(tau) * mp.mpf("1e-4")
    return richardson_derivative(lambda t: fd_xk(0, m_k, sigma, t, x, k), tau, q, h)
