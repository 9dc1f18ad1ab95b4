"""Black-Scholes analytics in log-spot / log-strike coordinates, zero rates.

All derivatives are closed-form Gaussian-Hermite expressions. Notation:

    d_pm = (x - k +- sigma^2 tau / 2) / (sigma sqrt(tau))
    zeta = (x - k - sigma^2 tau / 2) / (sigma sqrt(2 tau)) = d_minus / sqrt(2)
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import ndtr

from .combinatorics import hermite, vega_ratio_ccoeffs
from .errors import NoConvergence, OutOfArbitrageBounds

MAX_XK_ORDER = 14
MAX_TAU_ORDER = 3
MAX_TAU_K_ORDER = 6
IV_LOWER, IV_UPPER = 1e-10, 10.0
IV_MAX_ITER = 100

_SQRT_2PI = math.sqrt(2.0 * math.pi)


@dataclass(frozen=True)
class BSContext:
    sigma: float
    tau: float
    x: float
    k: float

    def __post_init__(self):
        if not (self.sigma > 0.0 and self.tau > 0.0):
            raise ValueError(f"need sigma > 0 and tau > 0, got {self.sigma}, {self.tau}")

    @property
    def total_vol(self) -> float:
        return self.sigma * math.sqrt(self.tau)

    @property
    def d_plus(self) -> float:
        v = self.total_vol
        return (self.x - self.k) / v + 0.5 * v

    @property
    def d_minus(self) -> float:
        v = self.total_vol
        return (self.x - self.k) / v - 0.5 * v

    @property
    def zeta(self) -> float:
        return self.d_minus / math.sqrt(2.0)

    def with_sigma(self, sigma: float) -> "BSContext":
        return BSContext(sigma, self.tau, self.x, self.k)


def gaussian_kernel(t: float, z):
    """One-dimensional heat kernel (2 pi t)^(-1/2) exp(-z^2 / 2t)."""
    return np.exp(-np.square(z) / (2.0 * t)) / np.sqrt(2.0 * np.pi * t)


def intrinsic(x: float, k: float) -> float:
    return max(math.exp(x) - math.exp(k), 0.0)


def bs_price(ctx: BSContext) -> float:
    """e^x N(d+) - e^k N(d-), computed via parity in the money to keep the time value."""
    dp, dm = ctx.d_plus, ctx.d_minus
    if ctx.x >= ctx.k:
        put = math.exp(ctx.k) * ndtr(-dm) - math.exp(ctx.x) * ndtr(-dp)
        return float((math.exp(ctx.x) - math.exp(ctx.k)) + max(put, 0.0))
    return float(max(math.exp(ctx.x) * ndtr(dp) - math.exp(ctx.k) * ndtr(dm), 0.0))


def bs_price_limit(sigma: float, tau: float, x: float, k: float) -> float:
    """Total version of bs_price: returns the intrinsic value when sigma*sqrt(tau) == 0."""
    if sigma == 0.0 or tau == 0.0:
        return intrinsic(x, k)
    return bs_price(BSContext(sigma, tau, x, k))


def bs_vega(ctx: BSContext) -> float:
    return math.exp(ctx.k) * math.sqrt(ctx.tau) * math.exp(-ctx.zeta ** 2) / _SQRT_2PI


def bs_sigma_deriv_ratio(n: int, ctx: BSContext) -> float:
    """d^n u / d sigma^n divided by vega, n >= 1.

    Uses the c-coefficient double sum with physicists' Hermite polynomials,
    H_j = (-1)^j h_j.
    """
    if n < 1:
        raise ValueError("n >= 1 required")
    if n == 1:
        return 1.0
    return _sigma_ratio(n, ctx.sigma, ctx.zeta, math.sqrt(ctx.tau), 1.0 / math.sqrt(ctx.tau))


def _sigma_ratio(n, sigma, zeta, s, s_inv):
    """Ring-generic body of bs_sigma_deriv_ratio; s = sqrt(tau), s_inv = 1/s."""
    c = vega_ratio_ccoeffs(n)
    inv_scale = 1.0 / (sigma * math.sqrt(2.0))
    total = 0.0
    for q in range(n // 2 + 1):
        cq = c[n - 2 * q]
        r = n - q - 1
        for p in range(r + 1):
            j = p + r
            coeff = cq * sigma ** (n - 2 * q - 1) * math.comb(r, p) * inv_scale ** j * (-1) ** j
            total = total + coeff * _ipow(s, 2 * r) * _ipow(s_inv, j) * hermite(j, zeta)
    return total


def _ipow(v, n):
    if isinstance(v, float):
        return v ** n
    out = 1.0
    for _ in range(n):
        out = out * v
    return out


def heat_kernel_term(ctx: BSContext, p: int) -> float:
    """d_x^p (d_x^2 - d_x) u^BS."""
    v = ctx.total_vol
    base = math.exp(ctx.k) * math.exp(-ctx.zeta ** 2) / (_SQRT_2PI * v)
    return base * (v * math.sqrt(2.0)) ** (-p) * hermite(p, ctx.zeta)


def bs_x_deriv(ctx: BSContext, j: int) -> float:
    """d_x^j u^BS for 0 <= j <= MAX_XK_ORDER."""
    if j < 0 or j > MAX_XK_ORDER:
        raise ValueError(f"x-derivative order {j} outside 0..{MAX_XK_ORDER}")
    if j == 0:
        return bs_price(ctx)
    delta = math.exp(ctx.x) * float(ndtr(ctx.d_plus))
    if j == 1:
        return delta
    # d^j = d^(j-2) (d^2 - d) + d^(j-1), unrolled down to d^1
    return delta + sum(heat_kernel_term(ctx, p) for p in range(j - 1))


def _poly_mul(a: dict[int, float], b: dict[int, float]) -> dict[int, float]:
    out: dict[int, float] = {}
    for i, ca in a.items():
        for j, cb in b.items():
            out[i + j] = out.get(i + j, 0.0) + ca * cb
    return out


def _apply_d_poly(ctx: BSContext, poly: dict[int, float]) -> float:
    return sum(c * bs_x_deriv(ctx, j) for j, c in poly.items() if c != 0.0)


def bs_xk_derivs(ctx: BSContext, m_x: int, m_k: int) -> float:
    """d_x^m_x d_k^m_k u^BS, using d_k = 1 - d_x on u^BS."""
    if m_x < 0 or m_k < 0 or m_x + m_k > MAX_XK_ORDER:
        raise ValueError(f"order cap exceeded: m_x + m_k <= {MAX_XK_ORDER}")
    poly = {m_x: 1.0}
    for _ in range(m_k):
        poly = _poly_mul(poly, {0: 1.0, 1: -1.0})
    return _apply_d_poly(ctx, poly)


def bs_tau_deriv(ctx: BSContext, q: int, m_k: int) -> float:
    """d_tau^q d_k^m_k u^BS via d_tau u = (sigma^2 / 2)(d_x^2 - d_x) u."""
    if not (0 <= q <= MAX_TAU_ORDER and 0 <= m_k <= MAX_TAU_K_ORDER):
        raise ValueError("order cap exceeded")
    poly = {0: 1.0}
    for _ in range(m_k):
        poly = _poly_mul(poly, {0: 1.0, 1: -1.0})
    for _ in range(q):
        poly = _poly_mul(poly, {1: -0.5 * ctx.sigma ** 2, 2: 0.5 * ctx.sigma ** 2})
    return _apply_d_poly(ctx, poly)


def implied_vol(price: float, tau: float, x: float, k: float) -> float:
    """Black-Scholes implied volatility by bracketed Newton.

    Raises OutOfArbitrageBounds unless (e^x - e^k)^+ < price < e^x.
    """
    lower, upper = intrinsic(x, k), math.exp(x)
    if not (lower < price < upper):
        raise OutOfArbitrageBounds(f"price {price!r} outside ({lower!r}, {upper!r})")
    tol = 1e-14 * math.exp(x)

    def f(sig):
        return bs_price(BSContext(sig, tau, x, k)) - price

    lo, hi = IV_LOWER, IV_UPPER
    f_lo, f_hi = f(lo), f(hi)
    if f_lo > 0.0:
        return lo
    if f_hi < 0.0:
        raise NoConvergence(f"implied vol above {IV_UPPER}")
    # initial guess: ATM approximation, clipped into the bracket
    sig = min(max(math.sqrt(2.0 * math.pi / tau) * (price - lower) / upper, 1e-3), 5.0)
    sig = max(min(sig, hi), lo)
    for _ in range(IV_MAX_ITER):
        fs = f(sig)
        if fs == 0.0:
            return sig
        if fs > 0.0:
            hi = sig
        else:
            lo = sig
        vega = bs_vega(BSContext(sig, tau, x, k))
        step = fs / vega if vega > 0.0 else math.inf
        new = sig - step
        if not (lo < new < hi) or not math.isfinite(new):
            new = 0.5 * (lo + hi)
            step = sig - new
        if abs(step) <= 4.0 * np.finfo(float).eps * sig or hi - lo <= 4.0 * np.finfo(float).eps * hi:
            sig = new
            if abs(f(sig)) <= tol:
                return sig
            raise NoConvergence(f"stalled at sigma={sig} with residual {f(sig)}")
        sig = new
    if abs(f(sig)) <= tol:
        return sig
    raise NoConvergence(f"no convergence after {IV_MAX_ITER} iterations")
