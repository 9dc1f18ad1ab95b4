"""Implied-volatility expansion sigma_bar_N = sigma_0 + sigma_1 + ... + sigma_N.

Each correction follows the recursion

    sigma_n = u_n / vega - (1/n!) sum_{h=2}^n B_{n,h}(1! sigma_1, ..., (n-h+1)! sigma_{n-h+1}) R_h

with R_h the ratio d^h u^BS / d sigma^h over vega at sigma_0. The same code
runs on floats (a concrete (T, k)) and on BiPoly objects in w = k - x and
s = sqrt(tau), which yields the exact Taylor coefficients at expiry.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from functools import lru_cache
from typing import Callable

from .blackscholes import BSContext, _sigma_ratio
from .combinatorics import BiPoly, bell_partial, bipoly_assert_regular, hermite
from .errors import CancellationFailure, NegativeVolWarning, SymbolicUnavailable
from .price_expansion import ExpansionContext, sigma0, un_coefficients

LAMBDA_MAX = 5.0
TRUST_TAU_FRACTION = 0.25
REGULARITY_TOL = 1e-9


class VolQuote(float):
    """A float carrying an ``extrapolated`` flag (outside the parabolic trust region)."""

    extrapolated: bool

    def __new__(cls, value, extrapolated=False):
        obj = super().__new__(cls, value)
        obj.extrapolated = bool(extrapolated)
        return obj


@dataclass(frozen=True)
class IVExpansion:
    """The corrections sigma_0..sigma_N, as floats at (T, k) or as BiPolys."""

    ctx: ExpansionContext
    terms: tuple
    T: float | None = None
    k: float | None = None

    @property
    def symbolic(self) -> bool:
        return self.T is None

    def total(self):
        out = self.terms[0]
        for s in self.terms[1:]:
            out = out + s
        return out


def hermite_form(ctx: ExpansionContext, n: int, T: float) -> list[tuple[int, float]]:
    """u_n / vega = sum_m (sigma_0 sqrt(2 tau))^(-m) chi_m h_m(zeta); returns [(m, chi_m)]."""
    if not 1 <= n <= ctx.N:
        raise ValueError(f"n must be in 1..{ctx.N}")
    coeffs = un_coefficients(ctx, T)
    return [(j, c / (coeffs.sigma0 * coeffs.tau)) for j, c in sorted(coeffs.g[n].items())]


def _symbolic_hermite_rows(ctx: ExpansionContext) -> list[dict[int, dict[int, float]]]:
    """chi_{m,n} as tau-polynomials: g_j(tau) / (sigma_0 tau)."""
    s0 = sigma0(ctx)
    rows = []
    for row in ctx._symbolic_heat_coeffs:
        out = {}
        for j, poly in row.items():
            lead = poly.get(0, 0.0)
            if abs(lead) > REGULARITY_TOL * max(abs(c) for c in poly.values()):
                raise CancellationFailure({(j, 0): lead})
            out[j] = {p - 1: c / s0 for p, c in poly.items() if p >= 1}
        rows.append(out)
    return rows


def _recursion(N: int, sig0: float, first, zeta, s, s_inv, u_over_vega: Callable, regularize: Callable):
    """Run the sigma_n recursion on any ring; returns [first, sigma_1, ..., sigma_N]."""
    sig = [first]
    ratios = {}
    for n in range(1, N + 1):
        val = u_over_vega(n)
        if n >= 2:
            scaled = [math.factorial(i) * sig[i] for i in range(1, n)]
            corr = 0.0
            for h in range(2, n + 1):
                if h not in ratios:
                    ratios[h] = _sigma_ratio(h, sig0, zeta, s, s_inv)
                corr = corr + bell_partial(n, h, scaled[: n - h + 1]) * ratios[h]
            val = val - corr * (1.0 / math.factorial(n))
        sig.append(regularize(val))
    return sig


def iv_expansion(ctx: ExpansionContext, T: float | None = None, k: float | None = None) -> IVExpansion:
    """All sigma_n; symbolic (BiPoly in k - x and sqrt(tau)) when T and k are omitted."""
    if T is None:
        if ctx.mode != "symbolic":
            raise SymbolicUnavailable("symbolic IV corrections need a symbolic-mode context")
        sig0 = sigma0(ctx)
        s = BiPoly.monomial(0, 1)
        s_inv = BiPoly.monomial(0, -1)
        root2 = math.sqrt(2.0)
        # zeta = (x - k - sigma0^2 tau / 2) / (sigma0 sqrt(2 tau))
        zeta = BiPoly({(1, -1): -1.0 / (sig0 * root2), (0, 1): -sig0 / (2.0 * root2)})
        rows = _symbolic_hermite_rows(ctx)

        def u_over_vega(n):
            total = BiPoly()
            for j, poly in rows[n].items():
                chi = BiPoly({(0, 2 * p): c for p, c in poly.items()})
                total = total + chi * (sig0 * root2) ** (-j) * BiPoly.monomial(0, -j) * hermite(j, zeta)
            return total

        terms = _recursion(ctx.N, sig0, BiPoly.constant(sig0), zeta, s, s_inv, u_over_vega,
                           lambda p: bipoly_assert_regular(p, REGULARITY_TOL))
        return IVExpansion(ctx, tuple(terms))
    if k is None:
        raise ValueError("need both T and k, or neither")
    coeffs = un_coefficients(ctx, T)
    sig0 = coeffs.sigma0
    bs = BSContext(sig0, coeffs.tau, ctx.x, k)
    zeta = bs.zeta
    rt = math.sqrt(coeffs.tau)

    def u_over_vega(n):
        scale = 1.0 / (sig0 * math.sqrt(2.0) * rt)
        return sum(c / (sig0 * coeffs.tau) * scale ** j * hermite(j, zeta) for j, c in coeffs.g[n].items())

    terms = _recursion(ctx.N, sig0, sig0, zeta, rt, 1.0 / rt, u_over_vega, float)
    return IVExpansion(ctx, tuple(terms), T, k)


def sigma_n(expn: IVExpansion, n: int):
    """The n-th correction held by an expansion (float or BiPoly)."""
    return expn.terms[n]


def in_trust_region(ctx: ExpansionContext, T: float, k: float, lambda_max: float = LAMBDA_MAX) -> bool:
    tau = T - ctx.t
    M = ctx.model.M
    return (abs(ctx.x - k) <= lambda_max * math.sqrt(M * tau)
            and tau <= TRUST_TAU_FRACTION * ctx.model.horizon)


def sigma_bar_N(ctx: ExpansionContext, T: float, k: float, lambda_max: float = LAMBDA_MAX) -> VolQuote:
    """N-th order implied vol at (T, k), tagged when outside the trust region."""
    if not T > ctx.t:
        raise ValueError("need T > t")
    if ctx.mode == "symbolic":
        value = _symbolic_total(ctx).evaluate(k - ctx.x, T - ctx.t)
    else:
        value = float(iv_expansion(ctx, T, k).total())
    if value <= 0.0:
        warnings.warn(f"sigma_bar_{ctx.N} = {value} at T={T}, k={k}", NegativeVolWarning, stacklevel=2)
    return VolQuote(value, not in_trust_region(ctx, T, k, lambda_max))


@lru_cache(maxsize=64)
def _symbolic_total(ctx: ExpansionContext) -> BiPoly:
    return iv_expansion(ctx).total()


@dataclass(frozen=True)
class IVTaylorTable:
    """d_T^q d_k^m sigma_bar_N at (T, k) = (t, x_0), for 2q + m <= N."""

    entries: dict
    t: float
    x0: float
    y0: tuple
    order: int

    def __getitem__(self, qm):
        return self.entries[tuple(qm)]

    def rows(self):
        return sorted(self.entries.items())


def iv_taylor_coeffs(ctx: ExpansionContext) -> IVTaylorTable:
    if ctx.mode != "symbolic" or not ctx.model.time_homogeneous:
        raise SymbolicUnavailable("Taylor coefficients need a time-homogeneous model in symbolic mode")
    total = _symbolic_total(ctx)
    entries = {}
    for q in range(ctx.N // 2 + 1):
        for m in range(ctx.N - 2 * q + 1):
            entries[q, m] = math.factorial(q) * math.factorial(m) * total.coeff(m, 2 * q)
    return IVTaylorTable(entries, ctx.t, ctx.x, tuple(ctx.zbar[1:]), ctx.N)


def iv_taylor_eval(table: IVTaylorTable, T: float, k: float) -> float:
    if T < table.t:
        raise ValueError("need T >= t")
    tau, w = T - table.t, k - table.x0
    return sum(c * tau ** q * w ** m / (math.factorial(q) * math.factorial(m))
               for (q, m), c in table.entries.items())


def lv_time_derivative(sigma: Callable, dsigma: Callable, d2sigma: Callable, s: float) -> float:
    """ATM short-time slope in T of the implied vol of dS = sigma(S) S dW."""
    v, d1, d2 = sigma(s), dsigma(s), d2sigma(s)
    return s * s * v * v * d2 / 12.0 - s * s * v * d1 * d1 / 24.0 + s * v * v * d1 / 12.0


def durrleman_time_derivative(sigma: Callable, dsigma: Callable, d2sigma: Callable, s: float) -> float:
    """Negative control: the alternative closed form with a -4/3 cross term.

    Kept to reproduce the third column of the CEV comparison table; it does
    not agree with finite differences of the reference implied vol.
    """
    v, d1, d2 = sigma(s), dsigma(s), d2sigma(s)
    return s * s * v * v * d2 / 12.0 - 4.0 * s * s * v * d1 * d1 / 3.0 + s * v * v * d1 / 12.0
