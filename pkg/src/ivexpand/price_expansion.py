"""N-th order price expansion around the Black-Scholes price at vol sigma_0.

The correction u_n is obtained by applying

    L_n = sum_h  int_{t <= s_1 <= ... <= s_h <= T}  sum_{i_1 + ... + i_h = n} G_{i_1}(s_1) ... G_{i_h}(s_h)

to u_0 and evaluating at the expansion point. G_i is the i-th Taylor term of
the generator with (z - zbar) replaced by (z - zbar + m + C grad).

Symbolic mode (time-homogeneous models) keeps every time coefficient as an
exact polynomial in tau = T - t. Numeric mode evaluates the nested time
integrals at a given T with a spectral Gauss-Legendre scheme.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from numpy.polynomial import legendre

from .blackscholes import BSContext, bs_price, heat_kernel_term
from .errors import CancellationFailure, NonPositiveVariance, NoConvergence, SymbolicUnavailable
from .models import ModelSpec, taylor_tensor
from .opalgebra import (
    DegreeCap,
    NormalOrderedOperator,
    TimePoly,
    op_compose,
    op_from_taylor_generator,
    op_reduce_at_center,
)

MAX_ORDER = 4
GAUSS_NODES = 16
QUADRATURE_RTOL = 1e-10
REMAINDER_TOL = 1e-9


@dataclass(frozen=True)
class ExpansionContext:
    """Model, order and expansion point for the price / IV expansion.

    ``mode`` is "symbolic" (exact tau-polynomials, time-homogeneous models
    only) or "numeric" (nested quadrature at each requested maturity).
    """

    model: ModelSpec
    N: int = 2
    t: float = 0.0
    zbar: tuple | None = None
    mode: str = "symbolic"
    max_order: int = MAX_ORDER

    def __post_init__(self):
        if not 0 <= self.N <= self.max_order:
            raise ValueError(f"order N must be in 0..{self.max_order}")
        if self.mode not in ("symbolic", "numeric"):
            raise ValueError("mode must be 'symbolic' or 'numeric'")
        if self.mode == "symbolic" and not self.model.time_homogeneous:
            raise SymbolicUnavailable(f"model {self.model.name} has time-dependent coefficients")
        zbar = self.model.z0 if self.zbar is None else tuple(float(c) for c in self.zbar)
        if len(zbar) != self.model.dim:
            raise ValueError("expansion point has wrong dimension")
        if not self.model.in_cylinder(zbar):
            raise ValueError("expansion point outside the model's validity cylinder")
        object.__setattr__(self, "zbar", zbar)

    @property
    def x(self) -> float:
        return self.zbar[0]

    @property
    def cap(self) -> DegreeCap:
        return DegreeCap.for_order(max(self.N, 1))

    def with_order(self, N: int) -> "ExpansionContext":
        return ExpansionContext(self.model, N, self.t, self.zbar, self.mode, self.max_order)

    @cached_property
    def _symbolic_heat_coeffs(self) -> list[dict[int, dict[int, float]]]:
        """Per n: {j: {tau power: coeff}} with u_n = sum_j g_j d^j (d^2 - d) u_0."""
        tensor = taylor_tensor(self.model, self.t, self.zbar, self.N)
        L = _symbolic_L(tensor, self.N, self.cap)
        out = [{}]
        for n in range(1, self.N + 1):
            f = {j: c.tau_coeffs() for j, c in op_reduce_at_center(L[n]).items()}
            out.append(_heat_divide(f))
        return out


@dataclass(frozen=True)
class UnCoefficients:
    """u_n = sum_j f[n][j] d_x^j u_0 = sum_j g[n][j] d_x^j (d_x^2 - d_x) u_0 at a fixed maturity."""

    tau: float
    sigma0: float
    f: list = field(default_factory=list)
    g: list = field(default_factory=list)


def sigma0(ctx: ExpansionContext, T: float | None = None) -> float:
    """Root mean square of a_11(., zbar) over [t, T]."""
    if ctx.model.time_homogeneous:
        var = ctx.model.coefficients(ctx.t, ctx.zbar)[0][0, 0]
    else:
        if T is None or T <= ctx.t:
            raise ValueError("need T > t for a time-dependent model")
        nodes, weights = _gauss(T - ctx.t, 2 * GAUSS_NODES)
        vals = [ctx.model.coefficients(ctx.t + s, ctx.zbar)[0][0, 0] for s in nodes]
        var = float(np.dot(weights, vals)) / (T - ctx.t)
    if not var > 0.0:
        raise NonPositiveVariance(f"integrated variance {var} at {ctx.zbar}")
    return math.sqrt(var)


def index_sets(n: int, h: int):
    """Compositions (i_1, ..., i_h) of n into h positive parts."""
    if h == 1:
        if n >= 1:
            yield (n,)
        return
    for first in range(1, n - h + 2):
        for rest in index_sets(n - first, h - 1):
            yield (first,) + rest


def build_Ln(ctx: ExpansionContext, n: int, T: float | None = None) -> NormalOrderedOperator:
    """L_n as a normal-ordered operator.

    Symbolic mode returns TimePoly coefficients in tau (stored as r_0); numeric
    mode needs T and returns floats. Terms that differentiate in a factor
    direction are dropped, since u_0 only depends on x.
    """
    if not 1 <= n <= ctx.N:
        raise ValueError(f"n must be in 1..{ctx.N}")
    if ctx.mode == "symbolic":
        tensor = taylor_tensor(ctx.model, ctx.t, ctx.zbar, n)
        return _symbolic_L(tensor, n, ctx.cap)[n]
    return _numeric_L(ctx, T, GAUSS_NODES)[n]


def _drop_factor_derivatives(op: NormalOrderedOperator) -> NormalOrderedOperator:
    return op.filter(lambda g, a: not any(a[1:]))


def _symbolic_L(tensor, N, cap) -> list:
    dim, center = tensor.dim, tensor.center
    a_mat, a_vec = tensor.entries[(0,) * dim]

    def shifts(level):
        m = [TimePoly.var(level, 1, float(a_vec[i])) for i in range(dim)]
        C = [[TimePoly.var(level, 1, float(a_mat[i, j])) for j in range(dim)] for i in range(dim)]
        return m, C

    # G[i][d]: G_i with integration variable of depth d (counted from the right)
    G = {}
    for d in range(N):
        m, C = shifts(d)
        for i in range(1, N - d + 1):
            G[i, d] = op_from_taylor_generator(tensor, i, m, C, cap)
    # right[h, r]: sum over (i_1..i_h) with sum r of G_{i_1}(depth h-1) ... G_{i_h}(depth 0)
    right = {(0, 0): NormalOrderedOperator.identity(dim, center, TimePoly.constant(1.0))}
    for h in range(1, N + 1):
        for r in range(h, N + 1):
            acc = NormalOrderedOperator.zero(dim, center)
            for i in range(1, r - h + 2):
                tail = right.get((h - 1, r - i))
                if tail is None:
                    continue
                acc = acc + _drop_factor_derivatives(op_compose(G[i, h - 1], tail, cap))
            right[h, r] = acc
    L = [None]
    for n in range(1, N + 1):
        acc = NormalOrderedOperator.zero(dim, center)
        for h in range(1, n + 1):
            op = right[h, n]
            terms = {k: _reverse_levels(c, h).integrate_simplex(h) for k, c in op.terms.items()}
            acc = acc + NormalOrderedOperator(dim, center, terms)
        L.append(acc)
    return L


def _reverse_levels(p: TimePoly, h: int) -> TimePoly:
    """Relabel depth-from-the-right variables to left-to-right simplex order."""
    out = {}
    for e, c in p.terms.items():
        e = tuple(e) + (0,) * (h - len(e))
        out[tuple(reversed(e))] = c
    return TimePoly(out)


def _gauss(length: float, n: int):
    x, w = legendre.leggauss(n)
    return 0.5 * length * (x + 1.0), 0.5 * length * w


def _integration_matrices(length: float, n: int):
    """Spectral matrices: (P f)(s_a) = int_0^{s_a} f, (Q f)(s_a) = int_{s_a}^{length} f."""
    x, w = legendre.leggauss(n)
    V = legendre.legvander(x, n - 1)
    Vinv = np.linalg.inv(V)
    P = np.empty((n, n))
    for b in range(n):
        anti = legendre.legint(Vinv[:, b], lbnd=-1.0)
        P[:, b] = legendre.legval(x, anti)
    P *= 0.5 * length
    # int over the whole interval of the b-th Lagrange basis is the Gauss weight
    return P, 0.5 * length * w[None, :] - P


def _numeric_L(ctx: ExpansionContext, T: float, nodes: int) -> list:
    if T is None or T <= ctx.t:
        raise ValueError("numeric mode needs T > t")
    dim, center, N, cap = ctx.model.dim, ctx.zbar, ctx.N, ctx.cap
    tau = T - ctx.t
    s, w = _gauss(tau, nodes)
    P, Q = _integration_matrices(tau, nodes)
    tensors = [taylor_tensor(ctx.model, ctx.t + sa, center, N) for sa in s]
    base = [tt.entries[(0,) * dim] for tt in tensors]
    a_mat = np.array([b[0] for b in base])
    a_vec = np.array([b[1] for b in base])
    m = np.einsum("ab,bi->ai", P, a_vec)
    C = np.einsum("ab,bij->aij", P, a_mat)
    G = {(i, a): op_from_taylor_generator(tensors[a], i, list(m[a]), C[a].tolist(), cap)
         for i in range(1, N + 1) for a in range(nodes)}

    def combine(ops, weights):
        acc = NormalOrderedOperator.zero(dim, center)
        for op, wt in zip(ops, weights):
            if wt != 0.0 and len(op):
                acc = acc + op.scale(float(wt))
        return acc

    right = {}
    for r in range(1, N + 1):
        right[1, r] = [_drop_factor_derivatives(G[r, a]) for a in range(nodes)]
    for h in range(2, N + 1):
        for r in range(h, N + 1):
            per_node = []
            for a in range(nodes):
                acc = NormalOrderedOperator.zero(dim, center)
                for i in range(1, r - h + 2):
                    inner = combine(right[h - 1, r - i], Q[a])
                    if len(inner):
                        acc = acc + _drop_factor_derivatives(op_compose(G[i, a], inner, cap))
                per_node.append(acc)
            right[h, r] = per_node
    L = [None]
    for n in range(1, N + 1):
        acc = NormalOrderedOperator.zero(dim, center)
        for h in range(1, n + 1):
            acc = acc + combine(right[h, n], w)
        L.append(acc)
    return L


def _heat_divide(f: dict) -> dict:
    """Write sum_j f_j D^j as (sum_j g_j D^j)(D^2 - D); coefficients are dicts or floats.

    The remainder must vanish up to rounding, otherwise CancellationFailure.
    """
    if not f:
        return {}
    as_dict = isinstance(next(iter(f.values())), dict)

    def add(a, b, scale=1.0):
        if as_dict:
            out = dict(a)
            for p, c in b.items():
                out[p] = out.get(p, 0.0) + scale * c
            return out
        return a + scale * b

    zero = {} if as_dict else 0.0
    work = dict(f)
    top = max(work)
    g = {}
    for j in range(top, 1, -1):
        c = work.get(j, zero)
        g[j - 2] = c
        # subtract c D^{j-2}(D^2 - D) = c D^j - c D^{j-1}
        work[j] = add(work.get(j, zero), c, -1.0)
        work[j - 1] = add(work.get(j - 1, zero), c, 1.0)
    scale = max([_magnitude(c) for c in f.values()] + [1e-300])
    remainder = {j: work.get(j, zero) for j in (0, 1)}
    bad = {j: c for j, c in remainder.items() if _magnitude(c) > REMAINDER_TOL * scale}
    if bad:
        raise CancellationFailure(bad)
    return {j: c for j, c in g.items() if _magnitude(c) > 0.0}


def _magnitude(c) -> float:
    if isinstance(c, dict):
        return max((abs(v) for v in c.values()), default=0.0)
    return abs(c)


def _eval_tau(poly: dict, tau: float) -> float:
    return sum(c * tau ** p for p, c in poly.items())


def un_coefficients(ctx: ExpansionContext, T: float) -> UnCoefficients:
    """Coefficients of every u_n, n <= N, at maturity T (expansion point zbar)."""
    tau = T - ctx.t
    if not tau > 0.0:
        raise ValueError("need T > t")
    if ctx.mode == "symbolic":
        g = [{j: _eval_tau(p, tau) for j, p in row.items()} for row in ctx._symbolic_heat_coeffs]
    else:
        g = _numeric_heat_coeffs(ctx, T)
    f = []
    for row in g:
        fr = {}
        for j, c in row.items():
            fr[j + 2] = fr.get(j + 2, 0.0) + c
            fr[j + 1] = fr.get(j + 1, 0.0) - c
        f.append({j: c for j, c in fr.items() if c != 0.0})
    return UnCoefficients(tau, sigma0(ctx, T), f, g)


def _numeric_heat_coeffs(ctx: ExpansionContext, T: float) -> list:
    if ctx.N == 0:
        return [{}]
    coarse = _numeric_L(ctx, T, GAUSS_NODES)
    fine = _numeric_L(ctx, T, 2 * GAUSS_NODES)
    out = [{}]
    for n in range(1, ctx.N + 1):
        fc = op_reduce_at_center(coarse[n])
        ff = op_reduce_at_center(fine[n])
        scale = max([abs(c) for c in ff.values()] + [1e-300])
        for j in set(fc) | set(ff):
            if abs(fc.get(j, 0.0) - ff.get(j, 0.0)) > QUADRATURE_RTOL * scale:
                raise NoConvergence(f"nested quadrature for u_{n} did not settle (j={j})")
        out.append(_heat_divide(ff))
    return out


def price_bar_N(ctx: ExpansionContext, T: float, k: float) -> float:
    """u^BS(sigma_0) + sum_{n=1}^N u_n at (t, zbar; T, k)."""
    coeffs = un_coefficients(ctx, T)
    bs = BSContext(coeffs.sigma0, coeffs.tau, ctx.x, k)
    total = bs_price(bs)
    for row in coeffs.g[1:]:
        for j, c in row.items():
            total += c * heat_kernel_term(bs, j)
    return total


def price_corrections(ctx: ExpansionContext, T: float, k: float) -> list[float]:
    """[u_0, u_1, ..., u_N] at (t, zbar; T, k)."""
    coeffs = un_coefficients(ctx, T)
    bs = BSContext(coeffs.sigma0, coeffs.tau, ctx.x, k)
    return [bs_price(bs)] + [sum(c * heat_kernel_term(bs, j) for j, c in row.items())
                             for row in coeffs.g[1:]]
