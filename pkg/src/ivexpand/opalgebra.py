"""Normal-ordered polynomial differential operators.

An operator is stored as a finite sum of terms

    c_{gamma, alpha} (z - zbar)^gamma d^alpha

with every multiplication factor to the left of every derivative. Two
coefficient modes are supported and must not be mixed inside one operator:

* symbolic: :class:`TimePoly`, a polynomial in the ordered integration
  variables r_l = s_{l+1} - t of a nested time integral;
* numeric: plain floats bound to concrete times.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from itertools import product
from typing import Iterable, Mapping

from .errors import OrderOverflow

MAX_DIMENSION = 4


class TimePoly:
    """Sparse real polynomial in r_0, r_1, ... (exponent tuples, trailing zeros dropped)."""

    __slots__ = ("_terms",)

    def __init__(self, terms: Mapping[tuple[int, ...], float] | None = None):
        clean: dict[tuple[int, ...], float] = {}
        for e, c in (terms or {}).items():
            e = _strip(tuple(e))
            if c != 0.0:
                clean[e] = clean.get(e, 0.0) + float(c)
        self._terms = {e: c for e, c in clean.items() if c != 0.0}

    @classmethod
    def constant(cls, c: float) -> "TimePoly":
        return cls({(): c})

    @classmethod
    def var(cls, index: int, power: int = 1, coeff: float = 1.0) -> "TimePoly":
        e = [0] * (index + 1)
        e[index] = power
        return cls({tuple(e): coeff})

    @property
    def terms(self) -> dict[tuple[int, ...], float]:
        return dict(self._terms)

    def is_zero(self) -> bool:
        return not self._terms

    def nvars(self) -> int:
        return max((len(e) for e in self._terms), default=0)

    def __repr__(self):
        return f"TimePoly({self._terms})"

    @staticmethod
    def _coerce(other) -> "TimePoly":
        if isinstance(other, TimePoly):
            return other
        return TimePoly.constant(float(other))

    def __add__(self, other):
        other = self._coerce(other)
        out = dict(self._terms)
        for e, c in other._terms.items():
            out[e] = out.get(e, 0.0) + c
        return TimePoly(out)

    __radd__ = __add__

    def __neg__(self):
        return TimePoly({e: -c for e, c in self._terms.items()})

    def __sub__(self, other):
        return self + (-self._coerce(other))

    def __rsub__(self, other):
        return self._coerce(other) - self

    def __mul__(self, other):
        if not isinstance(other, TimePoly):
            other = float(other)
            return TimePoly({e: c * other for e, c in self._terms.items()})
        out: dict[tuple[int, ...], float] = {}
        for e1, c1 in self._terms.items():
            for e2, c2 in other._terms.items():
                e = _add_exp(e1, e2)
                out[e] = out.get(e, 0.0) + c1 * c2
        return TimePoly(out)

    __rmul__ = __mul__

    def __eq__(self, other):
        if isinstance(other, (int, float)):
            other = TimePoly.constant(other)
        if not isinstance(other, TimePoly):
            return NotImplemented
        return self._terms == other._terms

    def __hash__(self):
        return hash(frozenset(self._terms.items()))

    def evaluate(self, *r: float) -> float:
        total = 0.0
        for e, c in self._terms.items():
            v = c
            for ri, ei in zip(r, e):
                v *= ri ** ei
            total += v
        return total

    def integrate_simplex(self, levels: int) -> "TimePoly":
        """Integrate over 0 <= r_0 <= r_1 <= ... <= r_{levels-1} <= tau.

        Returns a polynomial in the single variable tau (stored as r_0).
        """
        out: dict[tuple[int, ...], float] = {}
        for e, c in self._terms.items():
            if len(e) > levels:
                raise ValueError("polynomial depends on more variables than levels")
            e = e + (0,) * (levels - len(e))
            denom = 1.0
            running = 0
            for i, ei in enumerate(e, start=1):
                running += ei
                denom *= running + i
            key = (running + levels,)
            out[key] = out.get(key, 0.0) + c / denom
        return TimePoly(out)

    def tau_coeffs(self) -> dict[int, float]:
        """Univariate view {power: coeff}; valid after integrate_simplex."""
        if self.nvars() > 1:
            raise ValueError("not a univariate polynomial")
        return {(e[0] if e else 0): c for e, c in self._terms.items()}


def _strip(e: tuple[int, ...]) -> tuple[int, ...]:
    n = len(e)
    while n and e[n - 1] == 0:
        n -= 1
    return e[:n]


def _add_exp(e1, e2):
    if len(e1) < len(e2):
        e1, e2 = e2, e1
    return _strip(tuple(a + (e2[i] if i < len(e2) else 0) for i, a in enumerate(e1)))


def _is_zero(c) -> bool:
    if isinstance(c, TimePoly):
        return c.is_zero()
    return c == 0.0


def _mode(c) -> str:
    return "symbolic" if isinstance(c, TimePoly) else "numeric"


@dataclass(frozen=True)
class DegreeCap:
    """Upper bounds on |gamma| (monomials) and |alpha| (derivatives)."""

    monomial: int = 8
    derivative: int = 26

    @classmethod
    def for_order(cls, n_max: int) -> "DegreeCap":
        return cls(monomial=n_max, derivative=3 * n_max + 2)


DEFAULT_CAP = DegreeCap()


class NormalOrderedOperator:
    """Sum of c (z - zbar)^gamma d^alpha terms in dimension ``dim``."""

    __slots__ = ("dim", "center", "_terms")

    def __init__(self, dim: int, center: Iterable[float], terms=None):
        if not 1 <= dim <= MAX_DIMENSION:
            raise ValueError(f"dimension must be in 1..{MAX_DIMENSION}")
        self.dim = dim
        self.center = tuple(float(c) for c in center)
        if len(self.center) != dim:
            raise ValueError("center has wrong length")
        clean = {}
        mode = None
        for (g, a), c in (terms or {}).items():
            g, a = tuple(g), tuple(a)
            if len(g) != dim or len(a) != dim:
                raise ValueError("multi-index of wrong length")
            if _is_zero(c):
                continue
            m = _mode(c)
            if mode is None:
                mode = m
            elif m != mode:
                raise TypeError("mixed symbolic/numeric coefficients")
            clean[(g, a)] = c
        self._terms = clean

    # constructors -------------------------------------------------------
    @classmethod
    def zero(cls, dim, center):
        return cls(dim, center)

    @classmethod
    def identity(cls, dim, center, coeff=1.0):
        z = (0,) * dim
        return cls(dim, center, {(z, z): coeff})

    @classmethod
    def coordinate(cls, dim, center, i, coeff=1.0):
        """(z_i - zbar_i) as a multiplication operator."""
        g = tuple(1 if j == i else 0 for j in range(dim))
        return cls(dim, center, {(g, (0,) * dim): coeff})

    @classmethod
    def derivative(cls, dim, center, alpha, coeff=1.0):
        return cls(dim, center, {((0,) * dim, tuple(alpha)): coeff})

    # views ------------------------------------------------------------
    @property
    def terms(self):
        return dict(self._terms)

    @property
    def mode(self) -> str | None:
        for c in self._terms.values():
            return _mode(c)
        return None

    def __len__(self):
        return len(self._terms)

    def __repr__(self):
        return f"NormalOrderedOperator(dim={self.dim}, terms={len(self._terms)})"

    def _check(self, other):
        if not isinstance(other, NormalOrderedOperator):
            raise TypeError("expected a NormalOrderedOperator")
        if other.dim != self.dim or other.center != self.center:
            raise ValueError("operators live on different spaces")
        if self.mode and other.mode and self.mode != other.mode:
            raise TypeError("mixed symbolic/numeric coefficients")

    # linear structure -------------------------------------------------
    def __add__(self, other):
        self._check(other)
        out = dict(self._terms)
        for k, c in other._terms.items():
            out[k] = out[k] + c if k in out else c
        return NormalOrderedOperator(self.dim, self.center, out)

    def scale(self, c) -> "NormalOrderedOperator":
        return NormalOrderedOperator(
            self.dim, self.center, {k: v * c for k, v in self._terms.items()}
        )

    def filter(self, keep) -> "NormalOrderedOperator":
        """Keep only the terms for which keep(gamma, alpha) is true."""
        return NormalOrderedOperator(
            self.dim, self.center, {k: v for k, v in self._terms.items() if keep(*k)}
        )

    def append_derivative(self, alpha, coeff=1.0) -> "NormalOrderedOperator":
        """self o (coeff d^alpha); no reordering needed."""
        out = {}
        for (g, a), c in self._terms.items():
            key = (g, tuple(x + y for x, y in zip(a, alpha)))
            v = c * coeff
            out[key] = out[key] + v if key in out else v
        return NormalOrderedOperator(self.dim, self.center, out)

    def compose(self, other, cap: DegreeCap = DEFAULT_CAP):
        return op_compose(self, other, cap)

    __matmul__ = compose

    def isclose(self, other, rel=1e-12) -> bool:
        self._check(other)
        keys = set(self._terms) | set(other._terms)

        def val(op, k):
            c = op._terms.get(k, 0.0)
            return c.evaluate() if isinstance(c, TimePoly) and c.nvars() == 0 else c

        scale = max([abs(val(self, k)) for k in keys] + [abs(val(other, k)) for k in keys] + [0.0])
        return all(abs(val(self, k) - val(other, k)) <= rel * scale for k in keys)

    def apply_sympy(self, expr, symbols):
        """Apply to a sympy expression in ``symbols`` (numeric coefficients only)."""
        import sympy as sp

        total = 0
        for (g, a), c in self._terms.items():
            term = expr
            for s, ai in zip(symbols, a):
                if ai:
                    term = sp.diff(term, s, ai)
            mono = 1
            for s, zb, gi in zip(symbols, self.center, g):
                mono *= (s - zb) ** gi
            total += float(c) * mono * term
        return total


def _leibniz_factor(alpha, delta, mu) -> int:
    f = 1
    for a, d, m in zip(alpha, delta, mu):
        f *= math.comb(a, m) * math.perm(d, m)
    return f


def op_compose(A: NormalOrderedOperator, B: NormalOrderedOperator,
               cap: DegreeCap = DEFAULT_CAP) -> NormalOrderedOperator:
    """A o B in normal order, using d_i (z_j - zbar_j) = (z_j - zbar_j) d_i + delta_ij."""
    A._check(B)
    out: dict = {}
    for (g, a), ca in A._terms.items():
        for (d, b), cb in B._terms.items():
            cab = ca * cb
            ranges = [range(min(ai, di) + 1) for ai, di in zip(a, d)]
            for mu in product(*ranges):
                gamma = tuple(gi + di - mi for gi, di, mi in zip(g, d, mu))
                alpha = tuple(ai - mi + bi for ai, mi, bi in zip(a, mu, b))
                if sum(gamma) > cap.monomial or sum(alpha) > cap.derivative:
                    raise OrderOverflow(
                        f"|gamma|={sum(gamma)}, |alpha|={sum(alpha)} exceeds {cap}"
                    )
                v = cab * _leibniz_factor(a, d, mu)
                key = (gamma, alpha)
                out[key] = out[key] + v if key in out else v
    return NormalOrderedOperator(A.dim, A.center, out)


def _shifted_coordinate(dim, center, i, shift_m, shift_C):
    """(z_i - zbar_i) + m_i + sum_j C_ij d_j."""
    zero = (0,) * dim
    terms = {}
    g = tuple(1 if j == i else 0 for j in range(dim))
    unit = shift_m[i] * 0.0 + 1.0
    terms[(g, zero)] = unit
    terms[(zero, zero)] = shift_m[i]
    for j in range(dim):
        e = tuple(1 if l == j else 0 for l in range(dim))
        terms[(zero, e)] = shift_C[i][j]
    return NormalOrderedOperator(dim, center, terms)


def _multi_indices(dim: int, order: int):
    """All beta in N_0^dim with |beta| = order."""
    if dim == 1:
        yield (order,)
        return
    for first in range(order, -1, -1):
        for rest in _multi_indices(dim - 1, order - first):
            yield (first,) + rest


def op_from_taylor_generator(taylor_data, n: int, shift_m, shift_C,
                             cap: DegreeCap = DEFAULT_CAP) -> NormalOrderedOperator:
    """G_n = A_n(s, z - zbar + m + C grad), normal-ordered.

    ``taylor_data`` is a :class:`~ivexpand.models.TaylorTensor`; ``shift_m``
    and ``shift_C`` hold m(t, s) and C(t, s), as floats or TimePolys.
    """
    dim = taylor_data.dim
    center = taylor_data.center
    zs = [_shifted_coordinate(dim, center, i, shift_m, shift_C) for i in range(dim)]
    result = NormalOrderedOperator.zero(dim, center)
    unit = shift_m[0] * 0.0 + 1.0
    for beta in _multi_indices(dim, n):
        fact = math.prod(math.factorial(b) for b in beta)
        second = taylor_data.second_order(beta)
        first = taylor_data.first_order(beta)
        if all(v == 0.0 for v in second.values()) and all(v == 0.0 for v in first):
            continue
        zb = NormalOrderedOperator.identity(dim, center, unit)
        for i, bi in enumerate(beta):
            for _ in range(bi):
                zb = op_compose(zb, zs[i], cap)
        for (i, j), v in second.items():
            if v == 0.0:
                continue
            alpha = [0] * dim
            alpha[i] += 1
            alpha[j] += 1
            weight = 0.5 if i == j else 1.0
            result = result + zb.append_derivative(alpha, weight * v / fact)
        for i, v in enumerate(first):
            if v == 0.0:
                continue
            alpha = [0] * dim
            alpha[i] = 1
            result = result + zb.append_derivative(alpha, v / fact)
    for _, alpha in result._terms:
        if sum(alpha) > cap.derivative:
            raise OrderOverflow(f"|alpha|={sum(alpha)} exceeds {cap}")
    return result


def op_reduce_at_center(A: NormalOrderedOperator) -> dict[int, object]:
    """Evaluate at z = zbar on a function of z_1 only: {j: coefficient of d_1^j}."""
    out: dict[int, object] = {}
    for (g, a), c in A.terms.items():
        if any(g) or any(a[1:]):
            continue
        j = a[0]
        out[j] = out[j] + c if j in out else c
    return {j: c for j, c in out.items() if not _is_zero(c)}
