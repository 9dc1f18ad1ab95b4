"""Hermite and Bell combinatorics, and polynomials in (k - x) and sqrt(tau).

Everything here is written against a minimal ring protocol (``+``, ``-``,
``*``, scalar multiplication) so the same routines evaluate on floats and
on :class:`BiPoly` objects.
"""
from __future__ import annotations

import math
from functools import lru_cache
from typing import Iterator, Mapping, Sequence

from .errors import CancellationFailure

MAX_BELL_ORDER = 12


def hermite(n: int, x):
    """h_n(x) = exp(x^2) d^n/dx^n exp(-x^2), by three-term recurrence.

    Note h_n = (-1)^n H_n with H_n the physicists' Hermite polynomial.
    ``x`` may be a float or any ring element (e.g. a BiPoly).
    """
    if n < 0:
        raise ValueError("hermite order must be non-negative")
    h_prev = 1.0
    if n == 0:
        return _one_like(x)
    h = -2.0 * x
    for i in range(1, n):
        h_prev, h = h, -2.0 * x * h - 2.0 * i * h_prev
    return h


def _one_like(x):
    if isinstance(x, BiPoly):
        return BiPoly.constant(1.0)
    return 1.0


def bell_index_sets(m: int, h: int) -> Iterator[tuple[int, ...]]:
    """Yield all (j_1, ..., j_{m-h+1}) >= 0 with sum j_i = h and sum i*j_i = m."""
    if not 1 <= h <= m:
        raise ValueError(f"need 1 <= h <= m, got m={m}, h={h}")
    length = m - h + 1

    def rec(i, parts_left, weight_left, acc):
        if i > length:
            if parts_left == 0 and weight_left == 0:
                yield tuple(acc)
            return
        for j in range(min(parts_left, weight_left // i) + 1):
            acc.append(j)
            yield from rec(i + 1, parts_left - j, weight_left - i * j, acc)
            acc.pop()

    yield from rec(1, h, m, [])


def bell_partial(m: int, h: int, z: Sequence):
    """Partial Bell polynomial B_{m,h}(z_1, ..., z_{m-h+1})."""
    if m > MAX_BELL_ORDER:
        raise ValueError(f"Bell order capped at {MAX_BELL_ORDER}")
    if len(z) < m - h + 1:
        raise IndexError(f"B_{{{m},{h}}} needs {m - h + 1} arguments, got {len(z)}")
    total = 0.0
    for js in bell_index_sets(m, h):
        denom = 1
        for i, j in enumerate(js, start=1):
            denom *= math.factorial(j) * math.factorial(i) ** j
        coeff = math.factorial(m) // denom
        term = float(coeff)
        for i, j in enumerate(js, start=1):
            for _ in range(j):
                term = term * z[i - 1]
        total = total + term
    return total


@lru_cache(maxsize=None)
def _ccoeff_row(n: int) -> tuple[tuple[int, int], ...]:
    if n == 1:
        return ((1, 1),)
    prev = dict(_ccoeff_row(n - 1))
    row = {}
    for q in range(n // 2 + 1):
        j = n - 2 * q
        if q == 0:
            row[j] = 1
        else:
            row[j] = (j + 1) * prev.get(j + 1, 0) + prev.get(j - 1, 0)
    return tuple(sorted(row.items(), reverse=True))


def vega_ratio_ccoeffs(n: int) -> dict[int, int]:
    """Row n of the c-table, as {n - 2q: c_{n, n-2q}} for 0 <= q <= n // 2."""
    if n < 1:
        raise ValueError("c-coefficients are defined for n >= 1")
    return dict(_ccoeff_row(n))


class BiPoly:
    """Sparse polynomial in w = (k - x) and s = sqrt(tau), with s-exponents in Z.

    Keys are ``(power of w, power of sqrt(tau))``; values are float coefficients.
    Exact zeros are never stored.
    """

    __slots__ = ("_terms",)

    def __init__(self, terms: Mapping[tuple[int, int], float] | None = None):
        clean = {}
        for (a, b), c in (terms or {}).items():
            if a < 0:
                raise ValueError("negative power of (k - x)")
            if c != 0.0:
                clean[(int(a), int(b))] = float(c)
        self._terms = clean

    @classmethod
    def constant(cls, c: float) -> "BiPoly":
        return cls({(0, 0): c})

    @classmethod
    def monomial(cls, w_pow: int, sqrt_tau_pow: int, coeff: float = 1.0) -> "BiPoly":
        return cls({(w_pow, sqrt_tau_pow): coeff})

    @property
    def terms(self) -> dict[tuple[int, int], float]:
        return dict(self._terms)

    def coeff(self, w_pow: int, sqrt_tau_pow: int) -> float:
        return self._terms.get((w_pow, sqrt_tau_pow), 0.0)

    def is_zero(self) -> bool:
        return not self._terms

    def __len__(self):
        return len(self._terms)

    def __repr__(self):
        if not self._terms:
            return "BiPoly(0)"
        parts = [f"{c:+.6g}*w^{a}*s^{b}" for (a, b), c in sorted(self._terms.items())]
        return "BiPoly(" + " ".join(parts) + ")"

    @staticmethod
    def _coerce(other) -> "BiPoly":
        if isinstance(other, BiPoly):
            return other
        return BiPoly.constant(float(other))

    def __add__(self, other):
        other = self._coerce(other)
        out = dict(self._terms)
        for k, c in other._terms.items():
            out[k] = out.get(k, 0.0) + c
        return BiPoly(out)

    __radd__ = __add__

    def __neg__(self):
        return BiPoly({k: -c for k, c in self._terms.items()})

    def __sub__(self, other):
        return self + (-self._coerce(other))

    def __rsub__(self, other):
        return self._coerce(other) - self

    def __mul__(self, other):
        if not isinstance(other, BiPoly):
            other = float(other)
            if other == 0.0:
                return BiPoly()
            return BiPoly({k: c * other for k, c in self._terms.items()})
        out: dict[tuple[int, int], float] = {}
        for (a1, b1), c1 in self._terms.items():
            for (a2, b2), c2 in other._terms.items():
                key = (a1 + a2, b1 + b2)
                out[key] = out.get(key, 0.0) + c1 * c2
        return BiPoly(out)

    __rmul__ = __mul__

    def __truediv__(self, other: float):
        return self * (1.0 / float(other))

    def __pow__(self, n: int):
        if n < 0:
            raise ValueError("negative powers are not polynomial")
        out = BiPoly.constant(1.0)
        for _ in range(n):
            out = out * self
        return out

    def __eq__(self, other):
        if not isinstance(other, (BiPoly, int, float)):
            return NotImplemented
        return self._terms == self._coerce(other)._terms

    def __hash__(self):
        return hash(frozenset(self._terms.items()))

    def max_abs_coeff(self) -> float:
        return max((abs(c) for c in self._terms.values()), default=0.0)

    def isclose(self, other, rel: float = 1e-12, abs_tol: float = 0.0) -> bool:
        other = self._coerce(other)
        scale = max(self.max_abs_coeff(), other.max_abs_coeff())
        keys = set(self._terms) | set(other._terms)
        return all(
            abs(self.coeff(*k) - other.coeff(*k)) <= rel * scale + abs_tol for k in keys
        )

    def __call__(self, w, tau):
        return self.evaluate(w, tau)

    def evaluate(self, w, tau):
        """Value at (k - x) = w and time-to-maturity tau (> 0 if any s-exponent < 0)."""
        s = math.sqrt(tau)
        total = 0.0
        for (a, b), c in self._terms.items():
            total += c * (w ** a) * (s ** b)
        return total

    def diff_w(self, m: int = 1) -> "BiPoly":
        """m-th derivative in w, i.e. in the log-strike k."""
        out = {}
        for (a, b), c in self._terms.items():
            if a >= m:
                out[(a - m, b)] = c * math.perm(a, m)
        return BiPoly(out)

    def diff_tau(self, q: int = 1) -> "BiPoly":
        """q-th derivative in tau (s-exponent b means tau^(b/2))."""
        out = dict(self._terms)
        for _ in range(q):
            nxt = {}
            for (a, b), c in out.items():
                if b != 0:
                    nxt[(a, b - 2)] = c * b / 2.0
            out = nxt
        return BiPoly(out)

    def max_w_degree(self) -> int:
        return max((a for a, _ in self._terms), default=0)

    def is_regular(self) -> bool:
        return all(b >= 0 and b % 2 == 0 for _, b in self._terms)


def bipoly_add(a: BiPoly, b) -> BiPoly:
    return a + b


def bipoly_mul(a: BiPoly, b) -> BiPoly:
    return a * b


def bipoly_scale(a: BiPoly, c: float) -> BiPoly:
    return a * float(c)


def bipoly_assert_regular(p: BiPoly, tol: float = 1e-9) -> BiPoly:
    """Prune negative/odd sqrt(tau) terms below tol * max|coeff|, else raise.

    The surviving terms carry integer, non-negative powers of tau.
    """
    scale = p.max_abs_coeff()
    kept, bad = {}, {}
    for (a, b), c in p.terms.items():
        if b >= 0 and b % 2 == 0:
            kept[(a, b)] = c
        elif abs(c) >= tol * scale:
            bad[(a, b)] = c
    if bad:
        raise CancellationFailure(bad)
    return BiPoly(kept)
