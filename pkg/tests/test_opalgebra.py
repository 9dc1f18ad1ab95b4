"""Normal-ordered operators: composition, generator substitution, reduction."""
import numpy as np
import pytest
import sympy as sp
from hypothesis import given
from hypothesis import strategies as st

from ivexpand.errors import OrderOverflow
from ivexpand.models import TaylorTensor
from ivexpand.opalgebra import (DegreeCap, NormalOrderedOperator, TimePoly, op_compose,
                                op_from_taylor_generator, op_reduce_at_center)

X, Y = sp.symbols("x y")
NOO = NormalOrderedOperator


def _apply(op, expr, syms):
    return sp.expand(op.apply_sympy(expr, syms))


# composition ---------------------------------------------------------------------
def test_canonical_commutator():
    d = NOO.derivative(1, (0.0,), (1,))
    x = NOO.coordinate(1, (0.0,), 0)
    assert op_compose(d, x).terms == {((1,), (1,)): 1.0, ((0,), (0,)): 1.0}  # [TRIVIAL]
    assert op_compose(x, d).terms == {((1,), (1,)): 1.0}  # [TRIVIAL]


def test_second_derivative_through_square():
    # [DERIVED] oracle: apply both sides to test polynomials of degree <= 4
    d2 = NOO.derivative(1, (0.0,), (2,))
    x2 = NOO(1, (0.0,), {((2,), (0,)): 1.0})
    comp = op_compose(d2, x2)
    assert comp.terms == {((2,), (2,)): 1.0, ((1,), (1,)): 4.0, ((0,), (0,)): 2.0}
    for p in (X ** 4 - 3 * X, 2 * X ** 3 + X ** 2 + 1):
        assert sp.expand(comp.apply_sympy(p, (X,)) - sp.diff(X ** 2 * p, X, 2)) == 0


def _random_op(draw, dim, center):
    n_terms = draw(st.integers(1, 3))
    terms = {}
    for _ in range(n_terms):
        g = tuple(draw(st.integers(0, 2)) for _ in range(dim))
        a = tuple(draw(st.integers(0, 2)) for _ in range(dim))
        terms[(g, a)] = draw(st.floats(-2, 2, allow_nan=False).filter(lambda v: abs(v) > 1e-3))
    return NOO(dim, center, terms)


@st.composite
def op_pairs(draw):
    dim = draw(st.integers(1, 2))
    center = tuple(draw(st.floats(-0.5, 0.5)) for _ in range(dim))
    return _random_op(draw, dim, center), _random_op(draw, dim, center)


@given(op_pairs(), st.tuples(st.floats(-1, 1), st.floats(-1, 1)))
def test_compose_matches_sequential_application(pair, point):
    A, B = pair
    syms = (X, Y)[: A.dim]
    f = sp.exp(sp.Rational(3, 10) * X) * (1 + X ** 3) * (sp.cos(Y) if A.dim == 2 else 1)
    lhs = _apply(op_compose(A, B), f, syms)
    rhs = A.apply_sympy(B.apply_sympy(f, syms), syms)
    subs = dict(zip(syms, point))
    a, b = float(lhs.subs(subs)), float(rhs.subs(subs))
    assert a == pytest.approx(b, rel=1e-9, abs=1e-9)


def test_compose_respects_degree_cap():
    d = NOO.derivative(1, (0.0,), (3,))
    with pytest.raises(OrderOverflow):
        op_compose(d, d, DegreeCap(monomial=8, derivative=4))


def test_mixed_coefficient_modes_rejected():
    with pytest.raises(TypeError):
        NOO(1, (0.0,), {((0,), (0,)): 1.0, ((1,), (0,)): TimePoly.constant(1.0)})


def test_operators_on_different_centers_rejected():
    with pytest.raises(ValueError):
        NOO.identity(1, (0.0,)) + NOO.identity(1, (1.0,))


# time polynomials ----------------------------------------------------------------
@pytest.mark.parametrize("exps", [(), (1,), (0, 2), (2, 1), (1, 0, 3)])
def test_integrate_simplex_matches_sympy(exps):
    # [DERIVED] oracle: iterated symbolic integral over 0 <= r_0 <= ... <= r_{h-1} <= tau
    h = max(len(exps), 1) + 1
    rs = sp.symbols(f"r0:{h}")
    tau = sp.Symbol("tau")
    integrand = sp.Mul(*[r ** e for r, e in zip(rs, exps)]) * 3
    expr = integrand
    for i in range(h):
        upper = rs[i + 1] if i + 1 < h else tau
        expr = sp.integrate(expr, (rs[i], 0, upper))
    got = TimePoly({tuple(exps): 3.0}).integrate_simplex(h).tau_coeffs()
    poly = sp.Poly(sp.expand(expr), tau)
    expected = {m[0]: float(c) for m, c in zip(poly.monoms(), poly.coeffs())}
    assert got.keys() == expected.keys()
    for p in got:
        assert got[p] == pytest.approx(expected[p], rel=1e-14)


def test_timepoly_arithmetic():
    r0, r1 = TimePoly.var(0), TimePoly.var(1)
    p = (r0 + 1) * (r1 - r0)
    assert p.evaluate(2.0, 5.0) == pytest.approx(9.0)
    assert (p - p).is_zero()
    with pytest.raises(ValueError):
        p.tau_coeffs()


# generator substitution ------------------------------------------------------------
def _tensor(entries, dim=1, center=(0.0,), order=1):
    return TaylorTensor(dim, center, 0.0, order,
                        {b: (np.atleast_2d(np.array(A, float)), np.array(v, float)) for b, (A, v) in entries.items()})


def test_generator_order_zero_is_constant_coefficient():
    tensor = _tensor({(0,): ([[0.09]], [-0.045])}, order=0)
    op = op_from_taylor_generator(tensor, 0, [0.3], [[0.7]])
    assert op.terms == {((0,), (2,)): 0.045, ((0,), (1,)): -0.045}  # [TRIVIAL]


def test_generator_order_one_example():
    tensor = _tensor({(0,): ([[0.0]], [0.0]), (1,): ([[1.0]], [0.0])})
    c = 0.8
    op = op_from_taylor_generator(tensor, 1, [0.0], [[c]])
    assert op.terms == {((1,), (2,)): 0.5, ((0,), (3,)): c / 2}  # [TRIVIAL]
    m = 0.25
    shifted = op_from_taylor_generator(tensor, 1, [m], [[c]])
    assert shifted.terms == {((1,), (2,)): 0.5, ((0,), (3,)): c / 2, ((0,), (2,)): m / 2}  # [TRIVIAL]


def test_generator_second_order_term_matches_sympy():
    # G_2 for a_11(x) = x^2 / 2 at 0 with C = c: (1/2)(1/2!) (x + c d)^2 d^2 applied to f
    tensor = _tensor({(0,): ([[0.0]], [0.0]), (1,): ([[0.0]], [0.0]), (2,): ([[1.0]], [0.0])}, order=2)
    c = 0.6
    op = op_from_taylor_generator(tensor, 2, [0.0], [[c]])
    f = sp.exp(X / 3) * (1 + X ** 4)
    D = lambda e: sp.diff(e, X)  # noqa: E731
    shift = lambda e: X * e + c * D(e)  # noqa: E731
    expected = sp.Rational(1, 4) * shift(shift(sp.diff(f, X, 2)))
    got = op.apply_sympy(f, (X,))
    for x in (-0.4, 0.1, 0.9):
        assert float(got.subs(X, x)) == pytest.approx(float(expected.subs(X, x)), rel=1e-12)


# reduction -------------------------------------------------------------------------
def test_reduce_drops_monomial_and_factor_terms():
    op = NOO(1, (0.0,), {((1,), (1,)): 1.0, ((0,), (3,)): 3.0})
    assert op_reduce_at_center(op) == {3: 3.0}  # [TRIVIAL]
    mixed = NOO.derivative(2, (0.0, 0.04), (1, 1))
    assert op_reduce_at_center(mixed) == {}  # [TRIVIAL]


def test_reduce_of_order_zero_generator():
    a11, a1 = 0.04, -0.02
    tensor = _tensor({(0, 0): ([[a11, 0.01], [0.01, 0.02]], [a1, 0.3])}, dim=2, center=(0.0, 0.04), order=0)
    op = op_from_taylor_generator(tensor, 0, [0.0, 0.0], [[0.0, 0.0], [0.0, 0.0]])
    assert op_reduce_at_center(op) == pytest.approx({1: a1, 2: a11 / 2})  # [TRIVIAL]


def test_degree_cap_for_order():
    cap = DegreeCap.for_order(3)
    assert (cap.monomial, cap.derivative) == (3, 11)
