"""Price expansion: sigma_0, L_n, heat coefficients, u_bar_N."""
import math

import pytest

from ivexpand.blackscholes import BSContext, bs_price
from ivexpand.errors import CancellationFailure, NonPositiveVariance, SymbolicUnavailable
from ivexpand.models import builtin_bs, builtin_cev, builtin_heston, builtin_lv, custom_model
from ivexpand.price_expansion import (ExpansionContext, _heat_divide, build_Ln, index_sets, price_bar_N,
                                      price_corrections, sigma0, un_coefficients)
from ivexpand.opalgebra import op_reduce_at_center
from ivexpand.reference import reference_price

HESTON = builtin_heston(1.0, 0.04, 1.0, -0.5)
CEV = builtin_cev(1.0, 0.5)


def _linear_variance_model():
    # a_11(t) = 2t; ellipticity declared since a_11 vanishes at t = 0
    return custom_model("ramp", lambda t, s, y: ([[2 * t * s ** 2]], [0]), 1, (1.0,), 0.5,
                        ellipticity=(0.5, 2.0))


def test_sigma0_examples():
    assert sigma0(ExpansionContext(builtin_bs(0.2))) == pytest.approx(0.2)  # [TRIVIAL]
    assert sigma0(ExpansionContext(HESTON)) == pytest.approx(0.2)  # [TRIVIAL]
    ctx = ExpansionContext(_linear_variance_model(), 1, mode="numeric")
    for T in (0.1, 0.5, 1.0):
        assert sigma0(ctx, T) == pytest.approx(math.sqrt(T), rel=1e-13)  # [TRIVIAL]
    with pytest.raises(ValueError):
        sigma0(ctx)
    with pytest.raises(NonPositiveVariance):
        zero = custom_model("zero", lambda t, s, y: ([[0 * s]], [0]), 1, (1.0,), 0.5, ellipticity=(1.0, 1.0))
        sigma0(ExpansionContext(zero))


def test_index_sets():
    assert list(index_sets(1, 1)) == [(1,)]  # [TRIVIAL]
    assert set(index_sets(3, 3)) == {(1, 1, 1)}  # [PAPER]
    assert set(index_sets(3, 2)) == {(1, 2), (2, 1)}
    assert set(index_sets(3, 1)) == {(3,)}
    for n in range(1, 7):
        total = sum(1 for h in range(1, n + 1) for _ in index_sets(n, h))
        assert total == 2 ** (n - 1)  # compositions of n


def test_context_validation():
    with pytest.raises(SymbolicUnavailable):
        ExpansionContext(_linear_variance_model(), 1)
    with pytest.raises(ValueError):
        ExpansionContext(CEV, 7)
    with pytest.raises(ValueError):
        ExpansionContext(CEV, 2, zbar=(0.9,))
    with pytest.raises(ValueError):
        ExpansionContext(CEV, 2, mode="bogus")


def test_constant_model_has_no_corrections():
    ctx = ExpansionContext(builtin_bs(0.25), 3)
    for n in (1, 2, 3):
        assert len(build_Ln(ctx, n)) == 0  # [TRIVIAL]
    coeffs = un_coefficients(ctx, 0.5)
    assert all(row == {} for row in coeffs.g[1:]) and all(row == {} for row in coeffs.f[1:])
    assert price_bar_N(ctx, 0.5, 0.1) == bs_price(BSContext(0.25, 0.5, 0.0, 0.1))  # [TRIVIAL]


def test_cev_first_order_heat_coefficients():
    # hand derivation for a_11 = e^{-x}: u_1 = -tau^2/4 d(d^2-d)u_0 + tau^2/8 (d^2-d)u_0
    g = ExpansionContext(CEV, 1)._symbolic_heat_coeffs[1]
    assert g[1] == pytest.approx({2: -0.25})
    assert g[0] == pytest.approx({2: 0.125})


@pytest.mark.parametrize("model", [CEV, builtin_cev(0.6, 0.3), builtin_lv(lambda s: 0.2 + 0.1 / s)],
                         ids=["cev05", "cev03", "lv"])
def test_tau_exponents_are_degree_consistent(model):
    # every tau^p in front of d^j u_0 inside u_n obeys 2p >= n + j, and j <= 3n
    ctx = ExpansionContext(model, 3)
    for n, row in enumerate(ctx._symbolic_heat_coeffs[1:], start=1):
        for j, poly in row.items():
            assert j + 2 <= 3 * n
            for p in poly:
                assert 2 * p >= n + j + 2


def test_heston_first_order_derivative_range():
    f = op_reduce_at_center(build_Ln(ExpansionContext(HESTON, 1), 1))
    assert set(f) <= {1, 2, 3} and f


@pytest.mark.parametrize("model", [CEV, HESTON], ids=["cev", "heston"])
def test_symbolic_and_numeric_modes_agree(model):
    T = 0.07
    sym = un_coefficients(ExpansionContext(model, 3), T)
    num = un_coefficients(ExpansionContext(model, 3, mode="numeric"), T)
    for a, b in zip(sym.g, num.g):
        assert a.keys() == b.keys()
        for j in a:
            assert b[j] == pytest.approx(a[j], rel=1e-9, abs=1e-15)


def test_time_dependent_deterministic_vol_is_exact():
    # vol depends on t only: the BS price at the root-mean-square vol is exact
    model = custom_model("tvol", lambda t, s, y: ([[(0.04 + 0.1 * t) * s ** 2]], [0]), 1, (1.0,), 0.5)
    ctx = ExpansionContext(model, 2, mode="numeric")
    T = 0.4
    s0 = math.sqrt(0.04 + 0.05 * T)
    assert sigma0(ctx, T) == pytest.approx(s0, rel=1e-13)
    assert price_bar_N(ctx, T, 0.05) == pytest.approx(bs_price(BSContext(s0, T, 0.0, 0.05)), rel=1e-12)


def test_time_dependent_local_vol_against_time_change():
    # dS = sqrt(1 + t) S^(1/2) dW is CEV(1, 1/2) run on the clock T + T^2/2
    model = custom_model("tcev", lambda t, s, y: ([[(1 + t) * s]], [0]), 1, (1.0,), 0.5)
    assert not model.time_homogeneous
    for T, k in ((0.02, 0.0), (0.04, 0.03)):
        ref = reference_price(CEV, T + T * T / 2, k)
        errs = [abs(price_bar_N(ExpansionContext(model, N, mode="numeric"), T, k) - ref) for N in (0, 1, 2)]
        assert errs[2] < errs[0] and errs[2] <= T ** 2


def test_price_bar_two_against_references():
    tau = 0.01
    err = price_bar_N(ExpansionContext(CEV, 2), tau, 0.0) - reference_price(CEV, tau, 0.0)
    assert abs(err) <= tau ** 2  # [DERIVED]
    tau = 0.05
    err = price_bar_N(ExpansionContext(HESTON, 2), tau, 0.0) - reference_price(HESTON, tau, 0.0)
    assert abs(err) <= tau ** 2  # [DERIVED]


def test_price_error_decreases_with_order():
    tau, k = 0.02, 0.05
    ref = reference_price(CEV, tau, k)
    errs = [abs(price_bar_N(ExpansionContext(CEV, N), tau, k) - ref) for N in range(4)]
    assert errs[0] > errs[1] > errs[2] > errs[3]


def test_heat_divide_rejects_non_divisible_input():
    assert _heat_divide({3: 1.0, 2: -1.0}) == {1: 1.0}
    with pytest.raises(CancellationFailure):
        _heat_divide({3: 1.0, 1: 0.5})
