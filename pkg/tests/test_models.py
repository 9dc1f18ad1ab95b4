"""Model registry, log transform, Taylor data and config ingestion."""
import math

import numpy as np
import pytest
import sympy as sp

from ivexpand.errors import DerivativeUnavailable
from ivexpand.models import (MODEL_REGISTRY, build_model, builtin_bs, builtin_cev, builtin_displaced,
                             builtin_heston, builtin_lsv, builtin_lv, custom_model, log_transform,
                             model_from_config, read_config, taylor_tensor)
from ivexpand.models import _numeric_derivative


def test_log_transform_black_scholes():
    a = log_transform(lambda t, s, y: ([[0.04 * s ** 2]], [0.0]), 1)
    for x in (-0.3, 0.0, 0.7):
        A, v = a(0.0, (x,))
        assert A[0][0] == pytest.approx(0.04) and v[0] == pytest.approx(-0.02)  # [TRIVIAL]


def test_cev_log_coefficient():
    m = builtin_cev(1.0, 0.5)
    assert m.dim == 1
    for x in (-0.2, 0.0, 0.3):
        assert m.coefficients(0.0, (x,))[0][0, 0] == pytest.approx(math.exp(-x), rel=1e-14)  # [TRIVIAL]


def test_heston_log_coefficients():
    kappa, theta, delta, rho = 1.0, 0.04, 1.0, -0.5
    m = builtin_heston(kappa, theta, delta, rho)
    A, v = m.coefficients(0.0, (0.1, 0.05))
    y = 0.05
    assert A == pytest.approx(np.array([[y, rho * delta * y], [rho * delta * y, delta ** 2 * y]]))
    assert v == pytest.approx(np.array([-y / 2, kappa * (theta - y)]))
    assert m.ellipticity_witness(200)  # [TRIVIAL]
    assert m.z0 == (0.0, 0.04)


def test_constant_model_taylor_data_vanishes_beyond_order_zero():
    tt = taylor_tensor(builtin_bs(0.2), 0.0, (0.0,), 4)
    for beta, (A, v) in tt.entries.items():
        if sum(beta):
            assert not np.any(A) and not np.any(v)


@pytest.mark.parametrize("beta", [0.3, 0.5, 0.8])
def test_cev_taylor_entries(beta):
    sigma, xbar = 0.7, 0.1
    m = builtin_cev(sigma, beta)
    tt = taylor_tensor(m, 0.0, (xbar,), 5)
    for n in range(6):
        expected = sigma ** 2 * (2 * (beta - 1)) ** n * math.exp(2 * (beta - 1) * xbar)
        assert tt[((0, 0), (n,))] == pytest.approx(expected, rel=1e-12)  # [TRIVIAL]
        assert tt[((0,), (n,))] == pytest.approx(-expected / 2, rel=1e-12)


def test_heston_taylor_entries():
    rho, delta = -0.5, 1.0
    tt = taylor_tensor(builtin_heston(1.0, 0.04, delta, rho), 0.0, (0.0, 0.04), 2)
    assert tt[((0, 0), (0, 1))] == pytest.approx(1.0)
    assert tt[((0, 1), (0, 1))] == pytest.approx(rho * delta)
    for alpha in ((0, 0), (0, 1), (1, 1), (0,), (1,)):
        assert tt[(alpha, (1, 0))] == 0.0
    with pytest.raises(KeyError):
        tt[((0, 0), (3, 0))]


def test_numeric_taylor_data_agrees_with_symbolic():
    m = builtin_cev(1.0, 0.5)
    exact = taylor_tensor(m, 0.0, (0.05,), 3)
    approx = taylor_tensor(m, 0.0, (0.05,), 3, numeric=True)
    for beta in exact.entries:
        assert approx.entries[beta][0] == pytest.approx(exact.entries[beta][0], rel=1e-6)


def test_numeric_derivative_self_check_fails_on_nonsmooth_input():
    def kinked(z):
        return np.array([[abs(z[0]) ** 2.5]]), np.array([0.0])

    with pytest.raises(DerivativeUnavailable):
        _numeric_derivative(kinked, (0.0,), (4,), 1)


def test_taylor_tensor_outside_cylinder():
    with pytest.raises(ValueError):
        taylor_tensor(builtin_cev(1.0, 0.5), 0.0, (0.9,), 2)


def test_lv_constant_eta_is_black_scholes():
    lv = builtin_lv(lambda s: 0.2 + 0 * s)
    bs = builtin_bs(0.2)
    for x in (-0.2, 0.2):
        assert lv.coefficients(0.0, (x,))[0] == pytest.approx(bs.coefficients(0.0, (x,))[0])
    tt = taylor_tensor(lv, 0.0, (0.0,), 3)
    assert all(not np.any(A) for beta, (A, _) in tt.entries.items() if sum(beta))


def test_lv_closed_form_derivatives_match_symbolic():
    # eta(s) = 0.3 s^-0.4 + 0.1 given through explicit derivative callbacks
    eta = lambda s: 0.3 * s ** -0.4 + 0.1  # noqa: E731
    d1 = lambda s: -0.12 * s ** -1.4  # noqa: E731
    d2 = lambda s: 0.168 * s ** -2.4  # noqa: E731
    d3 = lambda s: -0.4032 * s ** -3.4  # noqa: E731
    closed = builtin_lv(eta, [d1, d2, d3])
    S = sp.Symbol("s", positive=True)
    symbolic = builtin_lv(lambda s: sp.Rational(3, 10) * s ** sp.Rational(-2, 5) + sp.Rational(1, 10)
                          if isinstance(s, sp.Basic) else eta(s))
    assert symbolic.symbolic and S is not None
    a = taylor_tensor(closed, 0.0, (0.1,), 3)
    b = taylor_tensor(symbolic, 0.0, (0.1,), 3)
    for beta in a.entries:
        assert a.entries[beta][0] == pytest.approx(b.entries[beta][0], rel=1e-12)


def test_time_dependent_model_detected():
    m = custom_model("tdep", lambda t, s, y: ([[(0.04 + t) * s ** 2]], [0]), 1, (1.0,), 0.5)
    assert not m.time_homogeneous
    assert m.coefficients(0.5, (0.0,))[0][0, 0] == pytest.approx(0.54)


def test_lsv_builder():
    m = builtin_lsv(lambda s, y: y, lambda s, y: 0.3 + 0 * y, lambda s, y: 0.5 * (0.2 - y), -0.3,
                    1.0, 0.2, 0.1)
    A, v = m.coefficients(0.0, (0.0, 0.2))
    assert A[0, 0] == pytest.approx(0.04) and A[0, 1] == pytest.approx(-0.3 * 0.2 * 0.3)
    assert v[1] == pytest.approx(0.0)


def test_displaced_model_local_vol():
    m = builtin_displaced(0.2, 0.5)
    assert math.sqrt(m.coefficients(0.0, (0.0,))[0][0, 0]) == pytest.approx(0.3)


def test_builder_validation():
    with pytest.raises(ValueError):
        builtin_cev(1.0, 1.2)
    with pytest.raises(ValueError):
        builtin_heston(1.0, 0.04, 1.0, -1.0)
    with pytest.raises(ValueError):
        build_model("nope")
    with pytest.raises(ValueError):
        build_model("cev", sigma=1, beta=0.5, kappa=2)


def test_registry_and_config(tmp_path):
    assert {"bs", "cev", "heston", "lv", "displaced"} <= set(MODEL_REGISTRY)
    path = tmp_path / "m.ini"
    path.write_text("[model]\nname = heston\nkappa = 1\ntheta = 0.04\ndelta = 1\nrho = -0.5\n")
    m = model_from_config(read_config(path))
    assert m.name == "heston" and m.params["rho"] == -0.5
    lv = build_model("lv", eta="0.2*s**(-0.5)")
    assert lv.coefficients(0.0, (0.0,))[0][0, 0] == pytest.approx(0.04)
    path.write_text("[other]\n")
    with pytest.raises(ValueError):
        model_from_config(read_config(path))
