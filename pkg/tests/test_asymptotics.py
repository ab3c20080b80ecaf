import warnings
from dataclasses import asdict, replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import cases
from conftest import assert_golden
from msvol import asymptotics as asy
from msvol import blackscholes as bs
from msvol.errors import DomainError, SchemaError, TerminalLayerError


# --- reduction ---


def test_reduce_identity_without_v2():
    assert asy.reduce_params(asy.UnreducedFirstOrder(0.2, 0.0)) == 0.2


def test_reduce_example(golden):
    rec = golden("reduce_params_example")
    value = asy.reduce_params(asy.UnreducedFirstOrder(0.2, 0.002))
    assert_golden(rec, {"sigma_star": value}, dict(sigma_bar=0.2, v2=0.002))


def test_reduce_negative_radicand():
    with pytest.raises(DomainError):
        asy.reduce_params(asy.UnreducedFirstOrder(0.1, -0.006))


# --- price terms ---


def test_zeroth_order_collapse():
    phi = asy.GroupParams(0.23)
    terms = asy.price_terms(0.7, 100.0, 95.0, 0.01, phi)
    assert terms["total"] == pytest.approx(bs.price(0.7, 100.0, 95.0, 0.01, 0.23), rel=1e-14)
    for name in ("p10", "p01", "p20", "p02", "p11"):
        assert terms[name] == 0.0


def test_price_terms_2006(golden):
    rec = golden("price_terms_2006")
    inputs = dict(tau=0.5, spot=100.0, strike=100.0, rate=0.02, phi=cases.PUBLISHED_06)
    assert_golden(rec, asy.price_terms(0.5, 100.0, 100.0, 0.02, asy.PUBLISHED_2006), inputs)


def test_p10_linear_in_v3():
    phi = asy.PUBLISHED_2006
    one = asy.price_terms(0.5, 100.0, 100.0, 0.02, phi)["p10"]
    two = asy.price_terms(0.5, 100.0, 100.0, 0.02, replace(phi, v3_eps=2 * phi.v3_eps))["p10"]
    assert two == 2 * one


def test_price_terms_refuse_expiry():
    with pytest.raises(TerminalLayerError):
        asy.price_terms(0.0, 100.0, 100.0, 0.0, asy.PUBLISHED_2006)


@pytest.mark.parametrize("tau,x", cases.PDE_GRID)
def test_term_pde_residuals(tau, x):
    res = cases.pde_residuals(asy.PUBLISHED_2006, tau=tau, spot=x)
    for name, (value, scale) in res.items():
        assert abs(value) <= 1e-5 * scale, name


@pytest.mark.parametrize("kind", ["put", "bump"])
def test_term_pde_residuals_other_payoffs(kind):
    res = cases.pde_residuals(asy.PUBLISHED_2010, tau=0.75, spot=97.0, kind=kind)
    for name, (value, scale) in res.items():
        assert abs(value) <= 1e-5 * scale, name


def test_reduced_route_is_unreduced_with_v2_zero():
    phi = asy.PUBLISHED_2006
    fo = asy.UnreducedFirstOrder(phi.sigma_star, 0.0)
    a = asy.price_terms(0.4, 100.0, 104.0, 0.01, phi)
    b = asy.price_terms_unreduced(0.4, 100.0, 104.0, 0.01, phi, fo)
    assert a == b


def test_term_operator_exposes_p10():
    phi = asy.PUBLISHED_2006
    assert asy.term_operator("p10", 0.5, phi) == {(1, 1): 0.5 * phi.v3_eps, (0, 1): 0.0}


# --- implied-vol terms and the surface ---


def test_flat_surface_without_corrections():
    phi = asy.GroupParams(0.21)
    tau, d = np.meshgrid([0.1, 0.5, 2.0], [-0.2, 0.0, 0.3])
    np.testing.assert_allclose(asy.iv_terms(tau, d, phi)["total"], 0.21, rtol=0, atol=1e-15)


def test_i10_at_the_money():
    phi = asy.PUBLISHED_2010
    assert asy.iv_terms(0.3, 0.0, phi)["i10"] == pytest.approx(
        phi.v3_eps / (2 * phi.sigma_star), rel=1e-14)


def test_iv_terms_2010(golden):
    rec = golden("iv_terms_2010")
    got = {k: float(v) for k, v in asy.iv_terms(0.25, -0.05, asy.PUBLISHED_2010).items()}
    assert_golden(rec, got, dict(tau=0.25, d=-0.05, phi=cases.PUBLISHED_10))


def test_iv_terms_refuse_expiry():
    with pytest.raises(TerminalLayerError):
        asy.iv_terms(0.0, 0.1, asy.PUBLISHED_2010)


def test_theta_trivial():
    th = asy.theta_from_phi(asy.GroupParams(0.25))
    assert th.to_array().tolist() == [0, 0.25, 0, 0, 0, 0, 0, 0, 0, 0]


def test_theta_2006(golden):
    rec = golden("theta_2006")
    assert_golden(rec, asy.theta_from_phi(asy.PUBLISHED_2006).to_dict(), dict(phi=cases.PUBLISHED_06))


def test_theta_u_row_v3_only():
    phi = asy.GroupParams(0.2, v3_eps=-0.01)
    assert asy.theta_from_phi(phi).u == pytest.approx(-3 * 0.01**2 / 0.2**7, rel=1e-14)


def test_theta_rejects_nonpositive_sigma():
    with pytest.raises(DomainError):
        asy.GroupParams(0.0)


def test_surface_eval_trivial():
    th = asy.SurfaceCoeffs(0, 0.3, 0, 0, 0, 0, 0, 0, 0, 0)
    assert asy.surface_eval(1.7, -0.4, th) == 0.3
    th = asy.SurfaceCoeffs(0.001, 0.2, 0, 0, 0, 0, 0, 0, 0, 0)
    assert asy.surface_eval(0.1, 0.0, th) == pytest.approx(0.21, abs=1e-15)


def test_surface_eval_example(golden):
    rec = golden("surface_eval_example")
    th = asy.theta_from_phi(asy.PUBLISHED_2006)
    got = float(asy.surface_eval(0.5, 0.1, th))
    assert_golden(rec, {"iv": got}, dict(tau=0.5, d=0.1, phi=cases.PUBLISHED_06))
    assert got == pytest.approx(float(asy.iv_terms(0.5, 0.1, asy.PUBLISHED_2006)["total"]), abs=1e-12)


def test_surface_eval_rejects_expiry():
    with pytest.raises(DomainError):
        asy.surface_eval(0.0, 0.0, asy.theta_from_phi(asy.PUBLISHED_2006))


def test_surface_round_trip_random():
    rng = np.random.default_rng(11)
    for _ in range(20):
        phi = cases.random_phi(rng)
        th = asy.theta_from_phi(phi)
        tau, d = cases.random_points(rng)
        diff = asy.surface_eval(tau, d, th) - asy.iv_terms(tau, d, phi)["total"]
        assert np.max(np.abs(diff)) <= 1e-12


@settings(max_examples=50, deadline=None)
@given(st.floats(0.05, 3.0), st.floats(-0.3, 0.3), st.floats(0.001, 0.05))
def test_surface_is_quadratic_in_d(tau, d, h):
    th = asy.theta_from_phi(asy.PUBLISHED_2010)
    f = lambda x: float(asy.surface_eval(tau, x, th))
    second = [f(d + (j + 1) * h) - 2 * f(d + j * h) + f(d + (j - 1) * h) for j in range(3)]
    expected = 2 * (th.u / tau**2 + th.v / tau + th.w) * h * h
    for s in second:
        assert abs(s - expected) <= 1e-12


def test_surface_price_consistency_order():
    # corrections scaled by eta (first order) and eta^2 (second order)
    base = asy.PUBLISHED_2010
    etas = np.array([1.0, 0.5, 0.25])
    errs = []
    for eta in etas:
        phi = base.scaled(0.1 * eta)
        total = 0.0
        for tau, k in ((0.25, 95.0), (0.5, 100.0), (1.0, 110.0)):
            d = float(bs.forward_log_moneyness(tau, 100.0, k, 0.01))
            iv = float(asy.iv_terms(tau, d, phi)["total"])
            p = asy.price_terms(tau, 100.0, k, 0.01, phi)["total"]
            total += abs(p - float(bs.price(tau, 100.0, k, 0.01, iv)))
        errs.append(total)
    slope = np.polyfit(np.log(etas), np.log(errs), 1)[0]
    assert slope >= 2.5


# --- regime check and serialisation ---


def test_regime_warning():
    phi = asy.GroupParams(0.2, v3_eps=0.15)
    with pytest.warns(asy.AsymptoticRegimeWarning):
        assert asy.check_regime(phi) == ["v3_eps"]
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        assert asy.check_regime(asy.GroupParams(0.2, v3_eps=0.01)) == []


def test_group_params_json_round_trip():
    phi = asy.PUBLISHED_2010
    assert asy.GroupParams.from_json(phi.to_json()) == phi


def test_group_params_reject_unknown_field():
    d = asdict(asy.PUBLISHED_2006)
    d["v2_eps"] = 0.0
    with pytest.raises(SchemaError, match="v2_eps"):
        asy.GroupParams.from_dict(d)


def test_group_params_missing_field_named():
    d = asdict(asy.PUBLISHED_2006)
    del d["sigma_star"]
    with pytest.raises(SchemaError, match="sigma_star"):
        asy.GroupParams.from_dict(d)


def test_malformed_json_reports_line():
    with pytest.raises(SchemaError, match="line 2"):
        asy.GroupParams.from_json('{"sigma_star": 0.2,\n oops}')
