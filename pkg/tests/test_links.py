import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.integrate import quad

from vipde.basis import BOUNDARY, CoefField, build_basis, synthesize_values
from vipde.links import (
    BALL,
    DARCY,
    LOGISTIC,
    LinkRangeError,
    LinkSpec,
    ball_map,
    ball_map_derivative,
    derivative_bound,
    link_apply,
    link_derivative,
    link_invert,
    psi_operator,
    psi_weights,
)

from oracles import bisect

SPECS = [LinkSpec(DARCY), LinkSpec(DARCY, K_min=0.3), LinkSpec(LOGISTIC, M0=2.0), LinkSpec(LOGISTIC, M0=5.0), LinkSpec(BALL, B=1.0), LinkSpec(BALL, B=2.5)]


def _darcy_quad(t):
    """(psi * phi)(t) / (psi * phi)(0) by adaptive quadrature."""
    bump = lambda y: math.exp(-1.0 / (1.0 - y * y)) if abs(y) < 1 else 0.0
    phi = lambda s: math.exp(s) if s < 0 else 1.0 + s
    mass = quad(bump, -1, 1, epsabs=1e-14)[0]
    conv = lambda x: quad(lambda y: bump(y) * phi(x - y), -1, 1, points=[x], epsabs=1e-14, epsrel=1e-13)[0] / mass
    return conv(t) / conv(0.0)


def test_anchor_values():
    assert link_apply(LinkSpec(DARCY), 0.0) == pytest.approx(1.0, abs=1e-12)
    assert link_apply(LinkSpec(LOGISTIC, M0=2.0), 0.0) == pytest.approx(1.0, abs=1e-15)
    assert link_apply(LinkSpec(BALL, B=1.0), 0.0) == 0.0
    assert link_invert(LinkSpec(LOGISTIC, M0=2.0), 1.0) == pytest.approx(0.0, abs=1e-15)
    assert link_invert(LinkSpec(BALL, B=1.0), 0.0) == 0.0


def test_darcy_inverse_bisection_oracle():
    assert abs(link_invert(LinkSpec(DARCY), 1.5) - 0.548952888447336) <= 1e-12


@pytest.mark.parametrize("t", [-4.0, -1.3, -0.5, 0.0, 0.2, 0.9, 1.1, 3.0])
def test_darcy_link_matches_quadrature(t):
    assert link_apply(LinkSpec(DARCY), t) == pytest.approx(_darcy_quad(t), rel=1e-9)


def test_logistic_formula():
    t = np.linspace(-30, 30, 101)
    M0 = 3.0
    np.testing.assert_allclose(link_apply(LinkSpec(LOGISTIC, M0=M0), t), M0 / (1.0 + (M0 - 1.0) * np.exp(-t)), rtol=1e-14)


@pytest.mark.parametrize("spec", SPECS, ids=lambda s: f"{s.kind}")
def test_monotone_and_in_range(spec):
    t = np.linspace(-50.0, 50.0, 10_000)
    v = link_apply(spec, t)
    # saturation makes far tails equal in floating point; strictness holds where resolvable
    assert np.all(np.diff(v) >= 0)
    core = np.linspace(-8.0, 8.0, 10_000)
    assert np.all(np.diff(link_apply(spec, core)) > 0)
    assert np.all(v >= spec.lower) and np.all(v <= spec.upper)
    assert np.all(link_apply(spec, core) > spec.lower)


@pytest.mark.parametrize("spec", SPECS, ids=lambda s: f"{s.kind}")
def test_derivative_bounded_and_consistent(spec):
    t = np.linspace(-50.0, 50.0, 10_001)
    d = link_derivative(spec, t)
    assert np.all(d > 0) or spec.kind == LOGISTIC
    assert np.max(np.abs(d)) <= derivative_bound(spec)
    h = 1e-6
    core = np.linspace(-5.0, 5.0, 41)
    fd = (link_apply(spec, core + h) - link_apply(spec, core - h)) / (2 * h)
    np.testing.assert_allclose(link_derivative(spec, core), fd, rtol=1e-6, atol=1e-8)


@pytest.mark.parametrize("spec", SPECS, ids=lambda s: f"{s.kind}")
def test_inverse_roundtrip(spec):
    lo = spec.lower + 1e-3 if math.isfinite(spec.lower) else -1.0
    hi = spec.upper - 1e-3 if math.isfinite(spec.upper) else 20.0
    y = np.linspace(lo, hi, 257)
    np.testing.assert_allclose(link_apply(spec, link_invert(spec, y)), y, atol=1e-10, rtol=0)


@given(st.floats(0.01, 30.0))
def test_darcy_inverse_against_bisection(y):
    spec = LinkSpec(DARCY)
    ref = bisect(lambda t: float(link_apply(spec, t)), y, -20.0, 40.0)
    assert link_invert(spec, y) == pytest.approx(ref, abs=1e-9)


@pytest.mark.parametrize("spec,y", [(LinkSpec(DARCY), 0.0), (LinkSpec(LOGISTIC, M0=2.0), 2.0), (LinkSpec(LOGISTIC), -0.1), (LinkSpec(BALL), 1.0), (LinkSpec(BALL), math.nan)])
def test_out_of_range(spec, y):
    with pytest.raises(LinkRangeError):
        link_invert(spec, y)


def test_bad_specs():
    with pytest.raises(ValueError):
        LinkSpec("exp")
    with pytest.raises(ValueError):
        LinkSpec(LOGISTIC, M0=1.0)
    with pytest.raises(ValueError):
        LinkSpec(BALL, B=0.0)


@given(st.floats(-1e6, 1e6), st.floats(-1e6, 1e6))
def test_ball_map_lipschitz(x1, x2):
    c = float(ball_map_derivative(0.0, 2.0))
    assert abs(ball_map(x1, 2.0) - ball_map(x2, 2.0)) <= c * abs(x1 - x2) + 1e-12


def test_psi_operator_examples():
    lev = np.array([-1, 0, 1, 1, 2, 3])
    zero = psi_operator(CoefField(np.zeros(6), lev), 2.0, 1, 1.0)
    assert np.all(zero.values == 0.0)
    c = np.array([0.3, -2.0, 5.0, -0.01, 1e3, 7.0])
    out = psi_operator(CoefField(c, lev), 2.0, 1, 1.5).values
    lv = np.maximum(lev, 0)
    lbar = np.maximum(lv, 1)
    w = 2.0 ** (-lv * 2.5) / lbar**2.0
    np.testing.assert_allclose(psi_weights(lev, 2.0, 1), w, rtol=1e-15)
    np.testing.assert_allclose(out, w * (3.0 / math.pi) * np.arctan(c / w), rtol=1e-14)
    assert np.all(np.abs(out) < 1.5 * w)


def test_psi_operator_saturates_monotonically():
    lev = np.array([2])
    bound = 1.0 * psi_weights(lev, 2.0, 1)[0]
    xs = np.logspace(-3, 8, 60)
    outs = np.array([psi_operator(CoefField(np.array([x]), lev), 2.0, 1, 1.0).values[0] for x in xs])
    assert np.all(np.diff(outs) >= 0) and np.all(outs < bound)
    assert outs[-1] == pytest.approx(bound, rel=1e-6)


@given(st.floats(0.0, 30.0))
def test_psi_operator_ball_in_sup_norm(scale):
    b = build_basis(d=1, J=3, S=4, flavor=BOUNDARY)
    rng = np.random.default_rng(int(scale * 1000))
    c = CoefField(scale * rng.standard_cauchy(b.size), b.levels)
    out = psi_operator(c, 2.0, 1, 1.0)
    # sum over elements of |w| sup|psi| bounds the synthesized sup-norm
    C = float(np.sum(psi_weights(b.levels, 2.0, 1) * np.abs(b.axis.matrix).max(axis=1)))
    assert np.abs(synthesize_values(out, b)).max() <= C
