import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conic_calabi.errors import BarrierError, DomainError, RegimeError, WindowError
from conic_calabi.metric import (BarrierSpec, cone_angle_at_D, cone_angle_at_infinity,
                                 cone_comparison, dV_dbeta, far_angle_fit,
                                 futaki_rigidity_check, g1_linearization, linearization_check,
                                 metric_profile, potential_V, potential_V_offset,
                                 potential_V_unfactored,
                                 second_order_remainder, small_beta_collapse)
from conic_calabi.params import derive

from conftest import GEOMS, OFFSETS, profile

G2 = GEOMS["n2"]
STAR = derive(G2, G2.beta_star)


def test_factored_matches_unfactored():
    c = derive(G2, Fraction(3, 10))
    s = np.linspace(0.05, 1.45, 41)
    assert np.allclose(potential_V(c, s), potential_V_unfactored(c, s), rtol=1e-12, atol=0)
    assert potential_V(c, 0.5) == pytest.approx(potential_V_unfactored(c, 0.5), rel=1e-12)


def test_V_critical_closed_form():
    s = np.linspace(0.01, 1.49, 30)
    assert np.allclose(potential_V(STAR, s), s * 0.25 * (1 - s / 1.5), rtol=1e-14)


def test_V_domain():
    for s in (0.0, 1.5, 2.0):
        with pytest.raises(DomainError):
            potential_V(STAR, s)
    # V(alpha) = 0 in the limit
    for beta in (Fraction(1, 10), Fraction(1, 4), Fraction(1, 2)):
        assert abs(potential_V(derive(G2, beta), 1.5 - 1e-12)) < 1e-11


@pytest.mark.parametrize("key", ["n2", "n3", "n4"])
@pytest.mark.parametrize("offset", OFFSETS)
def test_V_equals_profile_second_derivative(key, offset):
    sol = profile(key, offset)
    V = sol.V[1:-1]
    t = sol.t[1:-1]
    # the direct formula cancels where V is tiny, so compare the bulk there
    m = (V > 1e-4 * V.max()) & (t > 1e-3)
    assert np.allclose(V[m], potential_V(sol.consts, t[m]), rtol=1e-10, atol=0)


@pytest.mark.parametrize("key", ["n2", "n3", "n4"])
@pytest.mark.parametrize("offset", OFFSETS)
def test_V_equals_profile_near_divisor(key, offset):
    sol = profile(key, offset)
    side = next(sd for sd in sol.sides if sd.origin == float(sol.consts.alpha))
    d = side.d[(side.d > 0) & (side.d < 1e-3)]
    V_side = side.S_of(d) / (side.origin + side.sign * d) ** (sol.consts.n - 1)
    assert np.allclose(V_side, potential_V_offset(sol.consts, d), rtol=1e-10, atol=0)


@pytest.mark.parametrize("key", ["n2", "n3", "n4"])
@pytest.mark.parametrize("offset", [Fraction(-1, 20), Fraction(0), Fraction(1, 10**4)])
def test_cone_angle_at_D(key, offset):
    g = GEOMS[key]
    c = derive(g, g.beta_star + offset)
    assert cone_angle_at_D(c) == pytest.approx(2 * math.pi * float(c.beta), rel=1e-6)


@pytest.mark.parametrize("key", ["n2", "n3", "n4"])
def test_far_angle_against_decay_fit(key):
    sol = profile(key, Fraction(-1, 20))
    assert far_angle_fit(sol) == pytest.approx(cone_angle_at_infinity(sol.consts), rel=1e-4)


def test_far_angle_limits():
    c = derive(G2, Fraction(1, 1000))
    fc = c.floats()
    small = 2 * math.pi * fc.mu * fc.alpha * fc.beta / (fc.alpha - 1)
    assert cone_angle_at_infinity(c) == pytest.approx(small, rel=0.01)
    near = derive(G2, G2.beta_star - Fraction(1, 10**9))
    assert cone_angle_at_infinity(near) == pytest.approx(2 * math.pi * 0.5, rel=1e-3)
    for beta in np.linspace(0.01, 0.24, 12):
        angle = cone_angle_at_infinity(derive(G2, Fraction(beta)))
        assert 0 < angle < 2 * math.pi * 0.5
    with pytest.raises(RegimeError):
        cone_angle_at_infinity(STAR)


def test_cone_comparison_default_window():
    c = derive(G2, G2.beta_star + Fraction(1, 10**8))
    cmp = cone_comparison(c)
    assert cmp.kappa < 0.02
    assert cmp.V_ratio_min <= 1 <= cmp.V_ratio_max


@pytest.mark.xfail(strict=True, raises=AssertionError, reason="V / (s beta_*) - 1 is about -s/alpha, so kappa reaches 0.029 at s = 1e-2")
def test_cone_comparison_wide_window():
    c = derive(G2, G2.beta_star + Fraction(1, 10**8))
    assert cone_comparison(c, (1e-3, 1e-2)).kappa < 0.02


def test_cone_comparison_window_error():
    c = derive(G2, G2.beta_star + Fraction(1, 10**4))
    with pytest.raises(WindowError):
        cone_comparison(c, (1e-3, 1e-2))
    with pytest.raises(WindowError):
        cone_comparison(STAR, (0.5, 0.1))


def test_critical_near_zero_is_cone_to_order_s():
    for s in (1e-2, 1e-3, 1e-4):
        dev = cone_comparison(STAR, (s, s * 1.0001), points=2).V_ratio_min - 1
        assert dev == pytest.approx(-s / 1.5, rel=1e-3)


@pytest.mark.parametrize("key", ["n2", "n3", "n4"])
def test_linearization_slope(key):
    g = GEOMS[key]
    cs = derive(g, g.beta_star)
    s = np.linspace(0.1, 0.95, 9) * float(g.alpha)
    fd, an = linearization_check(cs, s, h=1e-6)
    assert np.max(np.abs(fd - an) / np.abs(an)) < 1e-4


def test_g1_beta_independent_and_relative_limit_at_alpha():
    s = np.array([0.3, 0.9])
    assert np.allclose(dV_dbeta(STAR, s), dV_dbeta(derive(G2, Fraction(1, 10)), s), rtol=0)
    # the ds^2 coefficient itself diverges like 1/(alpha - s); relative to g_{beta_*} it settles
    rel = []
    for d in (1e-6, 1e-7, 1e-8):
        ss, _ = g1_linearization(STAR, 1.5 - d)
        rel.append(ss * potential_V(STAR, 1.5 - d))
    limit = -1 / 0.25
    assert rel == pytest.approx([limit] * 3, rel=1e-5)
    assert abs(g1_linearization(STAR, 1.5 - 1e-8)[0]) > 10 * abs(g1_linearization(STAR, 1.5 - 1e-7)[0]) / 2


def test_g1_matches_metric_derivative():
    s = np.linspace(0.3, 1.4, 8)
    h = 1e-7
    fd = (1 / potential_V(STAR.with_beta(STAR.beta + h), s) - 1 / potential_V(STAR, s)) / h
    g1, _ = g1_linearization(STAR, s)
    assert np.allclose(fd, g1, rtol=1e-5)


def test_second_order_remainder_bounded():
    s = np.linspace(0.5, 1.4, 7)
    r4 = second_order_remainder(STAR, s, 1e-4)
    r5 = second_order_remainder(STAR, s, 1e-5)
    assert np.allclose(r4, r5, rtol=0.01)


def test_collapse_limits():
    reports = [small_beta_collapse(derive(G2, Fraction(1, 10**k))) for k in (2, 3, 4)]
    assert reports[1].nexus_ratio == pytest.approx(1, abs=0.01)
    errs = [abs(r.nexus_ratio - 1) for r in reports]
    assert errs[0] > errs[1] > errs[2]
    assert all(abs(r.gap_ratio - 1) < 10 * r.beta for r in reports)
    # circle length at the nexus is O(beta)
    lengths = np.array([r.circle_length_at_nexus for r in reports])
    betas = np.array([r.beta for r in reports])
    slope = np.polyfit(np.log(betas), np.log(lengths), 1)[0]
    assert slope == pytest.approx(1.0, abs=0.01)
    assert reports[0].transverse_factor == pytest.approx(2 * 1.5 / 0.5)
    with pytest.raises(RegimeError):
        small_beta_collapse(derive(G2, Fraction(1, 10)))


def test_metric_profile_csv():
    mp = metric_profile(derive(G2, Fraction(1, 5)), points=16, beta_star_consts=STAR)
    lines = mp.to_csv().splitlines()
    assert lines[0] == "s,V,g_ss,g_eta,g_D,radius"
    assert len(lines) == 17
    assert np.all(mp.V > 0)
    assert np.all(np.diff(mp.radius) < 0)
    assert mp.cone_angle_far is not None and mp.g1_samples is not None


def test_rigidity_default_and_constant():
    rep = futaki_rigidity_check()
    assert rep.strict and rep.gap > 0
    flat = futaki_rigidity_check(f=lambda u: 1.0)
    assert not flat.strict
    assert flat.ratio == pytest.approx(1.0, abs=1e-12)


def test_rigidity_bad_barrier():
    with pytest.raises(BarrierError):
        BarrierSpec(join=0.0)


@settings(max_examples=20, deadline=None)
@given(st.floats(-5, 5))
def test_rigidity_gap_shift_invariant(shift):
    base = futaki_rigidity_check().gap
    assert futaki_rigidity_check(BarrierSpec(shift=shift)).gap == pytest.approx(base, abs=1e-10)
