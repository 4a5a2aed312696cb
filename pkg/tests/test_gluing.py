import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conic_calabi.errors import (DomainError, NoRootError, RangeError, RegimeError,
                                 ThetaError, WindowError)
from conic_calabi.gluing import (NuRegime, classify, closed_form_epsilon, cutoff_chi,
                                 epsilon_beta, law_exponent, law_string, make_plan,
                                 plan_at_epsilon, rho_mismatch, samples_csv, smoothstep,
                                 theta_lower_bound, weight_rho)
from conic_calabi.metric import cone_comparison
from conic_calabi.params import GeometryParams, derive

from conftest import GEOMS, profile

G2, G3, G4 = GEOMS["n2"], GEOMS["n3"], GEOMS["n4"]


def test_classify_examples():
    assert classify(G2) is NuRegime.GREATER and law_exponent(G2) == Fraction(1, 2)
    assert classify(G3) is NuRegime.EQUAL
    assert classify(G4) is NuRegime.LESS and law_exponent(G4) == Fraction(3, 8)
    assert law_exponent(G4) == Fraction(G4.n - 1, 2 * G4.n)
    assert law_string(G2) == "(β−β_*)^{1/2}"


@settings(max_examples=100, deadline=None)
@given(st.integers(2, 9), st.fractions(Fraction(1, 100), Fraction(99, 100)), st.integers(1, 6))
def test_classify_two_criteria_agree(n, x, j0):
    alpha = 1 + n * x
    g = GeometryParams(n, alpha, j0)
    by_nu = (g.nu0 > n) - (g.nu0 < n)
    by_j = (j0 > alpha - 1) - (j0 < alpha - 1)
    assert by_nu == by_j
    assert classify(g) is [NuRegime.LESS, NuRegime.EQUAL, NuRegime.GREATER][by_nu + 1]


def test_epsilon_beta_greater_and_less():
    d = Fraction(1, 10**8)
    assert epsilon_beta(G2, G2.beta_star + d) == pytest.approx(1e-4, rel=1e-12)
    assert epsilon_beta(G4, G4.beta_star + d) == pytest.approx(1e-8 ** (1 / float(G4.nu0)), rel=1e-12)
    assert epsilon_beta(G2, G2.beta_star + d, kappa_ratio=4.0) == pytest.approx(0.5e-4, rel=1e-12)


def test_epsilon_beta_equal_solves_law():
    for k in (6, 8, 12):
        d = 10.0**-k
        eps = epsilon_beta(G3, G3.beta_star + Fraction(d))
        assert 0 < eps < 1 / math.e
        assert eps**3 * math.log(1 / eps) == pytest.approx(d, rel=1e-12)
        ratio = eps / closed_form_epsilon(G3, G3.beta_star + Fraction(d))
        assert 0.5 <= ratio <= 2


def test_epsilon_beta_errors():
    with pytest.raises(NoRootError):
        epsilon_beta(G3, G3.beta_star + Fraction(1, 10))
    with pytest.raises(RegimeError):
        epsilon_beta(G2, G2.beta_star)
    with pytest.raises(DomainError):
        epsilon_beta(G2, G2.beta_star + Fraction(1, 100), kappa_ratio=0)


@pytest.mark.parametrize("key", ["n2", "n3", "n4"])
@settings(max_examples=25, deadline=None)
@given(st.floats(1e-14, 1e-5), st.floats(1.01, 10))
def test_epsilon_beta_increasing(key, d, factor):
    g = GEOMS[key]
    lo = epsilon_beta(g, g.beta_star + Fraction(d))
    hi = epsilon_beta(g, g.beta_star + Fraction(d * factor))
    assert hi > lo


def test_epsilon_beta_tends_to_zero():
    vals = [epsilon_beta(G3, G3.beta_star + Fraction(1, 10**k)) for k in range(6, 16)]
    assert all(a > b for a, b in zip(vals, vals[1:]))
    assert vals[-1] < 1e-4


def test_plan_definitions():
    p = make_plan(G2, G2.beta_star + Fraction(1, 10**12), 0.8)
    assert p.regime is NuRegime.GREATER
    assert p.epsilon / p.r_eps**2 == pytest.approx(p.epsilon**0.8, rel=1e-15)
    assert p.E == pytest.approx(p.epsilon**1.6, rel=1e-15)
    assert p.F == pytest.approx(p.epsilon**p.sigma, rel=1e-15)
    assert 2 * math.exp(-0.25 * p.u_eps / 2) == pytest.approx(p.r_eps, rel=1e-14)
    assert min(p.window) >= 10


def test_plan_eta():
    base = make_plan(G2, G2.beta_star + Fraction(1, 10**12), 0.6)
    for eta in (-0.4, 0.4):
        p = make_plan(G2, G2.beta_star + Fraction(1, 10**12), 0.6, eta)
        assert p.epsilon == pytest.approx(base.epsilon * (1 + eta), rel=1e-14)
    with pytest.raises(DomainError):
        make_plan(G2, G2.beta_star + Fraction(1, 10**12), 0.6, 0.5)


def test_plan_window_error_at_equality():
    eps = 1e-4
    r2 = eps ** 0.4
    with pytest.raises(WindowError):
        plan_at_epsilon(G2, G2.beta_star + Fraction(r2**2), eps, 0.6)


def test_theta_bounds():
    assert theta_lower_bound(G4) == pytest.approx(1 - (8 / 3 - 1) / 4)
    assert theta_lower_bound(G2) == pytest.approx(1 / 3)
    with pytest.raises(ThetaError):
        make_plan(G2, G2.beta_star + Fraction(1, 10**12), 0.3)
    with pytest.raises(ThetaError):
        make_plan(G4, G4.beta_star + Fraction(1, 10**16), 0.55)
    with pytest.raises(ThetaError):
        make_plan(G3, G3.beta_star + Fraction(1, 10**14), 1.0)


def test_window_margins_grow():
    w = [make_plan(G2, G2.beta_star + Fraction(1, 10**k), 0.8, check_window=False).window
         for k in (6, 8, 10, 12)]
    assert all(a[0] < b[0] and a[1] < b[1] for a, b in zip(w, w[1:]))
    assert min(w[-1]) >= 10


@pytest.mark.xfail(strict=True, raises=WindowError,
                   reason="upper margin 1/r_eps^2 = delta^-0.1 stays below 10 until delta = 1e-10")
@pytest.mark.parametrize("k", [6, 8])
def test_window_margins_theta_08(k):
    make_plan(G2, G2.beta_star + Fraction(1, 10**k), 0.8)


@pytest.mark.parametrize("key,k,theta", [("n2", 12, 0.6), ("n2", 12, 0.8), ("n3", 14, 0.6), ("n3", 14, 0.8)])
def test_gluing_zone_matches_cone(key, k, theta):
    g = GEOMS[key]
    c = derive(g, g.beta_star + Fraction(1, 10**k))
    p = make_plan(g, c.beta, theta)
    bs = float(g.beta_star)
    # rho^2 = 4 s / beta_* across the annulus [r/2, 2r]
    cmp = cone_comparison(c, (bs * (p.r_eps / 2) ** 2 / 4, bs * (2 * p.r_eps) ** 2 / 4))
    assert cmp.kappa <= 0.05


@pytest.fixture(scope="module")
def plan_and_profile():
    off = Fraction(1, 10**12)
    return make_plan(G2, G2.beta_star + off, 0.6), profile("n2", off, "A1Normalized")


def test_weight_rho_limits(plan_and_profile):
    p, sol = plan_and_profile
    shift = math.log(p.epsilon) / 0.25
    top = 2 * math.sqrt(1.5 / 0.25)
    u = np.array([sol.u[0] + shift - 5, sol.u[0] + shift + 1])
    assert np.allclose(weight_rho(p, sol, u), top, rtol=1e-6)
    far = weight_rho(p, sol, np.array([200.0]))
    assert far[0] == pytest.approx(math.sqrt(p.epsilon), rel=1e-14)
    rho = weight_rho(p, sol, np.linspace(-200, 200, 401))
    assert rho.min() >= math.sqrt(p.epsilon) * (1 - 1e-14)
    assert rho.max() <= top * (1 + 1e-14)


def test_weight_rho_errors(plan_and_profile):
    p, _ = plan_and_profile
    with pytest.raises(DomainError):
        weight_rho(p, profile("n2", Fraction(1, 10**12)), 0.0)
    with pytest.raises(DomainError):
        weight_rho(p, profile("n3", Fraction(1, 10**8), "A1Normalized"), 0.0)


@pytest.mark.parametrize("theta", [0.6, 0.8])
def test_rho_mismatch_small(theta):
    off = Fraction(1, 10**12)
    p = make_plan(G2, G2.beta_star + off, theta)
    assert rho_mismatch(p, profile("n2", off, "A1Normalized")) <= p.epsilon ** (theta / 2)


def test_cutoff_chi(plan_and_profile):
    p, _ = plan_and_profile
    r = p.r_eps
    assert cutoff_chi(p, r / 4) == 0 and cutoff_chi(p, r / 2) == 0
    assert cutoff_chi(p, 4 * r) == 1 and cutoff_chi(p, 2 * r) == 1
    assert cutoff_chi(p, r) == pytest.approx(0.5)
    assert cutoff_chi(p, 0.0) == 0
    with pytest.raises(RangeError):
        cutoff_chi(p, -1.0)


def test_samples_csv(plan_and_profile):
    p, sol = plan_and_profile
    lines = samples_csv(p, sol, np.linspace(-10, 10, 5)).splitlines()
    assert lines[0] == "u,rho,chi" and len(lines) == 6


@given(st.floats(-1, 2), st.floats(-1, 2))
def test_smoothstep_monotone(x, y):
    lo, hi = min(x, y), max(x, y)
    assert smoothstep(lo) <= smoothstep(hi)
    assert 0 <= smoothstep(x) <= 1
