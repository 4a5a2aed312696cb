import math
from fractions import Fraction

import pytest
from hypothesis import given, settings, strategies as st

from conic_calabi.errors import DomainError
from conic_calabi.gluing import NuRegime, classify
from conic_calabi.params import (GeometryParams, Regime, DerivedConstants, derive,
                                 parse_rational, regime)


def test_constant_table_n2():
    c = derive(GeometryParams(2, Fraction(3, 2)), Fraction(1, 4))
    assert (c.beta_star, c.mu, c.lam, c.a, c.b, c.C_beta) == (
        Fraction(1, 4), Fraction(1, 2), Fraction(1), Fraction(1, 6), Fraction(1, 4), Fraction(0))


def test_normalization_constants():
    c = derive(GeometryParams(2, Fraction(3, 2)), Fraction(1, 3))
    assert c.a_n_alpha == Fraction(2) * 2 / Fraction(1, 2)
    assert c.b_n_alpha == c.beta_star**3 * c.a_n_alpha


def test_C_vanishes_at_beta_star():
    g = GeometryParams(5, Fraction(7, 3), 2)
    assert derive(g, g.beta_star).C_beta == 0


@pytest.mark.parametrize("alpha", ["3", "1", "0", "-2", "7/2"])
def test_alpha_out_of_range(alpha):
    with pytest.raises(DomainError):
        GeometryParams(2, alpha)


@pytest.mark.parametrize("beta", [0, 1, Fraction(3, 2), -0.1, float("nan")])
def test_beta_out_of_range(beta):
    with pytest.raises(DomainError):
        derive(GeometryParams(2, Fraction(3, 2)), beta)


def test_bad_inputs():
    with pytest.raises(DomainError):
        parse_rational("5/0")
    with pytest.raises(DomainError):
        parse_rational({"num": 1, "den": 0})
    with pytest.raises(DomainError):
        GeometryParams(1, Fraction(3, 2))
    with pytest.raises(DomainError):
        GeometryParams(2, Fraction(3, 2), 0)


@pytest.mark.parametrize("beta, expected", [
    (Fraction(1, 4), Regime.CRITICAL),
    (0.3, Regime.SUPERCRITICAL),
    (0.1, Regime.SUBCRITICAL),
    (0.25 + 1e-15, Regime.CRITICAL),
])
def test_regime(beta, expected):
    assert regime(derive(GeometryParams(2, Fraction(3, 2)), beta)) is expected


def test_json_round_trip():
    g = GeometryParams(3, Fraction(5, 2), "infinity")
    c = derive(g, Fraction(2, 3))
    data = c.to_json()
    assert data["geometry"]["alpha"] == {"num": 5, "den": 2}
    assert DerivedConstants.from_json(data) == c
    assert GeometryParams.from_json(g.to_json()) == g
    assert math.isinf(g.nu0)


@st.composite
def geometry_and_beta(draw):
    n = draw(st.integers(2, 9))
    den = draw(st.integers(1, 40))
    num = draw(st.integers(den + 1, (n + 1) * den - 1))
    j0 = draw(st.integers(1, 6))
    bden = draw(st.integers(2, 200))
    bnum = draw(st.integers(1, bden - 1))
    return GeometryParams(n, Fraction(num, den), j0), Fraction(bnum, bden)


@settings(max_examples=200, deadline=None)
@given(geometry_and_beta())
def test_table_identities(gb):
    g, beta = gb
    c = derive(g, beta)
    assert 0 < c.beta_star < 1
    assert c.beta_star == (g.alpha - 1) / g.n
    assert c.mu * g.alpha == g.alpha + beta - 1
    assert c.lam * c.mu == g.alpha - 1
    assert c.mu > 0 and c.lam < g.alpha
    sign = (c.C_beta > 0) - (c.C_beta < 0)
    assert sign == (beta > c.beta_star) - (beta < c.beta_star)
    assert c.nu0 > 1


@settings(max_examples=200, deadline=None)
@given(geometry_and_beta())
def test_nu0_split_matches_j0_split(gb):
    g, _ = gb
    by_nu = (g.nu0 > g.n) - (g.nu0 < g.n)
    by_j0 = (g.j0 > g.alpha - 1) - (g.j0 < g.alpha - 1)
    assert by_nu == by_j0
    assert classify(g) is {-1: NuRegime.LESS, 0: NuRegime.EQUAL, 1: NuRegime.GREATER}[by_nu]
