"""Geometric inputs and the constant table derived from them.

Rational inputs stay exact (``fractions.Fraction``) all the way through the
constant table; floats are only produced by :meth:`DerivedConstants.floats`
when a solver needs them.  A float ``beta`` is accepted too, in which case
the beta-dependent constants are computed at machine precision.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from fractions import Fraction
from typing import NamedTuple, Union

from .errors import DomainError

INFINITY = "infinity"
REGIME_TOL = 1e-14

Real = Union[Fraction, float]


class Regime(str, Enum):
    SUBCRITICAL = "Subcritical"
    CRITICAL = "Critical"
    SUPERCRITICAL = "Supercritical"


def parse_rational(value) -> Fraction:
    """Parse ``"3/2"``, ``"0.25"``, ints, Fractions or ``{"num", "den"}``."""
    if isinstance(value, Fraction):
        return value
    if isinstance(value, bool):
        raise DomainError(f"not a rational number: {value!r}")
    if isinstance(value, int):
        return Fraction(value)
    if isinstance(value, dict):
        try:
            num, den = int(value["num"]), int(value["den"])
        except (KeyError, TypeError, ValueError) as exc:
            raise DomainError(f"malformed rational object: {value!r}") from exc
        if den == 0:
            raise DomainError(f"zero denominator in {value!r}")
        return Fraction(num, den)
    if isinstance(value, float):
        if not math.isfinite(value):
            raise DomainError(f"not a finite number: {value!r}")
        return Fraction(value)
    if isinstance(value, str):
        try:
            return Fraction(value.strip())
        except ZeroDivisionError as exc:
            raise DomainError(f"zero denominator in {value!r}") from exc
        except ValueError as exc:
            raise DomainError(f"not a rational number: {value!r}") from exc
    raise DomainError(f"not a rational number: {value!r}")


def parse_real(value) -> Real:
    """Like :func:`parse_rational` but lets Python floats through untouched."""
    if isinstance(value, float):
        if not math.isfinite(value):
            raise DomainError(f"not a finite number: {value!r}")
        return value
    return parse_rational(value)


def parse_j0(value) -> Union[int, str]:
    if isinstance(value, str) and value.strip().lower() in (INFINITY, "inf", "+inf"):
        return INFINITY
    try:
        j0 = int(value)
    except (TypeError, ValueError) as exc:
        raise DomainError(f"j0 must be a positive integer or 'infinity', got {value!r}") from exc
    if isinstance(value, float) and value != j0:
        raise DomainError(f"j0 must be an integer, got {value!r}")
    return j0


@dataclass(frozen=True)
class GeometryParams:
    n: int
    alpha: Fraction
    j0: Union[int, str] = 1

    def __post_init__(self):
        if isinstance(self.n, bool) or not isinstance(self.n, int):
            raise DomainError(f"n must be an integer, got {self.n!r}")
        object.__setattr__(self, "alpha", parse_rational(self.alpha))
        object.__setattr__(self, "j0", parse_j0(self.j0))
        if self.n < 2:
            raise DomainError(f"n must be >= 2, got {self.n}")
        if not 1 < self.alpha < self.n + 1:
            raise DomainError(f"alpha must lie in (1, n+1) = (1, {self.n + 1}), got {self.alpha}")
        if self.j0 != INFINITY and self.j0 < 1:
            raise DomainError(f"j0 must be >= 1, got {self.j0}")

    @property
    def beta_star(self) -> Fraction:
        return (self.alpha - 1) / self.n

    @property
    def nu0(self) -> Union[Fraction, float]:
        if self.j0 == INFINITY:
            return math.inf
        return self.j0 / self.beta_star

    def to_json(self) -> dict:
        return {"n": self.n, "alpha": rational_json(self.alpha), "j0": self.j0}

    @classmethod
    def from_json(cls, data: dict) -> "GeometryParams":
        return cls(int(data["n"]), parse_rational(data["alpha"]), data.get("j0", 1))


class FloatConstants(NamedTuple):
    n: int
    alpha: float
    beta: float
    beta_star: float
    mu: float
    lam: float
    a: float
    b: float
    C: float
    delta: float


@dataclass(frozen=True)
class DerivedConstants:
    geom: GeometryParams
    beta: Real
    beta_star: Fraction
    mu: Real
    lam: Real
    a: Real
    b: Fraction
    C_beta: Real
    a_n_alpha: Fraction
    b_n_alpha: Fraction
    nu0: Union[Fraction, float]

    @property
    def n(self) -> int:
        return self.geom.n

    @property
    def alpha(self) -> Fraction:
        return self.geom.alpha

    @property
    def delta(self) -> Real:
        """beta - beta_*, kept exact when beta is rational."""
        return self.beta - self.beta_star

    @property
    def exact(self) -> bool:
        return isinstance(self.beta, Fraction)

    def floats(self) -> FloatConstants:
        return FloatConstants(
            self.n, float(self.alpha), float(self.beta), float(self.beta_star),
            float(self.mu), float(self.lam), float(self.a), float(self.b),
            float(self.C_beta), float(self.delta),
        )

    def with_beta(self, beta) -> "DerivedConstants":
        return derive(self.geom, beta)

    def to_json(self) -> dict:
        out = {"geometry": self.geom.to_json()}
        for name in ("beta", "beta_star", "mu", "lam", "a", "b", "C_beta",
                     "a_n_alpha", "b_n_alpha", "nu0"):
            out[name] = rational_json(getattr(self, name))
        out["regime"] = regime(self).value
        return out

    @classmethod
    def from_json(cls, data: dict) -> "DerivedConstants":
        beta = data["beta"]
        beta = parse_rational(beta) if isinstance(beta, (dict, str)) else parse_real(beta)
        return derive(GeometryParams.from_json(data["geometry"]), beta)


def rational_json(x):
    if isinstance(x, Fraction):
        return {"num": x.numerator, "den": x.denominator}
    if isinstance(x, float) and math.isinf(x):
        return INFINITY
    return x


def derive(geom: GeometryParams, beta) -> DerivedConstants:
    """Constant table for the angle ``beta``.

    >>> c = derive(GeometryParams(2, Fraction(3, 2)), Fraction(1, 4))
    >>> c.beta_star, c.mu, c.lam, c.a, c.b, c.C_beta
    (Fraction(1, 4), Fraction(1, 2), Fraction(1, 1), Fraction(1, 6), Fraction(1, 4), Fraction(0, 1))
    """
    beta = parse_real(beta)
    if not 0 < beta < 1:
        raise DomainError(f"beta must lie in (0, 1), got {beta}")
    n, alpha = geom.n, geom.alpha
    beta_star = geom.beta_star
    mu = (alpha + beta - 1) / alpha
    lam = (alpha - 1) / mu
    a = mu / (n + 1)
    b = beta_star
    C_beta = alpha**n * (beta - beta_star) / (n + 1)
    a_n_alpha = Fraction(2) ** (n - 1) * n / (alpha - 1) ** (n - 1)
    b_n_alpha = beta_star ** (n + 1) * a_n_alpha
    return DerivedConstants(geom, beta, beta_star, mu, lam, a, b, C_beta,
                            a_n_alpha, b_n_alpha, geom.nu0)


def regime(consts: DerivedConstants) -> Regime:
    delta = consts.delta
    if isinstance(delta, Fraction):
        sign = (delta > 0) - (delta < 0)
    else:
        sign = 0 if abs(delta) <= REGIME_TOL else (1 if delta > 0 else -1)
    return {-1: Regime.SUBCRITICAL, 0: Regime.CRITICAL, 1: Regime.SUPERCRITICAL}[sign]
