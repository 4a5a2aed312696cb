"""Riemannian geometry of the radial profile in the moment variable ``s = -phi'``.

The metric is ``ds^2 / V + 4 V eta^2 + (2 s / (alpha - 1)) g_D`` with
``V(s) = (F(s) + C) / s^(n-1)``; only the three scalar coefficients are
ever formed.
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .errors import BarrierError, DomainError, FitError, RegimeError, WindowError
from .numerics import horner, integrate, lstsq
from .params import DerivedConstants, Regime, regime
from .profile import ProfileSolution, StructureFunction, fmt, subcritical_gamma

COMPARISON_MARGIN = 100.0


def _interior(consts: DerivedConstants, s):
    s = np.asarray(s, dtype=float)
    alpha = float(consts.alpha)
    if np.any(s <= 0) or np.any(s >= alpha):
        raise DomainError(f"s must lie in (0, {alpha})")
    return s


def _ratio_sum(alpha, s, n):
    """``(alpha^(n+1) - s^(n+1)) / (alpha - s)`` without cancellation."""
    return sum(alpha ** (n - k) * s**k for k in range(n + 1))


def potential_V(consts: DerivedConstants, s):
    """Factored ``V = s (1 - s/alpha) beta_* (1 + (beta - beta_*) Q(s) / ((n+1) beta_*))``.

    Here ``Q(s) = (alpha^(n+1) - s^(n+1)) / (s^n (alpha - s))``.
    """
    s = _interior(consts, s)
    fc = consts.floats()
    Q = _ratio_sum(fc.alpha, s, fc.n) / s**fc.n
    return s * (1 - s / fc.alpha) * fc.beta_star * (1 + fc.delta * Q / ((fc.n + 1) * fc.beta_star))


def potential_V_unfactored(consts: DerivedConstants, s):
    s = _interior(consts, s)
    fc = consts.floats()
    sf = StructureFunction(consts)
    return (sf(s) + fc.C) / s ** (fc.n - 1)


def potential_V_offset(consts: DerivedConstants, d):
    """``V(alpha - d)`` from the offset expansion; accurate for tiny ``d``."""
    d = np.asarray(d, dtype=float)
    sf = StructureFunction(consts)
    poly = sf.offset_poly(consts.alpha, -1, vanish_order=1)
    return horner(poly, d) / (float(consts.alpha) - d) ** (consts.n - 1)


def dV_dbeta(consts: DerivedConstants, s):
    """``dV/dbeta = (alpha^(n+1) - s^(n+1)) / ((n+1) alpha s^(n-1))``; independent of ``beta``."""
    s = _interior(consts, s)
    fc = consts.floats()
    return (fc.alpha ** (fc.n + 1) - s ** (fc.n + 1)) / ((fc.n + 1) * fc.alpha * s ** (fc.n - 1))


def metric_coefficients(consts: DerivedConstants, s):
    """``(ds^2, eta^2, g_D)`` coefficients at ``s``."""
    V = potential_V(consts, s)
    s = np.asarray(s, dtype=float)
    return 1 / V, 4 * V, 2 * s / (float(consts.alpha) - 1)


def cone_metric_coefficients(consts: DerivedConstants, s):
    s = np.asarray(s, dtype=float)
    bs = float(consts.beta_star)
    return 1 / (s * bs), 4 * s * bs, 2 * s / (float(consts.alpha) - 1)


# ---------------------------------------------------------------------------
# cone angles


def cone_angle_at_D(consts: DerivedConstants, d_lo: float = 1e-6, d_hi: float = 1e-4,
                    points: int = 24) -> float:
    """``2 pi`` times the limit of ``V / (alpha - s)`` at the divisor.

    The ratio is fitted by a quadratic in ``d = alpha - s`` and extrapolated
    to ``d = 0``.
    """
    d = np.geomspace(d_lo, d_hi, points)
    y = potential_V_offset(consts, d) / d
    coef, res = lstsq([np.ones_like(d), d, d * d], y)
    if np.max(np.abs(res)) > 1e-10 * abs(coef[0]):
        raise FitError("quadratic fit of V / (alpha - s) did not close")
    return 2 * math.pi * float(coef[0])


def cone_angle_at_infinity(consts: DerivedConstants) -> float:
    """``2 pi mu (lam - gamma)`` for a subcritical profile."""
    if regime(consts) is not Regime.SUBCRITICAL:
        raise RegimeError("the far cone angle exists only for beta < beta_*")
    fc = consts.floats()
    return 2 * math.pi * fc.mu * (fc.lam - subcritical_gamma(consts))


def far_angle_fit(sol: ProfileSolution, d_lo: float = 1e-10, d_hi: float = 1e-5) -> float:
    """Far cone angle from the decay rate of ``t - gamma`` along the profile.

    Fits ``log(t - gamma) = c - kappa u + k (t - gamma)`` and returns
    ``2 pi kappa``.
    """
    if sol.regime is not Regime.SUBCRITICAL:
        raise RegimeError("the far cone angle exists only for beta < beta_*")
    side = sol.sides[1]
    m = (side.d >= d_lo) & (side.d <= d_hi)
    if m.sum() < 8:
        raise FitError("too few samples near the far end")
    d, u = side.d[m], side.u[m]
    coef, res = lstsq([np.ones_like(u), u, d], np.log(d))
    if np.sqrt(np.mean(res**2)) > 1e-6:
        raise FitError("far decay fit residual too large")
    return -2 * math.pi * float(coef[1])


# ---------------------------------------------------------------------------
# comparison with the cone, linearization


@dataclass(frozen=True)
class ConeComparison:
    s_window: tuple
    V_ratio_min: float
    V_ratio_max: float
    ds2_ratio_min: float
    ds2_ratio_max: float
    kappa: float

    def to_json(self) -> dict:
        return dict(self.__dict__)


def default_comparison_window(consts: DerivedConstants, margin: float = COMPARISON_MARGIN):
    """``[(margin C / beta_*)^(1/n), alpha / margin]``, inside ``delta << s^n << 1``."""
    fc = consts.floats()
    lo = (margin * abs(fc.C) / fc.beta_star) ** (1 / fc.n) if fc.C != 0 else fc.alpha / margin**2
    return lo, fc.alpha / margin


def cone_comparison(consts: DerivedConstants, s_window: Optional[tuple] = None,
                    points: int = 200) -> ConeComparison:
    """Coefficient ratios of the metric against the cone over ``s_window``.

    The ``g_D`` coefficients agree identically; the ``ds^2`` and ``eta^2``
    ratios are ``s beta_* / V`` and its reciprocal.
    """
    fc = consts.floats()
    if s_window is None:
        s_window = default_comparison_window(consts)
    lo, hi = float(s_window[0]), float(s_window[1])
    if not 0 < lo < hi < fc.alpha:
        raise WindowError(f"bad window [{lo}, {hi}]")
    if fc.delta > 0 and lo**fc.n <= 10 * fc.delta:
        raise WindowError("s^n must exceed 10 (beta - beta_*) across the window")
    s = np.geomspace(lo, hi, points)
    ratio = potential_V(consts, s) / (s * fc.beta_star)
    kappa = float(max(np.max(np.abs(ratio - 1)), np.max(np.abs(1 / ratio - 1))))
    return ConeComparison((lo, hi), float(ratio.min()), float(ratio.max()),
                          float((1 / ratio).min()), float((1 / ratio).max()), kappa)


def g1_linearization(consts: DerivedConstants, s):
    """``(ds^2, eta^2)`` coefficients of the first-order metric correction ``g_1``."""
    s = _interior(consts, s)
    fc = consts.floats()
    Q = _ratio_sum(fc.alpha, s, fc.n) / s**fc.n / ((fc.n + 1) * fc.beta_star)
    w = s * (1 - s / fc.alpha) * fc.beta_star
    return -Q / w, 4 * Q * w


def linearization_check(consts_star: DerivedConstants, s, h: float = 1e-6):
    """Finite-difference ``(V(beta_* + h) - V(beta_*)) / h`` and the analytic slope."""
    shifted = consts_star.with_beta(consts_star.beta + h)
    fd = (potential_V(shifted, s) - potential_V(consts_star, s)) / h
    return fd, dV_dbeta(consts_star, s)


def second_order_remainder(consts_star: DerivedConstants, s, h: float):
    """``(g(beta_* + h) - g(beta_*) - h g_1) / h^2`` for the ``ds^2`` coefficient."""
    shifted = consts_star.with_beta(consts_star.beta + h)
    g_ss = 1 / potential_V(shifted, s)
    g0 = 1 / potential_V(consts_star, s)
    g1, _ = g1_linearization(consts_star, s)
    return (g_ss - g0 - h * g1) / h**2


# ---------------------------------------------------------------------------
# metric profile over a grid


@dataclass(frozen=True)
class MetricProfile:
    consts: DerivedConstants
    s: np.ndarray
    V: np.ndarray
    radius: np.ndarray
    cone_angle_D: float
    cone_angle_far: Optional[float]
    g1_samples: Optional[np.ndarray] = field(default=None)

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write("s,V,g_ss,g_eta,g_D,radius\n")
        g_ss, g_eta, g_D = 1 / self.V, 4 * self.V, 2 * self.s / (float(self.consts.alpha) - 1)
        for row in zip(self.s, self.V, g_ss, g_eta, g_D, self.radius):
            buf.write(",".join(fmt(x) for x in row) + "\n")
        return buf.getvalue()

    def to_json(self) -> dict:
        return {"cone_angle_D": self.cone_angle_D, "cone_angle_far": self.cone_angle_far,
                "s_min": float(self.s[0]), "s_max": float(self.s[-1]), "samples": int(self.s.size),
                "radial_length": float(self.radius[0])}


def _radial_length(consts: DerivedConstants, s_lo: float, s_hi: float) -> float:
    """``int ds / sqrt(V)`` over ``[s_lo, s_hi]`` with ``s = end -+ w^2`` at both ends.

    The substitution absorbs the square-root zeros of ``V`` at ``gamma`` and ``alpha``.
    """
    alpha = float(consts.alpha)
    mid = 0.5 * (s_lo + s_hi)

    gamma = _s_min(consts)
    near = StructureFunction(consts).offset_poly(gamma, 1, vanish_order=1 if gamma > 0 else 0)

    def left(w):
        d = s_lo - gamma + w * w
        return 2 * w / np.sqrt(horner(near, d) / (gamma + d) ** (consts.n - 1))

    def right(w):
        d = alpha - s_hi + w * w
        return 2 * w / np.sqrt(potential_V_offset(consts, d))

    total = integrate(left, [0.0], [math.sqrt(mid - s_lo)])[0]
    total += integrate(right, [0.0], [math.sqrt(s_hi - mid)])[0]
    return float(total)


def _s_min(consts: DerivedConstants) -> float:
    return subcritical_gamma(consts) if regime(consts) is Regime.SUBCRITICAL else 0.0


def metric_profile(consts: DerivedConstants, points: int = 128,
                   beta_star_consts: Optional[DerivedConstants] = None) -> MetricProfile:
    """Sample ``V`` and the distance to the divisor on a grid in ``(s_min, alpha)``."""
    fc = consts.floats()
    s_min = _s_min(consts)
    span = fc.alpha - s_min
    x = np.linspace(0, 1, points + 2)[1:-1]
    s = s_min + span * 0.5 * (1 - np.cos(np.pi * x))
    V = potential_V(consts, s)
    radius = np.array([_radial_length(consts, si, fc.alpha) for si in s])
    far = cone_angle_at_infinity(consts) if regime(consts) is Regime.SUBCRITICAL else None
    g1 = None
    if beta_star_consts is not None:
        g1 = (V - potential_V(beta_star_consts, s)) / float(consts.delta) if consts.delta != 0 else None
    return MetricProfile(consts, s, V, radius, cone_angle_at_D(consts), far, g1)


# ---------------------------------------------------------------------------
# small angle collapse


@dataclass(frozen=True)
class CollapseReport:
    beta: float
    nexus_ratio: float
    gap_ratio: float
    circle_K: float
    circle_length_at_nexus: float
    transverse_factor: float
    radial_length: float
    normalized_length: float

    def to_json(self) -> dict:
        return dict(self.__dict__)


def small_beta_collapse(consts: DerivedConstants) -> CollapseReport:
    """Quantities describing the collapse of the subcritical metric as ``beta -> 0``.

    * ``nexus_ratio``: ``(F(lam) + C) 2 (alpha - 1) / (alpha^n beta^2)``, tends to 1.
    * ``gap_ratio``: ``(lam - gamma)(alpha - 1) / (alpha beta)``, tends to 1.
    * ``circle_K``: ``sup 4 V / beta`` over the interior; ``V`` is ``O(beta^2)``, so it tends to 0.
    * ``normalized_length``: radial length divided by ``2 sqrt(2 alpha / (alpha - 1))``.
    """
    if regime(consts) is not Regime.SUBCRITICAL:
        raise RegimeError("collapse needs beta < beta_*")
    fc = consts.floats()
    if fc.beta > 0.05:
        raise RegimeError("collapse report needs beta <= 0.05")
    sf = StructureFunction(consts)
    top = sf.F_lambda + fc.C
    gamma = subcritical_gamma(consts)
    s = np.linspace(gamma, fc.alpha, 2002)[1:-1]
    V = potential_V(consts, s)
    V_lam = top / fc.lam ** (fc.n - 1)
    length = _radial_length(consts, gamma, fc.alpha)
    factor = 2 * fc.alpha / (fc.alpha - 1)
    return CollapseReport(
        fc.beta,
        top * 2 * (fc.alpha - 1) / (fc.alpha**fc.n * fc.beta**2),
        (fc.lam - gamma) * (fc.alpha - 1) / (fc.alpha * fc.beta),
        float(np.max(4 * V) / fc.beta),
        2 * math.pi * math.sqrt(4 * V_lam),
        factor,
        length,
        length / (2 * math.sqrt(factor)),
    )


# ---------------------------------------------------------------------------
# one-dimensional Futaki-type inequality


@dataclass(frozen=True)
class BarrierSpec:
    """Convex nonincreasing ``phi`` equal to ``-u + e^u`` left of ``-join`` and
    ``e^(-u)`` right of ``join``, with a quintic C^2 bridge; ``shift``
    translates the whole barrier in ``u``."""

    join: float = 2.0
    shift: float = 0.0

    def __post_init__(self):
        if not self.join > 0:
            raise BarrierError("join half-width must be positive")


def _left(u):
    e = np.exp(u)
    return -u + e, -1 + e, e


def _right(u):
    e = np.exp(-u)
    return e, -e, e


def _quintic_bridge(barrier_spec: BarrierSpec):
    """Coefficients of the C^2 Hermite quintic on ``[-join, join]``."""
    a, b = -barrier_spec.join, barrier_spec.join
    L, R = _left(a), _right(b)
    rows, rhs = [], []
    for x, vals in ((a, L), (b, R)):
        rows.append([x**k for k in range(6)])
        rows.append([k * x ** (k - 1) if k >= 1 else 0.0 for k in range(6)])
        rows.append([k * (k - 1) * x ** (k - 2) if k >= 2 else 0.0 for k in range(6)])
        rhs += list(vals)
    return np.linalg.solve(np.array(rows), np.array(rhs))


class Barrier:
    def __init__(self, barrier_spec: BarrierSpec = BarrierSpec()):
        self.barrier_spec = barrier_spec
        self.c = _quintic_bridge(barrier_spec)
        self.dc = np.polynomial.polynomial.polyder(self.c)
        self.ddc = np.polynomial.polynomial.polyder(self.dc)

    def derivatives(self, u):
        """``(phi, phi', phi'')`` at ``u``."""
        x = np.asarray(u, dtype=float) - self.barrier_spec.shift
        j = self.barrier_spec.join
        P = np.polynomial.polynomial.polyval
        out = []
        for k, c in enumerate((self.c, self.dc, self.ddc)):
            mid = P(x, c)
            left = _left(np.minimum(x, -j))[k]
            right = _right(np.maximum(x, j))[k]
            out.append(np.where(x < -j, left, np.where(x > j, right, mid)))
        return tuple(out)

    def check(self, points: int = 4001):
        x = np.linspace(-self.barrier_spec.join, self.barrier_spec.join, points) + self.barrier_spec.shift
        _, d1, d2 = self.derivatives(x)
        if np.any(d2 < 0):
            raise BarrierError(f"bridge is not convex (min phi'' = {d2.min():.3e})")
        if np.any(d1 > 0):
            raise BarrierError(f"bridge is not nonincreasing (max phi' = {d1.max():.3e})")


@dataclass(frozen=True)
class RigidityReport:
    numerator: float
    denominator: float
    ratio: float
    gap: float
    strict: bool

    def to_json(self) -> dict:
        return dict(self.__dict__)


def futaki_rigidity_check(barrier_spec: BarrierSpec = BarrierSpec(),
                          f: Optional[Callable] = None, tail: float = 40.0) -> RigidityReport:
    """``int f phi'' du / int phi'' du`` for the barrier; below 1 strictly.

    ``f`` defaults to ``-phi'``, which equals 1 at the divisor end and decays.
    """
    barrier = Barrier(barrier_spec)
    barrier.check()
    j, c = barrier_spec.join, barrier_spec.shift
    edges = np.concatenate([np.linspace(c - tail, c - j, 41), np.linspace(c - j, c + j, 41)[1:],
                            np.linspace(c + j, c + tail, 41)[1:]])

    def weight(u):
        return barrier.derivatives(u)[2]

    def fweight(u):
        _, d1, d2 = barrier.derivatives(u)
        fu = -d1 if f is None else np.broadcast_to(np.asarray(f(u), dtype=float), np.shape(u))
        return fu * d2

    den = float(np.sum(integrate(weight, edges[:-1], edges[1:], rtol=1e-13)))
    num = float(np.sum(integrate(fweight, edges[:-1], edges[1:], rtol=1e-13)))
    ratio = num / den
    gap = 1 - ratio
    return RigidityReport(num, den, ratio, gap, bool(gap > 1e-12))
