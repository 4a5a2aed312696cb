"""Gluing-scale planning: the scale ``epsilon_beta``, the zone radius ``r_eps``,
the weight ``rho`` and the cutoff ``chi``."""

from __future__ import annotations

import io
import math
from dataclasses import dataclass, field
from enum import Enum
from fractions import Fraction
from typing import Optional

import numpy as np

from .errors import DomainError, NoRootError, RangeError, RegimeError, ThetaError, WindowError
from .numerics import newton_bisect
from .params import INFINITY, DerivedConstants, GeometryParams, Regime, derive, regime
from .profile import Normalization, ProfileSolution, fmt, locate_u

DEFAULT_MARGIN = 10.0


class NuRegime(str, Enum):
    LESS = "Less"
    EQUAL = "Equal"
    GREATER = "Greater"


def classify(geom: GeometryParams) -> NuRegime:
    """Compare ``nu0 = n j0 / (alpha - 1)`` with ``n``, i.e. ``j0`` with ``alpha - 1``.

    >>> classify(GeometryParams(2, Fraction(3, 2), 1)).value
    'Greater'
    >>> classify(GeometryParams(3, Fraction(2), 1)).value
    'Equal'
    """
    if geom.j0 == INFINITY:
        return NuRegime.GREATER
    gap = Fraction(geom.j0) - (geom.alpha - 1)
    if gap < 0:
        return NuRegime.LESS
    return NuRegime.EQUAL if gap == 0 else NuRegime.GREATER


def nu0_float(geom: GeometryParams) -> float:
    return math.inf if geom.j0 == INFINITY else float(geom.nu0)


def law_exponent(geom: GeometryParams) -> Fraction:
    """Exponent ``p`` in ``epsilon_beta ~ (beta - beta_*)^p`` (log-corrected when Equal)."""
    if classify(geom) is NuRegime.LESS:
        return (geom.alpha - 1) / (geom.n * geom.j0)
    return Fraction(1, geom.n)


def law_string(geom: GeometryParams) -> str:
    """The scale law as a printed expression.

    >>> law_string(GeometryParams(3, Fraction(2), 1))
    '((β−β_*)/(−log(β−β_*)))^{1/3}'
    >>> law_string(GeometryParams(4, Fraction(5, 2), 1))
    '(β−β_*)^{3/8}'
    """
    p = law_exponent(geom)
    if classify(geom) is NuRegime.EQUAL:
        return f"((β−β_*)/(−log(β−β_*)))^{{{p}}}"
    return f"(β−β_*)^{{{p}}}"


def _delta(geom: GeometryParams, beta) -> float:
    consts = derive(geom, beta)
    if regime(consts) is not Regime.SUPERCRITICAL:
        raise RegimeError("the gluing scale needs beta > beta_*")
    return float(consts.delta)


def scale_law(geom: GeometryParams, epsilon, kappa_ratio: float = 1.0):
    """``kappa * epsilon^nu0``, ``kappa * epsilon^n log(1/epsilon)`` or ``kappa * epsilon^n``."""
    eps = np.asarray(epsilon, dtype=float)
    reg = classify(geom)
    if reg is NuRegime.LESS:
        return kappa_ratio * eps ** float(geom.nu0)
    if reg is NuRegime.EQUAL:
        return kappa_ratio * eps**geom.n * np.log(1 / eps)
    return kappa_ratio * eps**geom.n


def epsilon_beta(geom: GeometryParams, beta, kappa_ratio: float = 1.0) -> float:
    """Solve ``beta - beta_* = scale_law(epsilon)`` for ``epsilon``.

    In the Equal case the root is taken on ``(0, 1/e)``, where the law is
    increasing; the log variable ``x = log(1/epsilon)`` is solved by a
    bracketed Newton iteration.
    """
    if not kappa_ratio > 0:
        raise DomainError("kappa_ratio must be positive")
    delta = _delta(geom, beta)
    reg = classify(geom)
    n = geom.n
    if reg is NuRegime.LESS:
        return (delta / kappa_ratio) ** (1 / float(geom.nu0))
    if reg is NuRegime.GREATER:
        return (delta / kappa_ratio) ** (1 / n)
    target = math.log(delta / kappa_ratio)
    if target >= -n:
        raise NoRootError(f"beta - beta_* = {delta:.3g} exceeds the monotone branch maximum "
                          f"{kappa_ratio * math.exp(-n):.3g}")

    def h(x):
        return -n * x + math.log(x) - target

    hi = 2.0
    while h(hi) > 0:
        hi *= 2
    x = newton_bisect(h, lambda x: -n + 1 / x, 1.0, hi, xtol=1e-14, rtol=1e-14)
    return math.exp(-x)


def closed_form_epsilon(geom: GeometryParams, beta) -> float:
    """The displayed law without constants, e.g. ``(d / -log d)^(1/n)`` when Equal."""
    delta = _delta(geom, beta)
    reg = classify(geom)
    if reg is NuRegime.EQUAL:
        return (delta / -math.log(delta)) ** (1 / geom.n)
    return delta ** float(law_exponent(geom))


def theta_lower_bound(geom: GeometryParams) -> float:
    reg = classify(geom)
    if reg is NuRegime.LESS:
        return 1 - (float(geom.nu0) - 1) / geom.n
    if reg is NuRegime.GREATER:
        return 1 / (geom.n + 1)
    return 0.0


def default_sigma(geom: GeometryParams, theta: float) -> float:
    nu0 = nu0_float(geom)
    return min(1 - theta, (nu0 - geom.n) * float(geom.beta_star) * theta) / 2


def window_ratios(delta: float, r_eps: float, n: int):
    """``(r_eps^2 / delta^(1/n), 1 / r_eps^2)``; both must exceed the margin."""
    lower = math.inf if delta <= 0 else r_eps**2 / delta ** (1 / n)
    return lower, 1 / r_eps**2


@dataclass(frozen=True)
class GluingPlan:
    geom: GeometryParams
    beta: object
    epsilon: float
    epsilon_beta: float
    eta: float
    theta: float
    r_eps: float
    u_eps: float
    nu0: float
    regime: NuRegime
    E: float
    F: float
    sigma: float
    margin: float
    window: tuple
    kappa_ratio: float = 1.0
    zones: dict = field(default_factory=dict)

    @property
    def consts(self) -> DerivedConstants:
        return derive(self.geom, self.beta)

    def to_json(self) -> dict:
        out = {k: getattr(self, k) for k in ("epsilon", "epsilon_beta", "eta", "theta", "r_eps",
                                             "u_eps", "E", "F", "sigma", "margin", "kappa_ratio")}
        out.update({
            "geometry": self.geom.to_json(),
            "beta": str(self.beta),
            "nu0": INFINITY if math.isinf(self.nu0) else self.nu0,
            "regime": self.regime.value,
            "window": list(self.window),
            "zones": self.zones,
        })
        return out


def error_E(reg: NuRegime, epsilon: float, nu0: float, n: int, theta: float) -> float:
    if reg is NuRegime.LESS:
        return epsilon ** (nu0 - n * (1 - theta))
    if reg is NuRegime.EQUAL:
        return epsilon ** (n * theta) * math.log(1 / epsilon)
    return epsilon ** (n * theta)


def error_F(reg: NuRegime, eps_beta: float, nu0: float, n: int, theta: float, sigma: float) -> float:
    if reg is NuRegime.LESS:
        return eps_beta ** ((1 - theta) * min(1.0, n - nu0))
    if reg is NuRegime.EQUAL:
        return 1 / math.log(1 / eps_beta)
    return eps_beta**sigma


def plan_at_epsilon(geom: GeometryParams, beta, epsilon: float, theta: float,
                    eps_beta: Optional[float] = None, eta: float = 0.0,
                    margin: float = DEFAULT_MARGIN, sigma: Optional[float] = None,
                    kappa_ratio: float = 1.0, check_window: bool = True) -> GluingPlan:
    """Plan for an explicit ``epsilon``; ``beta = beta_*`` is allowed here."""
    if not 0 < theta < 1:
        raise ThetaError(f"theta must lie in (0, 1), got {theta}")
    bound = theta_lower_bound(geom)
    if theta <= bound:
        raise ThetaError(f"theta must exceed {bound:.6g} in the {classify(geom).value} regime")
    if not 0 < epsilon < 1:
        raise DomainError(f"epsilon must lie in (0, 1), got {epsilon}")
    consts = derive(geom, beta)
    if regime(consts) is Regime.SUBCRITICAL:
        raise RegimeError("gluing needs beta >= beta_*")
    n, bs = geom.n, float(geom.beta_star)
    reg = classify(geom)
    nu0 = nu0_float(geom)
    sigma = default_sigma(geom, theta) if sigma is None else sigma
    eps_beta = epsilon if eps_beta is None else eps_beta
    r_eps = epsilon ** ((1 - theta) / 2)
    u_eps = -2 / bs * math.log(r_eps / 2)
    delta = float(consts.delta)
    ratios = window_ratios(delta, r_eps, n)
    if check_window and min(ratios) < margin:
        raise WindowError(f"gluing window margins {ratios[0]:.3g}, {ratios[1]:.3g} below {margin}")
    zones = {"inner_max": r_eps / 2, "annulus": [r_eps / 2, 2 * r_eps], "outer_min": 2 * r_eps}
    return GluingPlan(geom, beta, epsilon, eps_beta, eta, theta, r_eps, u_eps, nu0, reg,
                      error_E(reg, epsilon, nu0, n, theta),
                      error_F(reg, eps_beta, nu0, n, theta, sigma),
                      sigma, margin, ratios, kappa_ratio, zones)


def make_plan(geom: GeometryParams, beta, theta: float, eta: float = 0.0,
              margin: float = DEFAULT_MARGIN, sigma: Optional[float] = None,
              kappa_ratio: float = 1.0, check_window: bool = True) -> GluingPlan:
    """Plan with ``epsilon = epsilon_beta (1 + eta)``."""
    if not abs(eta) < 0.5:
        raise DomainError(f"|eta| must be below 0.5, got {eta}")
    eb = epsilon_beta(geom, beta, kappa_ratio)
    return plan_at_epsilon(geom, beta, eb * (1 + eta), theta, eb, eta, margin, sigma,
                           kappa_ratio, check_window)


# ---------------------------------------------------------------------------
# weight and cutoff


def smoothstep(x):
    x = np.clip(x, 0.0, 1.0)
    return x**3 * (10 - 15 * x + 6 * x**2)


def cutoff_chi(plan: GluingPlan, rho):
    """``chi(rho / r_eps)``: 0 below ``r_eps/2``, 1 above ``2 r_eps``, quintic in ``log rho``."""
    rho = np.asarray(rho, dtype=float)
    if np.any(rho < 0):
        raise RangeError("rho must be nonnegative")
    with np.errstate(divide="ignore"):
        x = (np.log(rho / plan.r_eps) + math.log(2)) / math.log(4)
    return smoothstep(x)


def weight_rho(plan: GluingPlan, sol: ProfileSolution, u):
    """``rho`` at the Tian-Yau-frame coordinate ``u``.

    The profile is read at ``u_L = u - log(epsilon) / beta_*``; for ``u_L <= u_eps``
    ``rho^2 = (4 / beta_*) t(u_L)``, beyond it ``rho^2 = max(4 exp(-beta_* u_L), epsilon)``.
    """
    if sol.normalization is not Normalization.A1:
        raise DomainError("weight_rho expects an A1Normalized profile")
    if sol.consts.geom != plan.geom:
        raise DomainError("profile and plan belong to different geometries")
    bs = float(plan.geom.beta_star)
    u = np.atleast_1d(np.asarray(u, dtype=float))
    uL = u - math.log(plan.epsilon) / bs
    out = np.empty(u.shape)
    inner = uL <= plan.u_eps
    if np.any(inner):
        ui = uL[inner]
        if np.any(ui > sol.u[-1]):
            raise RangeError("inner zone reaches past the sampled profile")
        t = np.full(ui.shape, float(plan.geom.alpha))
        ok = ui >= sol.u[0]
        if np.any(ok):
            side, d, _ = locate_u(sol, ui[ok])
            t[ok] = np.where(side == 0, sol.sides[0].t(d), sol.sides[1].t(d))
        out[inner] = 4 * t / bs
    outer = ~inner
    out[outer] = np.maximum(4 * np.exp(-bs * uL[outer]), plan.epsilon)
    return np.sqrt(out)


def rho_mismatch(plan: GluingPlan, sol: ProfileSolution) -> float:
    """``|rho_inner / rho_outer - 1|`` at ``u_eps``."""
    bs = float(plan.geom.beta_star)
    side, d, _ = locate_u(sol, plan.u_eps)
    t = sol.sides[int(side[0])].t(d)[0]
    return abs(math.sqrt(4 * t / bs) / (2 * math.exp(-bs * plan.u_eps / 2)) - 1)


def samples_csv(plan: GluingPlan, sol: ProfileSolution, u) -> str:
    rho = weight_rho(plan, sol, u)
    chi = cutoff_chi(plan, rho)
    buf = io.StringIO()
    buf.write("u,rho,chi\n")
    for row in zip(np.atleast_1d(u), rho, chi):
        buf.write(",".join(fmt(x) for x in row) + "\n")
    return buf.getvalue()
