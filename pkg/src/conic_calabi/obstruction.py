"""One-dimensional obstruction model.

The pairing of the glued error with the radial eigenfunction ``phi' + lam``
splits into a normal-bundle integral ``J`` and a boundary term ``I2`` at
``r = r_eps / 2``.  Fiber integrals over ``D`` are collapsed into the
constants of :class:`ModelInputs`.
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .asymptotics import _green_columns, _phi_at_rho, apex_window, formula_coefficients, rho_scale
from .errors import DomainError, NoSignChangeError, RegimeError, WindowError
from .gluing import (GluingPlan, NuRegime, classify, epsilon_beta, make_plan, nu0_float,
                     plan_at_epsilon)
from .numerics import integrate, lstsq
from .params import GeometryParams, Regime, derive, regime
from .profile import GridSpec, Normalization, ProfileSolution, fmt, locate_u, solve_profile

# offsets below this fraction of a branch span contribute nothing measurable
_FLOOR = 1e-250
_Y_STEP = 2.0


def default_kappa_I2(geom: GeometryParams) -> float:
    """``c_1 c_2`` for the cone: unit normal ``d/dr`` and sphere density ``beta_* (2n)^(1-n) r^(2n-1)``."""
    n = geom.n
    return float(geom.beta_star) * (2 * n) ** (1 - n)


@dataclass(frozen=True)
class ModelInputs:
    c_phi: float = 1.0
    a_TY: float = 1.0
    kappa_I2: Optional[float] = None
    faithful: bool = True

    def __post_init__(self):
        if not self.c_phi >= 0:
            raise DomainError("c_phi must be nonnegative")
        if self.kappa_I2 is not None and not self.kappa_I2 > 0:
            raise DomainError("kappa_I2 must be positive")
        if self.faithful and not self.a_TY > 0:
            raise DomainError("a_TY must be positive when faithful is set")

    def boundary_constant(self, geom: GeometryParams) -> float:
        return default_kappa_I2(geom) if self.kappa_I2 is None else self.kappa_I2

    def to_json(self) -> dict:
        return dict(self.__dict__)


# ---------------------------------------------------------------------------
# the normal-bundle integral J


def _u_pieces(sol: ProfileSolution, U: Optional[float]):
    """``(side, d_lo, d_hi)`` pieces covering ``u <= U`` (the whole line if ``U`` is None)."""
    div, apex = sol.sides
    if U is None:
        if sol.regime is not Regime.CRITICAL:
            raise RegimeError("an unbounded J needs the critical profile")
        # keep t^(n+1) clear of underflow near the apex
        floor = max(_FLOOR, 10.0 ** (-280 / (sol.consts.n + 1)))
        return [(0, div.span * _FLOOR, div.span), (1, apex.span * floor, apex.span)]
    if U > sol.u[-1]:
        raise WindowError(f"upper limit u = {U:.6g} lies beyond the profile (max {sol.u[-1]:.6g})")
    side, dU, _ = locate_u(sol, U)
    if side[0] == 0:
        return [(0, div.span * _FLOOR, float(dU[0]))]
    return [(0, div.span * _FLOOR, div.span), (1, float(dU[0]), apex.span)]


def _integrate_u(sol: ProfileSolution, log_g, weight, U: Optional[float]) -> float:
    """``int_{-inf}^U weight(t) exp(log_g(u, phi)) du`` in the log-offset variable."""
    total = 0.0
    for idx, lo, hi in _u_pieces(sol, U):
        side = sol.sides[idx]
        ya, yb = math.log(lo), math.log(hi)
        if yb <= ya:
            continue
        k = max(1, int(math.ceil((yb - ya) / _Y_STEP)))
        edges = np.linspace(ya, yb, k + 1)

        def f(y, side=side, idx=idx):
            d = np.exp(y).ravel()
            t, u, phi, S = sol.eval_offset(idx, d)
            jac = np.abs(side.du_dd(d)) * d
            return (weight(t) * np.exp(log_g(u, phi)) * jac).reshape(y.shape)

        total += float(np.sum(integrate(f, edges[:-1], edges[1:], rtol=1e-12, atol=1e-300)))
    return total


def _J_exponent(sol: ProfileSolution):
    fc = sol.consts.floats()
    nu0 = nu0_float(sol.consts.geom)
    if math.isinf(nu0):
        raise RegimeError("J vanishes identically when j0 is infinite")
    return fc, nu0, fc.beta_star * (nu0 - fc.n)


def J_upper_limit(plan: GluingPlan) -> float:
    return plan.u_eps - math.log(4)


def J_integral(sol: ProfileSolution, plan: Optional[GluingPlan], form: str = "direct") -> float:
    """``int e^(beta_*(nu0-n)u) (phi' + lam) e^(-mu phi) du`` up to ``u_eps - log 4``.

    ``form="ibp"`` evaluates the integrated-by-parts expression instead,
    ``(beta_* nu0 / mu) int e^(beta_*(nu0-n)u - mu phi) du`` minus the boundary
    term.  ``plan=None`` integrates the critical profile over the whole line.
    """
    fc, nu0, k = _J_exponent(sol)
    U = None if plan is None else J_upper_limit(plan)
    if U is None and not nu0 < fc.n:
        raise DomainError("the unbounded J converges only when nu0 < n")

    def log_g(u, phi):
        return k * u - fc.mu * phi

    if form == "direct":
        return _integrate_u(sol, log_g, lambda t: fc.lam - t, U)
    if form != "ibp":
        raise DomainError(f"unknown form {form!r}")
    body = fc.beta_star * nu0 / fc.mu * _integrate_u(sol, log_g, np.ones_like, U)
    if U is None:
        return body
    _, _, phiU = locate_u(sol, U)
    return body - math.exp(k * U - fc.mu * float(phiU[0])) / fc.mu


# ---------------------------------------------------------------------------
# the boundary term I2


def tail_r_derivative(reg: NuRegime, epsilon: float, r: float, n: int, nu0: float) -> float:
    """``r d/dr`` of the model Tian-Yau tail (coefficient ``a = 1``) in the ``r`` variable."""
    if reg is NuRegime.GREATER:
        return -(2 * n - 2) * epsilon**n / r ** (2 * n - 2)
    if reg is NuRegime.EQUAL:
        L = math.log(r / math.sqrt(epsilon))
        return epsilon**n * (1 - (2 * n - 2) * L) / r ** (2 * n - 2)
    return (2 - 2 * nu0) * epsilon**nu0 * r ** (2 - 2 * nu0)


@dataclass(frozen=True)
class SmoothFit:
    """Smooth part ``c2 rho^2 + c4 rho^4`` of ``rho d/drho (phi_beta - phi_*)``."""

    c2: float
    c4: float
    a_L_first: float
    window: tuple
    rms: float

    def __call__(self, rho):
        return self.c2 * rho**2 + self.c4 * rho**4


def fit_smooth_part(sol_beta: ProfileSolution, sol_star: ProfileSolution, r_center: float,
                    points: int = 48) -> SmoothFit:
    """Fit the first-derivative difference on ``[r_center / 4, 4 r_center]`` (A1 ``r``)."""
    consts = sol_beta.consts
    n, bs = consts.n, float(consts.beta_star)
    delta = float(consts.delta)
    scale = rho_scale(sol_beta)
    lo_raw, hi_raw = apex_window(delta, n)
    lo, hi = max(r_center / 4, lo_raw * scale), min(4 * r_center, hi_raw * scale)
    if not lo < r_center < hi:
        raise WindowError(f"r = {r_center:.4g} lies outside the fit window [{lo:.4g}, {hi:.4g}]")
    rho = np.geomspace(lo, hi, points) / 2
    _, t_b, _ = _phi_at_rho(sol_beta, rho)
    _, t_s, _ = _phi_at_rho(sol_star, rho)
    diff = 2 * (t_b - t_s) / bs
    cols, names = _green_columns(rho, delta, n, with_constant=False)
    g, res = lstsq(cols, diff * rho ** (2 * n - 2) / delta)
    c = dict(zip(names, g))
    return SmoothFit(float(c["rho^2"]), float(c["rho^4"]), float(g[0]), (lo, hi),
                     float(np.sqrt(np.mean(res**2))))


@dataclass
class GapReport:
    I2: float
    I2_pos: float
    I2_neg: float
    r_boundary: float
    green_first: float
    law: float
    law_ratio: float
    a_L_r: float
    kappa: float

    def to_json(self) -> dict:
        return dict(self.__dict__)


def gap_and_I2(sol_beta: ProfileSolution, sol_star: ProfileSolution, plan: GluingPlan,
               inputs: ModelInputs = ModelInputs(), smooth: Optional[SmoothFit] = None) -> GapReport:
    """Boundary term ``-int_{r = r_eps/2} d_r psi (phi' + lam) dsigma``.

    The gap is ``psi = a_TY * tail - G`` where ``G`` is the non-smooth (Green's)
    part of ``phi_beta - phi_*``; the smooth part of the difference is taken
    to be matched by the Tian-Yau side.  ``chi`` and its derivative vanish on
    the boundary circle.
    """
    for sol in (sol_beta, sol_star):
        if sol.normalization is not Normalization.A1:
            raise DomainError("gap_and_I2 expects A1Normalized profiles")
    consts = sol_beta.consts
    fc = consts.floats()
    n = fc.n
    delta = float(consts.delta)
    r_b = plan.r_eps / 2
    rho_b = np.array([r_b / 2])
    _, t_b, _ = _phi_at_rho(sol_beta, rho_b)
    if delta > 0:
        _, t_s, _ = _phi_at_rho(sol_star, rho_b)
        if smooth is None:
            smooth = fit_smooth_part(sol_beta, sol_star, r_b)
        green = float(2 * (t_b[0] - t_s[0]) / fc.beta_star - smooth(rho_b[0]))
    else:
        green = 0.0
    tail = inputs.a_TY * tail_r_derivative(plan.regime, plan.epsilon, r_b, n, plan.nu0)
    kI2 = inputs.boundary_constant(consts.geom)
    factor = (fc.lam - float(t_b[0])) * r_b ** (2 * n - 2) * kI2
    I2_pos = -tail * factor
    I2_neg = green * factor
    a_L_r = formula_coefficients(consts, 2, Normalization.A1).a_L_r if delta > 0 else \
        formula_coefficients(consts.with_beta(consts.beta_star + 1e-9), 2, Normalization.A1).a_L_r
    kappa = kI2 * (2 * n - 2) * fc.lam
    eps = plan.epsilon
    if plan.regime is NuRegime.GREATER:
        law = kappa * (inputs.a_TY * eps**n - a_L_r * delta)
    elif plan.regime is NuRegime.EQUAL:
        law = kappa * (inputs.a_TY * eps**n * math.log(plan.r_eps / math.sqrt(eps)) - a_L_r * delta)
    else:
        law = -kappa * a_L_r * delta
    I2 = I2_pos + I2_neg
    return GapReport(I2, I2_pos, I2_neg, r_b, green, law, I2 / law if law else math.nan,
                     a_L_r, kappa)


# ---------------------------------------------------------------------------
# assembled obstruction


@dataclass
class ObstructionReport:
    J_value: float
    I_normal: float
    I2_value: float
    I2_pos: float
    I2_neg: float
    A_total: float
    A_pos: float
    A_neg: float
    regime: str
    epsilon: float
    eta: float
    delta: float
    F: float
    E: float
    envelope: float
    kappa_ratio: float
    kappa_pos: float
    kappa_neg: float
    kappa_normal_form: Optional[float] = None
    eta_root: Optional[float] = None
    extras: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        return dict(self.__dict__)


class ObstructionModel:
    """Profiles and fits for one ``(geometry, beta)`` pair, reused across ``epsilon``."""

    def __init__(self, geom: GeometryParams, beta, inputs: ModelInputs = ModelInputs(),
                 grid: GridSpec = GridSpec()):
        self.geom = geom
        self.beta = beta
        self.inputs = inputs
        self.consts = derive(geom, beta)
        if regime(self.consts) is Regime.SUBCRITICAL:
            raise RegimeError("the obstruction model needs beta >= beta_*")
        self.star = derive(geom, geom.beta_star)
        self.sol_star = solve_profile(self.star, grid, Normalization.A1)
        self.sol_beta = self.sol_star if self.consts.delta == 0 else \
            solve_profile(self.consts, grid, Normalization.A1)
        self.delta = float(self.consts.delta)
        self.nu_regime = classify(geom)
        self.nu0 = nu0_float(geom)
        self._smooth = {}
        self._J_inf = None

    # leading constants -------------------------------------------------

    def J_infinity(self) -> float:
        if self._J_inf is None:
            self._J_inf = J_integral(self.sol_star, None)
        return self._J_inf

    def leading_constants(self, theta: float):
        """``(kappa_pos, kappa_neg)`` of the leading balance for this regime."""
        fc = self.consts.floats()
        n = fc.n
        kI2 = self.inputs.boundary_constant(self.geom)
        base = kI2 * (2 * n - 2) * fc.lam
        a_L_r = formula_coefficients(self.consts if self.delta > 0 else
                                     self.star.with_beta(self.star.beta_star + 1e-9),
                                     2, Normalization.A1).a_L_r
        kneg = base * a_L_r
        if self.nu_regime is NuRegime.GREATER:
            kpos = base * self.inputs.a_TY
        elif self.nu_regime is NuRegime.EQUAL:
            kpos = self.inputs.c_phi * fc.lam * (1 - theta) / fc.beta_star \
                + base * self.inputs.a_TY * theta / 2
        else:
            kpos = self.inputs.c_phi * self.J_infinity()
        return kpos, kneg

    def matched_ratio(self, theta: float) -> float:
        kpos, kneg = self.leading_constants(theta)
        return kpos / kneg

    # evaluation --------------------------------------------------------

    def smooth_fit(self, r_b: float) -> Optional[SmoothFit]:
        if self.delta == 0:
            return None
        key = round(math.log(r_b), 6)
        if key not in self._smooth:
            self._smooth[key] = fit_smooth_part(self.sol_beta, self.sol_star, r_b)
        return self._smooth[key]

    def evaluate(self, plan: GluingPlan, smooth: Optional[SmoothFit] = None,
                 kappa_ratio: Optional[float] = None) -> ObstructionReport:
        if smooth is None:
            smooth = self.smooth_fit(plan.r_eps / 2)
        if math.isinf(self.nu0) or self.inputs.c_phi == 0:
            J = 0.0
            I_normal = 0.0
        else:
            J = J_integral(self.sol_beta, plan)
            I_normal = self.inputs.c_phi * plan.epsilon**self.nu0 * J
        gap = gap_and_I2(self.sol_beta, self.sol_star, plan, self.inputs, smooth)
        kpos, kneg = self.leading_constants(plan.theta)
        r = plan.r_eps
        return ObstructionReport(
            J, I_normal, gap.I2, gap.I2_pos, gap.I2_neg,
            I_normal + gap.I2, I_normal + gap.I2_pos, gap.I2_neg,
            plan.regime.value, plan.epsilon, plan.eta, self.delta, plan.F, plan.E,
            r**2 + self.delta / r ** (2 * self.geom.n),
            plan.kappa_ratio if kappa_ratio is None else kappa_ratio, kpos, kneg,
            extras={"gap": gap.to_json()})

    def A_at_eta(self, eps_beta: float, eta: float, theta: float, smooth=None) -> float:
        plan = plan_at_epsilon(self.geom, self.beta, eps_beta * (1 + eta), theta, eps_beta,
                               eta, check_window=False)
        return self.evaluate(plan, smooth).A_total


def _ratio(model: ObstructionModel, theta: float, kappa_ratio: Optional[float],
           mismatch: float) -> float:
    if kappa_ratio is not None:
        return kappa_ratio
    # a negative balance has no matched scale; its magnitude still sets one
    kr = abs(model.matched_ratio(theta)) * mismatch
    return kr if kr > 0 else 1.0


def model_obstruction(geom: GeometryParams, beta, theta: float, eta: float = 0.0,
                      inputs: ModelInputs = ModelInputs(), kappa_ratio: Optional[float] = None,
                      mismatch: float = 1.0, model: Optional[ObstructionModel] = None,
                      h: float = 1e-3) -> ObstructionReport:
    """Assemble ``A = c_phi eps^nu0 J + I2`` at ``epsilon = epsilon_beta (1 + eta)``.

    ``kappa_ratio=None`` matches the scale law to the model's own leading
    constants.  The normal-form slope ``kappa`` is the centred difference of
    ``A / (beta - beta_*)`` in ``eta``.
    """
    model = model or ObstructionModel(geom, beta, inputs)
    if model.delta <= 0:
        raise RegimeError("model_obstruction needs beta > beta_*")
    kr = _ratio(model, theta, kappa_ratio, mismatch)
    plan = make_plan(geom, beta, theta, eta, kappa_ratio=kr)
    smooth = model.smooth_fit(plan.epsilon_beta ** ((1 - theta) / 2) / 2)
    rep = model.evaluate(plan, smooth, kr)
    up = model.A_at_eta(plan.epsilon_beta, eta + h, theta, smooth)
    dn = model.A_at_eta(plan.epsilon_beta, eta - h, theta, smooth)
    rep.kappa_normal_form = (up - dn) / (2 * h * model.delta)
    return rep


def find_sign_change(geom: GeometryParams, beta, theta: float,
                     inputs: ModelInputs = ModelInputs(), kappa_ratio: Optional[float] = None,
                     mismatch: float = 1.0, model: Optional[ObstructionModel] = None,
                     eta_cap: float = 0.49, rel_tol: float = 1e-3,
                     eta_max: Optional[float] = None) -> ObstructionReport:
    """Bisect ``A(eta)`` on ``|eta| <= min(10 F, eta_cap)`` unless ``eta_max`` is given."""
    model = model or ObstructionModel(geom, beta, inputs)
    if model.delta <= 0:
        raise RegimeError("find_sign_change needs beta > beta_*")
    kr = _ratio(model, theta, kappa_ratio, mismatch)
    plan0 = make_plan(geom, beta, theta, 0.0, kappa_ratio=kr)
    eb = plan0.epsilon_beta
    smooth = model.smooth_fit(eb ** ((1 - theta) / 2) / 2)
    if eta_max is None:
        eta_max = min(10 * plan0.F, eta_cap)
    elif not 0 < eta_max < 0.5:
        raise DomainError("eta_max must lie in (0, 0.5)")

    def A(eta):
        return model.A_at_eta(eb, eta, theta, smooth)

    lo, hi = -eta_max, eta_max
    A_lo, A_hi = A(lo), A(hi)
    if A_lo * A_hi >= 0:
        raise NoSignChangeError(
            f"A(eta) keeps one sign on [-{eta_max:.3g}, {eta_max:.3g}] "
            f"(A(-)={A_lo:.3e}, A(+)={A_hi:.3e})")
    target = rel_tol * model.delta
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        A_mid = A(mid)
        if abs(A_mid) < 0.01 * target or hi - lo < 1e-15:
            break
        if (A_mid < 0) == (A_lo < 0):
            lo, A_lo = mid, A_mid
        else:
            hi = mid
    rep = model.evaluate(plan_at_epsilon(geom, beta, eb * (1 + mid), theta, eb, mid,
                                         check_window=False), smooth, kr)
    rep.eta_root = mid
    rep.extras.update({"eta_max": eta_max, "A_minus": A(-eta_max), "A_plus": A(eta_max)})
    if abs(rep.A_total) >= target:
        raise NoSignChangeError(f"bisection stalled with |A| = {abs(rep.A_total):.3e}")
    return rep


def eta_trace_csv(model: ObstructionModel, theta: float, etas, kappa_ratio: Optional[float] = None) -> str:
    kr = _ratio(model, theta, kappa_ratio, 1.0)
    eb = epsilon_beta(model.geom, model.beta, kr)
    smooth = model.smooth_fit(eb ** ((1 - theta) / 2) / 2)
    buf = io.StringIO()
    buf.write("eta,epsilon,A\n")
    for eta in etas:
        buf.write(f"{fmt(eta)},{fmt(eb * (1 + eta))},{fmt(model.A_at_eta(eb, eta, theta, smooth))}\n")
    return buf.getvalue()


def positive_part(model: ObstructionModel, epsilon: float, theta: float) -> float:
    """Positive contribution ``c_phi eps^nu0 J + I2_pos`` at an explicit ``epsilon``."""
    plan = plan_at_epsilon(model.geom, model.beta, epsilon, theta, check_window=False)
    return model.evaluate(plan).A_pos


def delta_envelope(r: float, delta: float, n: int) -> float:
    return r**2 + delta / r ** (2 * n)
