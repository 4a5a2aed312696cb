"""Radial Kähler-Einstein profile in the moment-map variable ``t = -phi'``.

With ``F(t) = t**n * (b - a t)`` the first integral of the radial equation
reads ``F(t) + C = exp(mu psi)`` where ``psi = -phi - lam u``.  Every
quantity is therefore a quadrature in ``t``::

    dphi/dt = t**n / (F + C),   du/dt = -t**(n-1) / (F + C),
    phi'' = V(t) = (F + C) / t**(n-1).

The interval ``(t_min, alpha)`` is split at the nexus ``t = lam`` into a
divisor branch ``[lam, alpha)`` and an apex branch ``(t_min, lam]``.  On each
branch ``F + C`` is stored as a polynomial in the offset ``d`` from the end
point, so the vanishing of ``F + C`` at ``alpha`` (and at ``gamma`` in the
subcritical case) never goes through a cancellation.  Segment integrals are
taken in ``log d``, which turns the logarithmic end-point behaviour into a
smooth integrand.

Gauge: ``phi`` vanishes at the apex (critical and supercritical) or at the
nexus (subcritical), and ``u`` is then fixed by ``psi = -phi - lam u``, which
makes the Monge-Ampère equation hold with constant 1.  The ``A1Normalized``
mode translates ``u`` by ``(1 + 1/n) log(b) / b``; the equation then carries
the constant ``b**(n+1)`` and the leading apex coefficient becomes 1.
"""

from __future__ import annotations

import io
import json
import math
from dataclasses import dataclass, field
from enum import Enum
from fractions import Fraction
from typing import Optional, Sequence

import numpy as np

from .errors import ConvergenceError, RangeError, RegimeError
from .numerics import (horner, integrate, newton_bisect, newton_bisect_vec,
                       poly_derivative, taylor_shift)
from .params import DerivedConstants, Regime, regime

QUAD_RTOL = 1e-13
INVERT_SLACK = 1e-12


class Normalization(str, Enum):
    RAW = "Raw"
    A1 = "A1Normalized"


class Branch(str, Enum):
    G1 = "G1"
    G2 = "G2"


def a1_shift(consts: DerivedConstants) -> float:
    """u-translation turning the leading apex coefficient into 1."""
    n, b = consts.n, float(consts.b)
    return (1 + 1 / n) * math.log(b) / b


def ma_constant(consts: DerivedConstants, normalization) -> float:
    return float(consts.b) ** (consts.n + 1) if Normalization(normalization) is Normalization.A1 else 1.0


class StructureFunction:
    """``F(t) = t^n (b - a t)`` with offset expansions around its special points."""

    def __init__(self, consts: DerivedConstants):
        self.consts = consts
        self.fc = consts.floats()
        n = consts.n
        self.n = n
        # exact where the constants are exact
        self.coeffs = [0] * n + [consts.b, -consts.a]
        self.lam = self.fc.lam
        self.alpha = self.fc.alpha
        self.C = self.fc.C
        self.F_lambda = float(self.exact_value(consts.lam))

    def exact_value(self, t):
        return sum(c * t**k for k, c in enumerate(self.coeffs))

    def __call__(self, t):
        return horner(self.coeffs, np.asarray(t, dtype=float))

    def derivative(self, t):
        t = np.asarray(t, dtype=float)
        return self.fc.mu * t ** (self.n - 1) * (self.lam - t)

    def offset_poly(self, origin, sign, add_C=True, vanish_order=0):
        """Coefficients in ``d`` of ``F(origin + sign d) (+ C)``.

        ``vanish_order`` low coefficients are set to exactly zero (they vanish
        mathematically at the chosen origin).
        """
        coeffs = taylor_shift(self.coeffs, origin, sign)
        if add_C:
            coeffs[0] = coeffs[0] + self.consts.C_beta
        out = [float(c) for c in coeffs]
        for k in range(vanish_order):
            out[k] = 0.0
        return out

    def nexus_deficit_poly(self, sign):
        """Coefficients in ``h`` of ``F(lam) - F(lam + sign h)`` (starts at h^2)."""
        lam = self.consts.lam
        coeffs = taylor_shift(self.coeffs, lam, sign)
        out = [-float(c) for c in coeffs]
        out[0] = out[1] = 0.0
        return out


# ---------------------------------------------------------------------------
# inverse branches


def eval_F(consts: DerivedConstants, t) -> float:
    t = float(t)
    alpha = float(consts.alpha)
    if not -INVERT_SLACK <= t <= alpha * (1 + INVERT_SLACK):
        raise RangeError(f"t = {t} outside [0, alpha]")
    return float(StructureFunction(consts)(t))


def _solve_increasing(coeffs, target, hi, x0=None):
    """Root in [0, hi] of the increasing polynomial ``p(x) = target``."""
    dcoeffs = poly_derivative(coeffs)
    target = np.asarray(target, dtype=float)
    hi = np.broadcast_to(np.asarray(hi, dtype=float), target.shape)
    return newton_bisect_vec(lambda x: horner(coeffs, x) - target,
                             lambda x: horner(dcoeffs, x),
                             np.zeros(target.shape), hi, x0)


def _branch_geometry(sf: StructureFunction, branch: Branch):
    """``(sign, span, far_poly, far_origin, q_shift)`` for one inverse branch.

    Far from the nexus the branch is parametrised by the offset ``d`` from its
    outer end point, where the polynomial ``far_poly(d) = q`` vanishes; ``q``
    is ``F + C`` except on an apex branch ending at ``t = 0`` where it is
    ``F`` itself (``q_shift = C`` records the difference).
    """
    fc = sf.fc
    t_min = _t_min_float(sf)
    if branch is Branch.G2:
        return 1, fc.alpha - fc.lam, sf.offset_poly(sf.consts.alpha, -1, vanish_order=1), fc.alpha, 0.0
    if t_min > 0:
        return -1, fc.lam - t_min, sf.offset_poly(t_min, 1, vanish_order=1), t_min, 0.0
    return -1, fc.lam, [float(c) for c in sf.coeffs], 0.0, fc.C


def _near_solve(sf: StructureFunction, branch: Branch, deficit):
    """``h = |t - lam|`` solving ``F(lam) - F(t) = deficit`` on ``branch``."""
    sign, span, *_ = _branch_geometry(sf, branch)
    P = sf.nexus_deficit_poly(sign)
    deficit = np.clip(np.asarray(deficit, dtype=float), 0.0, None)
    return _solve_increasing(P, deficit, span, np.sqrt(deficit / P[2]))


def _far_solve(sf: StructureFunction, branch: Branch, q):
    """Offset ``d`` of the root from the outer end point, given ``q``."""
    _, span, Q, _, _ = _branch_geometry(sf, branch)
    q = np.clip(np.asarray(q, dtype=float), 0.0, None)
    lead = next(k for k, c in enumerate(Q) if c != 0)
    x0 = np.minimum((q / Q[lead]) ** (1 / lead), span)
    return _solve_increasing(Q, q, span, x0)


def _branch_solve(sf: StructureFunction, branch: Branch, target):
    """Root ``t`` of ``F(t) + C = target`` on ``branch``."""
    fc = sf.fc
    target = np.atleast_1d(np.asarray(target, dtype=float))
    top = sf.F_lambda + fc.C
    sign, span, _, origin, q_shift = _branch_geometry(sf, branch)
    near = top - target <= 0.5 * top
    t = np.empty(target.shape)
    if near.any():
        t[near] = fc.lam + sign * _near_solve(sf, branch, top - target[near])
    far = ~near
    if far.any():
        t[far] = origin - sign * _far_solve(sf, branch, target[far] - q_shift)
    return t


def _t_min_float(sf: StructureFunction) -> float:
    if sf.fc.C >= 0:
        return 0.0
    if not hasattr(sf, "_gamma"):
        sf._gamma = subcritical_gamma(sf.consts)
    return sf._gamma


def invert_F(consts: DerivedConstants, branch, s) -> float:
    """Inverse of ``F`` on ``[0, lam]`` (G1) or ``[lam, alpha]`` (G2)."""
    branch = Branch(branch)
    sf = StructureFunction(consts)
    s = float(s)
    lo = 0.0 if branch is Branch.G1 else -sf.C
    hi = sf.F_lambda
    slack = INVERT_SLACK * max(abs(hi), abs(sf.C))
    if not lo - slack <= s <= hi + slack:
        raise RangeError(f"s = {s} outside the {branch.value} range [{lo}, {hi}]")
    s = min(max(s, lo), hi)
    if branch is Branch.G1:
        # root of F itself, without the constant
        if s <= 0.5 * hi:
            dF = poly_derivative(sf.coeffs)
            return newton_bisect(lambda t: float(sf(t)) - s,
                                 lambda t: float(horner(dF, t)),
                                 0.0, sf.lam, (s / sf.fc.b) ** (1 / sf.n))
        P = sf.nexus_deficit_poly(-1)
        h = _solve_increasing(P, np.array([hi - s]), sf.lam, np.sqrt((hi - s) / P[2]))[0]
        return sf.lam - h
    return float(_branch_solve(sf, Branch.G2, np.array([s + sf.C]))[0])


def subcritical_gamma(consts: DerivedConstants) -> float:
    """Root ``gamma`` of ``F(gamma) = -C`` on ``(0, lam)``."""
    if regime(consts) is not Regime.SUBCRITICAL:
        raise RegimeError("gamma is only defined for beta < beta_*")
    sf = StructureFunction(consts)
    target = -sf.C
    dF = poly_derivative(sf.coeffs)
    x0 = (target / sf.fc.b) ** (1 / sf.n)
    return newton_bisect(lambda t: float(sf(t)) - target,
                         lambda t: float(horner(dF, t)),
                         0.0, sf.lam, min(x0, sf.lam))


def nexus_second_derivative(consts: DerivedConstants) -> float:
    """``psi''`` at the nexus; negative since ``psi`` peaks there."""
    fc = consts.floats()
    sf = StructureFunction(consts)
    return -(sf.F_lambda + fc.C) / fc.lam ** (fc.n - 1)


# ---------------------------------------------------------------------------
# the profile


@dataclass(frozen=True)
class GridSpec:
    """Sampling of ``t``.

    ``points`` is the minimum number of samples per branch; the offsets from
    each end point are geometric with ratio ``ratio`` down to ``depth`` times
    the branch length.  ``t_values`` overrides the automatic grid.
    """

    points: int = 64
    ratio: float = 1.05
    depth: float = 1e-12
    t_values: Optional[Sequence[float]] = None

    def __post_init__(self):
        if self.points < 64:
            raise ValueError("grid resolution must be at least 64 points per branch")
        if not self.ratio > 1:
            raise ValueError("grid ratio must exceed 1")
        if not 0 < self.depth < 1:
            raise ValueError("grid depth must lie in (0, 1)")

    def offsets(self, span: float) -> np.ndarray:
        k_needed = math.log(1 / self.depth) / math.log(self.ratio)
        count = max(self.points, int(math.ceil(k_needed)) + 1)
        return span * np.geomspace(1.0, self.depth, count)


@dataclass
class _Side:
    """One branch: ``t = origin + sign d`` for ``d`` in ``(0, span]``."""

    origin: float
    sign: int
    span: float
    S: list
    n: int
    d: np.ndarray = field(default=None)
    u: np.ndarray = field(default=None)
    phi: np.ndarray = field(default=None)

    def t(self, d):
        return self.origin + self.sign * d

    def S_of(self, d):
        return horner(self.S, d)

    def du_dd(self, d):
        t = self.t(d)
        return -self.sign * t ** (self.n - 1) / self.S_of(d)

    def dphi_dd(self, d):
        t = self.t(d)
        return self.sign * t**self.n / self.S_of(d)

    def log_integral(self, g, d_from, d_to):
        """``int_{d_from}^{d_to} g(d) dd`` computed in ``y = log d``."""
        d_from = np.asarray(d_from, dtype=float)
        d_to = np.asarray(d_to, dtype=float)
        ya, yb = np.log(d_from), np.log(d_to)
        lo, hi = np.minimum(ya, yb), np.maximum(ya, yb)
        vals = integrate(lambda y: g(np.exp(y)) * np.exp(y), lo, hi, rtol=QUAD_RTOL)
        return np.where(yb >= ya, vals, -vals)


@dataclass(frozen=True, eq=False)
class ProfileSolution:
    consts: DerivedConstants
    regime: Regime
    normalization: Normalization
    t: np.ndarray
    u: np.ndarray
    phi: np.ndarray
    psi: np.ndarray
    V: np.ndarray
    u0: float
    psi0: float
    t_min: float
    u_shift: float
    u_extinct: Optional[float]
    ma_constant: float
    sides: tuple = field(repr=False, compare=False, default=())

    @property
    def n_divisor_side(self) -> int:
        return self.sides[0].d.size

    def eval_t(self, t):
        """Dense evaluation of ``(u, phi)`` at arbitrary ``t`` in ``(t_min, alpha)``."""
        t = np.atleast_1d(np.asarray(t, dtype=float))
        u = np.empty(t.shape)
        phi = np.empty(t.shape)
        lam = self.consts.floats().lam
        div = t >= lam
        for mask, side in ((div, self.sides[0]), (~div, self.sides[1])):
            if mask.any():
                d = (t[mask] - side.origin) * side.sign
                u[mask], phi[mask] = self._eval_offset(side, d)
        return u, phi

    def _eval_offset(self, side: _Side, d):
        if np.any(d <= 0) or np.any(d > side.span * (1 + 1e-12)):
            raise RangeError("requested point outside the profile domain")
        nodes = side.d  # decreasing
        ld = np.log(nodes)
        pos = np.searchsorted(-ld, -np.log(d))
        pos = np.clip(pos, 0, nodes.size - 1)
        prev = np.clip(pos - 1, 0, nodes.size - 1)
        pick = np.where(np.abs(ld[prev] - np.log(d)) < np.abs(ld[pos] - np.log(d)), prev, pos)
        base = nodes[pick]
        du = side.log_integral(side.du_dd, base, d)
        dphi = side.log_integral(side.dphi_dd, base, d)
        return side.u[pick] + du, side.phi[pick] + dphi

    def eval_offset(self, side_index: int, d):
        """Dense evaluation at offsets ``d`` on one branch (0 = divisor, 1 = apex)."""
        side = self.sides[side_index]
        d = np.atleast_1d(np.asarray(d, dtype=float))
        u, phi = self._eval_offset(side, d)
        t = side.t(d)
        S = side.S_of(d)
        return t, u, phi, S

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write("t,u,phi,psi,V\n")
        for row in zip(self.t, self.u, self.phi, self.psi, self.V):
            buf.write(",".join(fmt(x) for x in row) + "\n")
        return buf.getvalue()

    def metadata(self) -> dict:
        return {
            "regime": self.regime.value,
            "normalization": self.normalization.value,
            "constants": self.consts.to_json(),
            "u0": self.u0,
            "psi0": self.psi0,
            "t_min": self.t_min,
            "u_shift": self.u_shift,
            "u_extinct": self.u_extinct,
            "monge_ampere_constant": self.ma_constant,
            "samples": int(self.t.size),
            "quadrature_rtol": QUAD_RTOL,
        }


def fmt(x) -> str:
    """17 significant digits, fixed layout."""
    if x is None:
        return ""
    x = float(x)
    if math.isnan(x):
        return "nan"
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return format(x, ".16e")


def _sides(consts: DerivedConstants):
    sf = StructureFunction(consts)
    fc = sf.fc
    reg = regime(consts)
    n = consts.n
    divisor = _Side(fc.alpha, -1, fc.alpha - fc.lam,
                    sf.offset_poly(consts.alpha, -1, vanish_order=1), n)
    if reg is Regime.SUBCRITICAL:
        gamma = subcritical_gamma(consts)
        apex = _Side(gamma, 1, fc.lam - gamma, sf.offset_poly(gamma, 1, vanish_order=1), n)
    else:
        apex = _Side(0.0, 1, fc.lam, sf.offset_poly(0, 1), n)
    return sf, reg, divisor, apex


def solve_profile(consts: DerivedConstants, grid: GridSpec = GridSpec(),
                  normalization=Normalization.RAW) -> ProfileSolution:
    """Sample the profile on a grid of ``t`` values, ordered by increasing ``u``."""
    normalization = Normalization(normalization)
    sf, reg, divisor, apex = _sides(consts)
    fc = sf.fc
    t_min = apex.origin if reg is Regime.SUBCRITICAL else 0.0

    if grid.t_values is not None:
        tv = np.asarray(grid.t_values, dtype=float)
        if np.any(tv <= t_min):
            raise RegimeError(f"grid requests t <= t_min = {t_min}")
        if np.any(tv >= fc.alpha):
            raise RangeError("grid requests t >= alpha")
        d_div = np.unique(np.append(fc.alpha - tv[tv >= fc.lam], divisor.span))[::-1]
        d_apex = np.unique(np.append(tv[tv < fc.lam] - t_min, apex.span))[::-1]
    else:
        d_div = grid.offsets(divisor.span)
        d_apex = grid.offsets(apex.span)

    for side, d in ((divisor, d_div), (apex, d_apex)):
        side.d = d
    psi0 = math.log(sf.F_lambda + fc.C) / fc.mu

    # phi anchor
    if reg is Regime.SUBCRITICAL:
        phi_lam = 0.0
    else:
        seg = apex.log_integral(apex.dphi_dd, d_apex[1:], d_apex[:-1])
        tail = integrate(lambda d: apex.dphi_dd(d), [0.0], [d_apex[-1]], rtol=QUAD_RTOL)[0]
        phi_lam = float(np.sum(seg) + tail)
    u_shift = a1_shift(consts) if normalization is Normalization.A1 else 0.0
    u_lam = u_shift - (phi_lam + psi0) / fc.lam

    for side in (divisor, apex):
        d = side.d
        du = side.log_integral(side.du_dd, d[:-1], d[1:])
        dphi = side.log_integral(side.dphi_dd, d[:-1], d[1:])
        side.u = u_lam + np.concatenate([[0.0], np.cumsum(du)])
        side.phi = phi_lam + np.concatenate([[0.0], np.cumsum(dphi)])

    u_extinct = None
    if reg is Regime.SUPERCRITICAL:
        tail = integrate(lambda d: -apex.du_dd(d), [0.0], [d_apex[-1]], rtol=QUAD_RTOL)[0]
        u_extinct = float(apex.u[-1] + tail)

    # assemble in order of increasing u (decreasing t)
    t = np.concatenate([divisor.t(divisor.d[::-1]), apex.t(apex.d[1:])])
    u = np.concatenate([divisor.u[::-1], apex.u[1:]])
    phi = np.concatenate([divisor.phi[::-1], apex.phi[1:]])
    S = np.concatenate([divisor.S_of(divisor.d[::-1]), apex.S_of(apex.d[1:])])
    if np.any(S <= 0):
        raise ConvergenceError("F + C lost positivity on the grid")
    psi = np.log(S) / fc.mu
    V = S / t ** (fc.n - 1)
    for arr in (t, u, phi, psi, V):
        arr.setflags(write=False)
    return ProfileSolution(consts, reg, normalization, t, u, phi, psi, V,
                           float(u_lam), psi0, float(t_min), u_shift, u_extinct,
                           ma_constant(consts, normalization), (divisor, apex))


def locate_u(sol: ProfileSolution, u, tol=1e-13):
    """Invert ``u`` on the profile.

    Returns ``(side, d, phi)``: the branch index (0 divisor, 1 apex), the
    offset from that branch's end point and ``phi`` there.  Offsets keep full
    precision where ``t`` itself would round to ``alpha`` or ``t_min``.
    """
    u = np.atleast_1d(np.asarray(u, dtype=float))
    if np.any(u < sol.u[0]) or np.any(u > sol.u[-1]):
        raise RangeError(f"u outside the sampled range [{sol.u[0]}, {sol.u[-1]}]")
    side_idx = np.where(u <= sol.u0, 0, 1)
    d_out = np.empty(u.shape)
    phi_out = np.empty(u.shape)
    for idx, side in enumerate(sol.sides):
        mask = side_idx == idx
        if not mask.any():
            continue
        # node offsets ordered by increasing u along this side
        if idx == 0:
            d_nodes, u_nodes = side.d[::-1], side.u[::-1]
        else:
            d_nodes, u_nodes = side.d, side.u
        uu = u[mask]
        pos = np.clip(np.searchsorted(u_nodes, uu), 1, u_nodes.size - 1)
        y_lo, y_hi = np.log(d_nodes[pos - 1]), np.log(d_nodes[pos])
        u_lo, u_hi = u_nodes[pos - 1], u_nodes[pos]
        w = np.where(u_hi != u_lo, (uu - u_lo) / np.where(u_hi != u_lo, u_hi - u_lo, 1.0), 0.0)
        y = y_lo + w * (y_hi - y_lo)
        ylow, yhigh = np.minimum(y_lo, y_hi), np.maximum(y_lo, y_hi)
        scale = np.maximum(1.0, np.abs(uu))
        stalled = np.zeros(uu.shape, dtype=bool)
        for _ in range(80):
            d = np.exp(y)
            uc, ph = sol._eval_offset(side, d)
            r = uc - uu
            done = (np.abs(r) <= tol * scale) | stalled
            if np.all(done):
                break
            slope = side.du_dd(d) * d
            y_new = y - r / slope
            # u is monotone in y on each side: keep a bracket
            up = (slope > 0) == (r > 0)
            yhigh = np.where(up, np.minimum(yhigh, y), yhigh)
            ylow = np.where(~up, np.maximum(ylow, y), ylow)
            y_new = np.where((y_new < ylow) | (y_new > yhigh), 0.5 * (ylow + yhigh), y_new)
            stalled = np.abs(y_new - y) <= 4e-16 * np.maximum(1.0, np.abs(y))
            y = np.where(done, y, y_new)
        else:
            raise ConvergenceError("u inversion did not converge")
        d_out[mask] = np.exp(y)
        phi_out[mask] = ph
    return side_idx, d_out, phi_out


def sample_at_u(sol: ProfileSolution, u, tol=1e-13):
    """``(t, phi, psi, V)`` at the requested ``u`` (scalar or array)."""
    scalar = np.ndim(u) == 0
    fc = sol.consts.floats()
    side_idx, d, phi = locate_u(sol, u, tol)
    t = np.empty(d.shape)
    S = np.empty(d.shape)
    for idx, side in enumerate(sol.sides):
        mask = side_idx == idx
        t[mask] = side.t(d[mask])
        S[mask] = side.S_of(d[mask])
    psi = np.log(S) / fc.mu
    V = S / t ** (fc.n - 1)
    if scalar:
        return float(t[0]), float(phi[0]), float(psi[0]), float(V[0])
    return t, phi, psi, V


@dataclass(frozen=True)
class CriticalFamilyFit:
    """``phi(u) = c0 - alpha u + (alpha/beta_*) log(1 + c1 exp(beta_* u))`` through two samples."""

    c0: float
    c1: float
    sup_residual: float
    u_range: tuple


def critical_family_fit(sol: ProfileSolution, u_lo: float = -10.0, u_hi: float = 10.0,
                        points: int = 201) -> CriticalFamilyFit:
    """Fit the closed critical family at ``u_lo`` and ``u_hi``, measure it in between."""
    if sol.regime is not Regime.CRITICAL:
        raise RegimeError("the closed family describes the critical profile only")
    fc = sol.consts.floats()
    bs, al = fc.beta_star, fc.alpha
    u = np.linspace(u_lo, u_hi, points)
    _, phi, _, _ = sample_at_u(sol, u)
    g = phi + al * u
    # g(u1) - g(u2) fixes c1 in closed form, then c0 follows
    D = math.exp(bs * (g[0] - g[-1]) / al)
    e1, e2 = math.exp(bs * u[0]), math.exp(bs * u[-1])
    c1 = (D - 1) / (e1 - D * e2)
    c0 = float(g[0] - al / bs * math.log1p(c1 * e1))
    model = c0 + al / bs * np.log1p(c1 * np.exp(bs * u))
    return CriticalFamilyFit(c0, c1, float(np.max(np.abs(model - g))), (u_lo, u_hi))


def a1_closed_form(consts: DerivedConstants, rho):
    """Critical ``A1Normalized`` profile ``(alpha/beta_*) log(1 + (beta_*/alpha) rho^2)``."""
    fc = consts.floats()
    return fc.alpha / fc.beta_star * np.log1p(fc.beta_star / fc.alpha * np.asarray(rho) ** 2)


def extinction_time(consts: DerivedConstants, normalization=Normalization.RAW) -> float:
    """Finite ``u`` at which a supercritical profile reaches ``t = 0``.

    Computed as ``u(lam) + int_0^lam t^(n-1) / (F + C) dt`` with ``u(lam)`` from
    the gauge relation at the nexus.
    """
    if regime(consts) is not Regime.SUPERCRITICAL:
        raise RegimeError("extinction time exists only for beta > beta_*")
    sf, _, _, apex = _sides(consts)
    fc = sf.fc
    # breakpoints resolve the scale C^(1/n) where F stops dominating C
    knee = min((fc.C / fc.b) ** (1 / fc.n), 0.5 * fc.lam)
    edges = np.concatenate([[0.0], knee * np.geomspace(1e-3, 1.0, 13),
                            np.geomspace(knee, fc.lam, 40)[1:]])
    edges = np.unique(edges)
    phi_lam = float(np.sum(integrate(apex.dphi_dd, edges[:-1], edges[1:], rtol=QUAD_RTOL)))
    du = float(np.sum(integrate(lambda d: -apex.du_dd(d), edges[:-1], edges[1:], rtol=QUAD_RTOL)))
    psi0 = math.log(sf.F_lambda + fc.C) / fc.mu
    shift = a1_shift(consts) if Normalization(normalization) is Normalization.A1 else 0.0
    return shift - (phi_lam + psi0) / fc.lam + du


# ---------------------------------------------------------------------------
# invariants along a solved profile


def monge_ampere_residual(sol: ProfileSolution) -> np.ndarray:
    """Relative residual of ``(-phi')^(n-1) phi'' = K exp(-mu phi - (alpha-1) u)``."""
    fc = sol.consts.floats()
    lhs = sol.t ** (fc.n - 1) * sol.V
    u_raw = sol.u - sol.u_shift
    rhs = np.exp(-fc.mu * sol.phi - (fc.alpha - 1) * u_raw)
    return np.abs(lhs - rhs) / np.abs(rhs)


def first_integral_residual(sol: ProfileSolution) -> np.ndarray:
    """Relative residual of ``F(-phi') + C = exp(-mu (phi + lam u))`` (raw ``u``).

    The left side is taken from the stored ``phi''``, i.e. ``t^(n-1) V``,
    which keeps full precision where ``F + C`` vanishes.
    """
    fc = sol.consts.floats()
    lhs = sol.V * sol.t ** (fc.n - 1)
    rhs = np.exp(-fc.mu * (sol.phi + fc.lam * (sol.u - sol.u_shift)))
    return np.abs(lhs - rhs) / lhs


def _V_prime(sol: ProfileSolution) -> np.ndarray:
    """``dV/dt`` evaluated through the offset polynomials."""
    fc = sol.consts.floats()
    out = np.empty(sol.t.shape)
    nd = sol.n_divisor_side
    for idx, side in enumerate(sol.sides):
        sl = slice(0, nd) if idx == 0 else slice(nd, None)
        t = sol.t[sl]
        d = (t - side.origin) * side.sign
        S = side.S_of(d)
        dS = horner(poly_derivative(side.S), d) * side.sign
        out[sl] = dS / t ** (fc.n - 1) - (fc.n - 1) * S / t**fc.n
    return out


def eigen_identity_residual(sol: ProfileSolution) -> np.ndarray:
    """Relative residual of ``phi'''/phi'' + (n-1) phi''/phi' + mu phi' + alpha - 1 = 0``.

    ``phi''' = dV/du = -V dV/dt``.
    """
    fc = sol.consts.floats()
    phi1 = -sol.t
    phi2 = sol.V
    phi3 = -sol.V * _V_prime(sol)
    terms = np.vstack([phi3 / phi2, (fc.n - 1) * phi2 / phi1, fc.mu * phi1,
                       np.full(phi1.shape, fc.alpha - 1)])
    return np.abs(terms.sum(axis=0)) / np.abs(terms).sum(axis=0)


def log_invariant(sol: ProfileSolution) -> np.ndarray:
    """``log phi'' + (n-1) log(-phi') + mu phi + (alpha-1) u - log K``; constant zero."""
    fc = sol.consts.floats()
    return (np.log(sol.V) + (fc.n - 1) * np.log(sol.t) + fc.mu * sol.phi
            + (fc.alpha - 1) * sol.u - math.log(sol.ma_constant) - (fc.alpha - 1) * sol.u_shift)


# ---------------------------------------------------------------------------
# independent construction through the two inverse branches


def two_branch_profile(sol: ProfileSolution, t_values):
    """Rebuild ``(u, phi)`` at ``t_values`` by integrating in ``psi``.

    On each side of the nexus ``du/dpsi = 1 / (G_i(e^{mu psi} - C) - lam)``.
    With ``psi = psi0 - y^2`` the square-root singularity at the nexus becomes
    a smooth integrand in ``y``.  The nexus anchor ``u0`` is shared with ``sol``.
    """
    t_values = np.atleast_1d(np.asarray(t_values, dtype=float))
    lam = sol.consts.floats().lam
    u_out = np.empty(t_values.shape)
    phi_out = np.empty(t_values.shape)
    for idx, side in enumerate(sol.sides):
        mask = t_values >= lam if idx == 0 else t_values < lam
        if mask.any():
            d = (t_values[mask] - side.origin) * side.sign
            u_out[mask], phi_out[mask] = two_branch_at_offsets(sol, idx, d)
    return u_out, phi_out


def two_branch_at_offsets(sol: ProfileSolution, side_index: int, d):
    """:func:`two_branch_profile` at offsets ``d`` from a branch end point.

    Side 0 is the divisor branch (``t = alpha - d``), side 1 the apex branch.
    Offsets avoid the rounding of ``t`` right next to the end points.

    Near the nexus the integral runs in ``y`` with ``psi = psi0 - y^2``; past
    the half-height point it runs in ``w = log q``, where ``q`` is the value
    vanishing at the outer end of the branch.  Both are substitutions in the
    same integral of ``dpsi / (G_i - lam)``.
    """
    sf = StructureFunction(sol.consts)
    fc = sf.fc
    side = sol.sides[side_index]
    branch = Branch.G2 if side_index == 0 else Branch.G1
    sign, span, Q, _, q_shift = _branch_geometry(sf, branch)
    d = np.atleast_1d(np.asarray(d, dtype=float))
    top = sf.F_lambda + fc.C
    half = 0.5 * top
    P = sf.nexus_deficit_poly(sign)
    h_s = side.span - d
    deficit = np.where(h_s <= 0.5 * span, horner(P, np.clip(h_s, 0.0, None)), top - side.S_of(d))
    near = deficit <= half

    def y_of(defc):
        return np.sqrt(-np.log1p(-np.asarray(defc) / top) / fc.mu)

    lim = 2 / math.sqrt(fc.mu * top / P[2])

    def near_integrand(y):
        y2 = (y * y).ravel()
        h = _near_solve(sf, branch, top * -np.expm1(-fc.mu * y2)).reshape(y.shape)
        with np.errstate(invalid="ignore", divide="ignore"):
            val = 2 * y / h
        return np.where(y == 0, lim, val)

    def far_integrand(w):
        q = np.exp(w.ravel())
        t = side.origin + side.sign * _far_solve(sf, branch, q)
        val = q / (fc.mu * (q + q_shift) * (t - fc.lam))
        return val.reshape(w.shape)

    edges = np.linspace(0.0, 1.0, 9)
    Y = y_of(np.where(near, deficit, half))
    lo = (Y[:, None] * edges[None, :-1]).ravel()
    hi = (Y[:, None] * edges[None, 1:]).ravel()
    # signed so that u - u0 has the right orientation on each side
    acc = integrate(near_integrand, lo, hi, rtol=QUAD_RTOL).reshape(Y.size, -1).sum(axis=1)
    acc = acc if branch is Branch.G1 else -acc
    if (~near).any():
        w_half = math.log(half - q_shift)
        w_s = np.log(horner(Q, d[~near]))
        nodes = np.linspace(0.0, 1.0, 17)
        lo = (w_half + (w_s - w_half)[:, None] * nodes[None, :-1]).ravel()
        hi = (w_half + (w_s - w_half)[:, None] * nodes[None, 1:]).ravel()
        # integrate with increasing abscissae, then orient
        a_, b_ = np.minimum(lo, hi), np.maximum(lo, hi)
        parts = integrate(far_integrand, a_, b_, rtol=QUAD_RTOL).reshape(-1, 16).sum(axis=1)
        acc[~near] += -parts
    u = sol.u0 + acc
    phi = -np.log(side.S_of(d)) / fc.mu - fc.lam * (u - sol.u_shift)
    return u, phi


def branch_oracle_deviation(sol: ProfileSolution, stride: int = 5) -> float:
    """Largest deviation of the two-branch rebuild from the stored samples.

    Compared at the stored branch offsets, relative to ``max(1, |u|)``.
    """
    worst = 0.0
    for idx, side in enumerate(sol.sides):
        d = side.d[1:-1:stride]
        u, phi = two_branch_at_offsets(sol, idx, d)
        ref_u, ref_phi = side.u[1:-1:stride], side.phi[1:-1:stride]
        dev = np.maximum(np.abs(u - ref_u), np.abs(phi - ref_phi)) / np.maximum(1.0, np.abs(ref_u))
        worst = max(worst, float(np.max(dev)))
    return worst


def dump_json(data) -> str:
    return json.dumps(data, indent=2, sort_keys=True, default=_json_default) + "\n"


def _json_default(x):
    if isinstance(x, Fraction):
        return {"num": x.numerator, "den": x.denominator}
    if isinstance(x, (np.floating, np.integer)):
        return x.item()
    if isinstance(x, Enum):
        return x.value
    raise TypeError(f"cannot serialise {type(x).__name__}")
