"""Apex expansions of the profile.

Near the apex the potential has the form ``sum a_k rho^(2k)`` plus a
Green's-type correction ``a_L (beta - beta_*) / rho^(2n-2)``, where
``rho = exp(-beta_* u / 2)`` and ``r = 2 rho``.

The polynomial coefficients come from truncated power series.  With
``x = b^(-1/n) s`` the inverse ``gamma(s) = G(s^n)`` of the structure
function is ``x w(x)`` where ``w^n (1 - (a/b) x w) = 1``; that series has
rational coefficients whenever ``beta`` is rational.  The potential along the
apex branch is then ``phi(x) = n/(alpha-1) int_0^x w / (1 - x w / lam) dx``
and the relation ``x = z exp(-mu phi / n)`` (``z`` proportional to
``rho^2``) turns it into a series in ``rho^2``.

The fitted side regresses solved profiles on log-spaced ``r`` grids.
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Optional

import numpy as np

from .errors import DomainError, FitError, RegimeError, WindowError
from .numerics import lstsq
from .params import DerivedConstants, Regime, regime
from .profile import Normalization, ProfileSolution, a1_shift, locate_u

MAX_ORDER = 20


# ---------------------------------------------------------------------------
# truncated power series (coefficient lists, index = power)


def _zero(like):
    return Fraction(0) if isinstance(like, Fraction) else 0.0


def s_mul(f, g, N):
    out = [_zero(f[0])] * (N + 1)
    for i, fi in enumerate(f[:N + 1]):
        if fi == 0:
            continue
        for j, gj in enumerate(g[:N + 1 - i]):
            out[i + j] += fi * gj
    return out


def s_pow1(h, p, N):
    """``h**p`` for a series with ``h[0] = 1`` and any exponent ``p``."""
    g = [_zero(h[0])] * (N + 1)
    g[0] = h[0] ** 0
    for k in range(1, N + 1):
        acc = _zero(h[0])
        for j in range(1, min(k, len(h) - 1) + 1):
            acc += ((p + 1) * j - k) * h[j] * g[k - j]
        g[k] = acc / k
    return g


def s_exp(f, N):
    """``exp(f)`` for a series with ``f[0] = 0``."""
    g = [_zero(f[0])] * (N + 1)
    g[0] = f[0] ** 0
    for k in range(1, N + 1):
        acc = _zero(f[0])
        for j in range(1, min(k, len(f) - 1) + 1):
            acc += j * f[j] * g[k - j]
        g[k] = acc / k
    return g


def s_integrate(f, N):
    """Antiderivative vanishing at 0, truncated at order ``N``."""
    return [_zero(f[0])] + [f[k - 1] / k for k in range(1, N + 1)]


def s_compose(f, g, N):
    """``f(g(z))`` for ``g[0] = 0``."""
    out = [_zero(f[0])] * (N + 1)
    for c in reversed(f[:N + 1]):
        out = s_mul(out, g, N)
        out[0] += c
    return out


def s_scale(f, c):
    return [c * x for x in f]


def s_shift(f):
    """Multiply by the variable."""
    return [_zero(f[0])] + list(f[:-1])


# ---------------------------------------------------------------------------
# series of the inverse branch


@dataclass(frozen=True)
class ApexSeries:
    """``gamma(s) = G(s^n) = sum_k unit[k] (b^(-1/n) s)^k`` to order ``N``."""

    n: int
    N: int
    b: Fraction
    unit: tuple

    @property
    def scale(self) -> float:
        return float(self.b) ** (-1 / self.n)

    @property
    def coeffs(self) -> np.ndarray:
        """Float coefficients ``c_k`` of ``gamma`` in powers of ``s``."""
        sc = self.scale
        return np.array([float(e) * sc**k for k, e in enumerate(self.unit)])

    def __call__(self, s):
        s = np.asarray(s, dtype=float)
        x = self.scale * s
        acc = np.zeros_like(x)
        for e in reversed(self.unit):
            acc = acc * x + float(e)
        return acc

    def residual(self, consts: DerivedConstants, s):
        """``F(gamma(s)) - s^n`` relative to ``s^n``."""
        fc = consts.floats()
        g = self(s)
        s = np.asarray(s, dtype=float)
        return (g**fc.n * (fc.b - fc.a * g) - s**fc.n) / s**fc.n


def _w_series(q, n, N):
    """Solve ``w^n (1 - q x w) = 1`` as a series in ``x``."""
    one = q ** 0 if isinstance(q, Fraction) else 1.0
    w = [one] + [_zero(q)] * N
    for _ in range(N + 1):
        h = s_scale(s_shift(w), -q)
        h[0] += one
        w = s_pow1(h, Fraction(-1, n) if isinstance(q, Fraction) else -1.0 / n, N)
    return w


def series_G(consts: DerivedConstants, N: int) -> ApexSeries:
    """Series of ``gamma(s) = G(s^n)`` to order ``N`` (``N <= 20``)."""
    if not 1 <= N <= MAX_ORDER:
        raise DomainError(f"series order must lie in [1, {MAX_ORDER}], got {N}")
    q = consts.a / consts.b
    w = _w_series(q, consts.n, N - 1)
    unit = tuple([_zero(q)] + w)
    return ApexSeries(consts.n, N, consts.b, unit)


def _phi_series(consts: DerivedConstants, N: int):
    """Potential along the apex branch as a series in ``z`` (``C`` dropped).

    ``z = b^(-1/n) rho^2`` in the raw gauge and ``z = b rho^2`` in the
    A1-normalized gauge.
    """
    n = consts.n
    q = consts.a / consts.b
    lam, mu = consts.lam, consts.mu
    w = _w_series(q, n, N)
    # w / (1 - x w / lam)
    denom = s_scale(s_shift(w), -1 / lam)
    denom[0] += 1
    integrand = s_mul(w, s_pow1(denom, -1, N), N)
    phi_x = s_scale(s_integrate(integrand, N), n / (consts.alpha - 1))
    # x = z exp(-mu phi(x) / n), solved by fixed point
    x = [_zero(q), q**0] + [_zero(q)] * (N - 1)
    for _ in range(N + 1):
        e = s_exp(s_scale(s_compose(phi_x, x, N), -mu / n), N)
        x = s_shift(e)
    return s_compose(phi_x, x, N)


@dataclass
class ExpansionReport:
    normalization: Normalization
    n: int
    a_k: list
    a_L: float
    a_L_a_power: float
    a2_closed_form: float
    fitted_a_k: Optional[list] = None
    fitted_a_L: Optional[float] = None
    window: Optional[tuple] = None
    residuals: dict = field(default_factory=dict)
    extras: dict = field(default_factory=dict)

    @property
    def a_L_r(self) -> float:
        """``a_L`` for the variable ``r = 2 rho``."""
        return 4.0 ** (self.n - 1) * self.a_L

    def to_json(self) -> dict:
        return {
            "normalization": self.normalization.value,
            "variable": "rho",
            "a_k": [float(x) for x in self.a_k],
            "a_L": self.a_L,
            "a_L_r": self.a_L_r,
            "a_L_a_power": self.a_L_a_power,
            "a2_closed_form": self.a2_closed_form,
            "fitted_a_k": None if self.fitted_a_k is None else [float(x) for x in self.fitted_a_k],
            "fitted_a_L": self.fitted_a_L,
            "window": None if self.window is None else list(self.window),
            "residuals": self.residuals,
            "extras": self.extras,
        }


def formula_coefficients(consts: DerivedConstants, N: int = 6,
                         normalization=Normalization.A1) -> ExpansionReport:
    """Closed-form and series values of ``a_k`` and ``a_L`` in the variable ``rho``.

    ``a_L`` is the Green's-term coefficient ``alpha^n / ((n-1) n (n+1) b^(1+1/n))``
    (raw gauge); it combines the ``C / s^(1-1/n)`` term of the apex integral
    with the shift of ``s^(1/n)`` against ``rho^2``.  The closed-form variants of
    ``a_2`` and ``a_L`` are reported alongside for comparison.
    """
    normalization = Normalization(normalization)
    if not 1 <= N <= MAX_ORDER:
        raise DomainError(f"series order must lie in [1, {MAX_ORDER}], got {N}")
    n = consts.n
    fc = consts.floats()
    b = fc.b
    z_coeffs = _phi_series(consts, N)
    if normalization is Normalization.A1:
        a_k = [c * consts.b**k for k, c in enumerate(z_coeffs)]
        rho2 = b ** ((n + 1) / n)  # raw rho^2 per A1 rho^2
    else:
        a_k = [float(c) * b ** (-k / n) for k, c in enumerate(z_coeffs)]
        rho2 = 1.0
    c0 = 1 / ((n - 1) * b ** (1 + 1 / n))
    a1_raw = b ** (-1 - 1 / n)
    green = c0 - a1_raw / n
    a_L_raw = float(consts.alpha) ** n / (n + 1) * green
    a_L_a_power_raw = fc.a**n / ((n - 1) * n * (n + 1) * b ** (1 + 1 / n))
    a2_closed_form_raw = (1 / (2 * fc.lam * b ** (1 + 1 / n))) * (1 + 1 / (n + 1))
    # a rho^(-(2n-2)) term rescales with rho^2 to the power -(n-1)
    green_scale = rho2 ** (-(n - 1))
    return ExpansionReport(
        normalization, n, a_k, a_L_raw * green_scale, a_L_a_power_raw * green_scale,
        a2_closed_form_raw * rho2**2, extras={"c0": c0 * green_scale},
    )


# ---------------------------------------------------------------------------
# fits against solved profiles


def rho_scale(sol: ProfileSolution) -> float:
    """Ratio of the profile's ``rho`` to the raw-gauge ``rho`` at the same point."""
    if sol.normalization is Normalization.A1:
        fc = sol.consts.floats()
        return fc.b ** (-(fc.n + 1) / (2 * fc.n))
    return 1.0


def apex_window(delta: float, n: int, r_lo: Optional[float] = None, r_hi: float = 0.3):
    """Default window ``[3 delta^(1/(2n)), 0.3]`` in the raw-gauge ``r``."""
    if delta > 0 and delta ** (1 / n) >= r_hi**2:
        raise WindowError(f"(beta - beta_*)^(1/n) = {delta ** (1 / n):.3g} is not below r_hi^2")
    if r_lo is None:
        r_lo = 3 * delta ** (1 / (2 * n)) if delta > 0 else 1e-3
    if not 0 < r_lo < r_hi:
        raise WindowError(f"empty window [{r_lo}, {r_hi}]")
    return r_lo, r_hi


def _phi_at_rho(sol: ProfileSolution, rho):
    """``(phi, t, V)`` at the ``u`` where ``exp(-beta_* u / 2) = rho``."""
    bs = sol.consts.floats().beta_star
    u = -2 * np.log(rho) / bs
    side, d, phi = locate_u(sol, u)
    t = np.empty(d.shape)
    S = np.empty(d.shape)
    for idx, sd in enumerate(sol.sides):
        m = side == idx
        t[m] = sd.t(d[m])
        S[m] = sd.S_of(d[m])
    return phi, t, S / t ** (sol.consts.n - 1)


def _green_columns(rho, delta, n, with_constant=True):
    """Basis for ``y = Delta * rho^(2n-2) / delta``, first column gives ``a_L``."""
    p = rho ** (2 * n - 2)
    cols = [np.ones_like(rho), delta / rho ** (2 * n)]
    names = ["a_L", "delta/rho^2n"]
    if with_constant:
        cols.append(p / delta)
        names.append("const")
    cols += [p * rho**2 / delta, p * rho**4 / delta]
    names += ["rho^2", "rho^4"]
    if n > 2:
        cols.append(rho**2)
        names.append("a_L rho^2")
    return cols, names


def _check_pair(sol_beta: ProfileSolution, sol_star: ProfileSolution):
    if sol_beta.normalization is not sol_star.normalization:
        raise DomainError("both profiles must use the same normalization")
    if regime(sol_star.consts) is not Regime.CRITICAL:
        raise RegimeError("reference profile must be critical")
    if sol_beta.consts.geom != sol_star.consts.geom:
        raise DomainError("profiles belong to different geometries")
    if regime(sol_beta.consts) is Regime.SUBCRITICAL:
        raise RegimeError("expansion fit needs beta >= beta_*")
    return float(sol_beta.consts.delta)


def fit_expansion(sol_beta: ProfileSolution, sol_star: ProfileSolution, N: int = 6,
                  r_lo: Optional[float] = None, r_hi: float = 0.3,
                  points: int = 48) -> ExpansionReport:
    """Fit ``a_k`` on the critical profile and ``a_L`` on the difference.

    The difference is taken at equal ``u``; it carries a constant offset and
    a small ``rho^2`` term besides the Green's term because the apex anchor
    ``phi(0) = 0`` differs from the expansion's ``a_0 = 0``.  Both are in the
    regression basis.
    """
    delta = _check_pair(sol_beta, sol_star)
    n = sol_beta.consts.n
    rep = formula_coefficients(sol_beta.consts, N, sol_beta.normalization)
    r_lo, r_hi = apex_window(delta, n, r_lo, r_hi)
    r = np.geomspace(r_lo, r_hi, points) * rho_scale(sol_beta)
    rho = r / 2
    phi_s, _, _ = _phi_at_rho(sol_star, rho)
    cols = [rho ** (2 * k) for k in range(N + 1)]
    coef, res = lstsq(cols, phi_s)
    rep.fitted_a_k = list(coef)
    rep.window = (r_lo, r_hi)
    rep.residuals["polynomial_rms"] = float(np.sqrt(np.mean(res**2)))
    if delta == 0:
        phi_b, _, _ = _phi_at_rho(sol_beta, rho)
        rep.fitted_a_L = 0.0
        rep.residuals["correction_max"] = float(np.max(np.abs(phi_b - phi_s)))
        return rep
    phi_b, _, _ = _phi_at_rho(sol_beta, rho)
    diff = phi_b - phi_s
    y = diff * rho ** (2 * n - 2) / delta
    gcols, names = _green_columns(rho, delta, n)
    g, gres = lstsq(gcols, y)
    rep.fitted_a_L = float(g[0])
    rep.residuals["green_rms"] = float(np.sqrt(np.mean(gres**2)))
    fitted = dict(zip(names, (float(x) for x in g)))
    rep.extras.update({
        "delta": delta,
        "offset": fitted["const"],
        "green_fit": fitted,
        # smooth part of phi_beta: critical polynomial plus fitted corrections
        "smooth_beta": [coef[0] + fitted["const"], coef[1] + fitted["rho^2"],
                        coef[2] + fitted["rho^4"]] + list(coef[3:]),
        "green_part_min": float(np.min(g[0] * delta / rho ** (2 * n - 2))),
        "samples": {"r": r.tolist(), "diff": diff.tolist(),
                    "model": (sum(c * col for c, col in zip(g, gcols))
                              * delta / rho ** (2 * n - 2)).tolist()},
    })
    return rep


def expansion_csv(rep: ExpansionReport) -> str:
    from .profile import fmt
    s = rep.extras.get("samples")
    buf = io.StringIO()
    buf.write("r,diff,model\n")
    if s:
        for row in zip(s["r"], s["diff"], s["model"]):
            buf.write(",".join(fmt(v) for v in row) + "\n")
    return buf.getvalue()


@dataclass
class DerivativeReport:
    poly_first: list
    poly_second: list
    green_first: float
    green_second: float
    green_first_sign: int
    green_second_sign: int
    exponent_first: float
    exponent_second: float
    metric_K: float
    a_L: float
    window: tuple

    def to_json(self) -> dict:
        return dict(self.__dict__)


def _loglog_slope(rho, vals):
    keep = vals != 0
    A = np.column_stack([np.ones(keep.sum()), np.log(rho[keep])])
    coef, *_ = np.linalg.lstsq(A, np.log(np.abs(vals[keep])), rcond=None)
    return float(coef[1])


def fit_derivative_expansions(sol_beta: ProfileSolution, sol_star: ProfileSolution,
                              N: int = 6, r_lo: Optional[float] = None, r_hi: float = 0.3,
                              points: int = 48, metric_order: int = 2) -> DerivativeReport:
    """Expansions of ``rho d/drho phi`` and ``(rho d/drho)^2 phi``.

    Along the profile ``rho d/drho phi = 2 t / beta_*`` and
    ``(rho d/drho)^2 phi = 4 V / beta_*^2``, so both come straight from the
    samples.  Green's-term signs are measured, not assumed.
    """
    delta = _check_pair(sol_beta, sol_star)
    n = sol_beta.consts.n
    bs = sol_beta.consts.floats().beta_star
    r_lo, r_hi = apex_window(delta, n, r_lo, r_hi)
    r = np.geomspace(r_lo, r_hi, points) * rho_scale(sol_beta)
    rho = r / 2
    _, t_s, V_s = _phi_at_rho(sol_star, rho)
    D1s, D2s = 2 * t_s / bs, 4 * V_s / bs**2
    cols = [rho ** (2 * k) for k in range(N + 1)]
    p1, _ = lstsq(cols, D1s)
    p2, _ = lstsq(cols, D2s)
    if delta == 0:
        return DerivativeReport(list(p1), list(p2), 0.0, 0.0, 0, 0, math.nan, math.nan,
                                0.0, 0.0, (r_lo, r_hi))
    _, t_b, V_b = _phi_at_rho(sol_beta, rho)
    D1b, D2b = 2 * t_b / bs, 4 * V_b / bs**2
    # no constant term survives differentiation
    gcols, names = _green_columns(rho, delta, n, with_constant=False)
    out = []
    for diff in (D1b - D1s, D2b - D2s):
        g, _ = lstsq(gcols, diff * rho ** (2 * n - 2) / delta)
        smooth = sum(c * col for c, col in zip(g[1:], gcols[1:])) * delta / rho ** (2 * n - 2)
        # exponent from the lower half of the window, where the Green's term dominates
        half = rho <= np.sqrt(rho[0] * rho[-1])
        out.append((float(g[0]), _loglog_slope(rho[half], (diff - smooth)[half])))
    (g1, e1), (g2, e2) = out
    fit = fit_expansion(sol_beta, sol_star, N, r_lo, r_hi, points)
    dev = np.maximum(np.abs(t_b / t_s - 1), np.abs(V_b / V_s - 1))
    r_raw = r / rho_scale(sol_beta)
    bound = delta / r_raw ** (2 * n) + r_raw ** (2 * metric_order - 2)
    return DerivativeReport(list(p1), list(p2), g1, g2, int(np.sign(g1)), int(np.sign(g2)),
                            e1, e2, float(np.max(dev / bound)), fit.fitted_a_L, (r_lo, r_hi))


@dataclass(frozen=True)
class NearDFit:
    c1: float
    c2: float
    beta_fit: float
    c1_gauge: float
    c1_closed_form: float
    u_infinity: float
    rms: float

    def to_json(self) -> dict:
        return dict(self.__dict__)


def near_D_expansion(sol: ProfileSolution, d_lo: float = 1e-10, d_hi: float = 1e-5) -> NearDFit:
    """Fit ``phi' + alpha ~ c1 e^(beta u)`` and ``phi'' ~ c2 e^(beta u)`` near the divisor.

    ``c1`` depends on the additive gauge of ``u``.  It is compared with
    ``exp(log K - mu u_inf) / (beta alpha^(n-1))``, where ``u_inf`` is the limit
    of ``phi + alpha u``; with the gauge fixed so that ``exp(log K - mu u_inf)``
    equals ``beta^2 / mu`` this is ``beta / (mu alpha^(n-1))`` (``c1_closed_form``).
    """
    if regime(sol.consts) is Regime.SUBCRITICAL:
        raise RegimeError("near-D fit is set up for beta >= beta_*")
    fc = sol.consts.floats()
    side = sol.sides[0]
    m = (side.d >= d_lo) & (side.d <= d_hi)
    if m.sum() < 8:
        raise FitError("too few samples near the divisor")
    d, u, phi = side.d[m], side.u[m], side.phi[m]
    V = side.S_of(d) / side.t(d) ** (fc.n - 1)
    A = [np.ones_like(u), u, d]
    c_t, res_t = lstsq(A, np.log(d))
    c_v, res_v = lstsq(A, np.log(V))
    c_p, _ = lstsq([np.ones_like(u), d], phi + fc.alpha * u)
    rms = float(max(np.sqrt(np.mean(res_t**2)), np.sqrt(np.mean(res_v**2))))
    if rms > 1e-3:
        raise FitError(f"exponent fit residual {rms:.2e} exceeds 1e-3")
    u_inf = float(c_p[0])
    c1_gauge = math.exp(math.log(sol.ma_constant) - fc.mu * u_inf) / (fc.beta * fc.alpha ** (fc.n - 1))
    return NearDFit(math.exp(c_t[0]), math.exp(c_v[0]), float(c_t[1]), c1_gauge,
                    fc.beta / (fc.mu * fc.alpha ** (fc.n - 1)), u_inf, rms)


def structure_derivative_at_alpha(consts: DerivedConstants):
    """``F'(alpha) = -beta alpha^(n-1)``, exact for rational input."""
    n = consts.n
    return consts.mu * consts.alpha ** (n - 1) * (consts.lam - consts.alpha)


__all__ = [
    "ApexSeries", "ExpansionReport", "DerivativeReport", "NearDFit", "series_G",
    "formula_coefficients", "fit_expansion", "fit_derivative_expansions",
    "near_D_expansion", "apex_window", "expansion_csv", "structure_derivative_at_alpha",
    "a1_shift",
]
