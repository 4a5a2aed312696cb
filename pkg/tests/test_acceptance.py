"""One test per acceptance criterion; each prints a PASS/FAIL line with the measured value."""
import math
import os
import subprocess
import sys
from fractions import Fraction

import numpy as np
import pytest

from conic_calabi.asymptotics import fit_expansion
from conic_calabi.errors import NoSignChangeError
from conic_calabi.gluing import make_plan
from conic_calabi.metric import (cone_angle_at_D, cone_angle_at_infinity, cone_comparison,
                                 far_angle_fit, futaki_rigidity_check, linearization_check,
                                 small_beta_collapse)
from conic_calabi.obstruction import J_integral, find_sign_change, model_obstruction, positive_part
from conic_calabi.params import derive
from conic_calabi.profile import (a1_closed_form, branch_oracle_deviation, critical_family_fit,
                                  eigen_identity_residual, extinction_time,
                                  first_integral_residual, monge_ampere_residual, sample_at_u)

from conftest import GEOMS, OFFSETS, obstruction_model, profile, report

G2 = GEOMS["n2"]
MATRIX = [(key, off) for key in GEOMS for off in OFFSETS]


def _a1_deviation(closed_form):
    sol = profile("n2", Fraction(0), "A1Normalized")
    u = np.linspace(0.0, 80.0, 161)
    u = u[(u > sol.u[0]) & (u < sol.u[-1])]
    _, phi, _, _ = sample_at_u(sol, u)
    rho = np.exp(-0.25 * u / 2)
    keep = rho <= 1
    return float(np.max(np.abs(phi - closed_form(rho))[keep]))


def test_01_closed_form_oracle():
    fits = {key: critical_family_fit(profile(key, Fraction(0))).sup_residual for key in GEOMS}
    err = _a1_deviation(lambda rho: a1_closed_form(derive(G2, G2.beta_star), rho))
    ok = max(fits.values()) < 1e-8 and err < 1e-8
    report("criterion 1 closed-form family and A1 profile",
           ok, f"family sup {max(fits.values()):.2e}, A1 sup {err:.2e}")
    assert ok


@pytest.mark.xfail(strict=True, raises=AssertionError, reason="the A1 critical profile is (alpha/beta_*) log(1 + (beta_*/alpha) rho^2)")
def test_01b_literal_log_one_plus_rho_squared():
    err = _a1_deviation(lambda rho: np.log1p(rho**2))
    report("criterion 1 literal log(1+rho^2)", err < 1e-8, f"sup {err:.3f}")
    assert err < 1e-8


def test_02_monge_ampere_and_first_integral():
    worst_ma = worst_fi = 0.0
    for key, off in MATRIX:
        sol = profile(key, off)
        worst_ma = max(worst_ma, float(np.max(monge_ampere_residual(sol)[1:-1])))
        worst_fi = max(worst_fi, float(np.max(first_integral_residual(sol)[1:-1])))
    ok = worst_ma < 1e-8 and worst_fi < 1e-8
    report("criterion 2 Monge-Ampere / first integral", ok, f"{worst_ma:.2e} / {worst_fi:.2e}")
    assert ok


def test_03_eigen_identity():
    worst = max(float(np.max(eigen_identity_residual(profile(key, off))[1:-1])) for key, off in MATRIX)
    report("criterion 3 radial eigen-identity", worst < 1e-7, f"{worst:.2e}")
    assert worst < 1e-7


def test_04_two_branch_oracle():
    worst = max(branch_oracle_deviation(profile(key, off)) for key, off in MATRIX)
    report("criterion 4 two-branch oracle", worst < 1e-8, f"{worst:.2e}")
    assert worst < 1e-8


def test_05_cone_angles():
    d_err = max(abs(cone_angle_at_D(sol.consts) / (2 * math.pi * float(sol.consts.beta)) - 1)
                for sol in (profile(key, off) for key, off in MATRIX))
    far_err = max(abs(far_angle_fit(profile(key, OFFSETS[0])) / cone_angle_at_infinity(profile(key, OFFSETS[0]).consts) - 1)
                  for key in GEOMS)
    gap = small_beta_collapse(derive(G2, Fraction(1, 1000))).gap_ratio
    ok = d_err < 1e-6 and far_err < 1e-4 and abs(gap - 1) < 0.01
    report("criterion 5 cone angles", ok, f"D {d_err:.1e}, far {far_err:.1e}, gap ratio {gap:.6f}")
    assert ok


def test_06_extinction_law():
    Ks = []
    for key, g in GEOMS.items():
        for k in (4, 5, 6, 7, 8, 9, 10):
            c = derive(g, g.beta_star + Fraction(1, 10**k))
            fc = c.floats()
            u = extinction_time(c)
            Ks.append(abs(u + math.log(fc.C) / (fc.n * fc.beta_star)) / fc.C ** (1 / fc.n))
    K = max(Ks)
    report("criterion 6 extinction law", K < 1.0, f"single K = {K:.2e}")
    assert K < 1.0


def _green_fits():
    star = profile("n2", Fraction(0), "A1Normalized")
    return [fit_expansion(profile("n2", Fraction(1, 10**k), "A1Normalized"), star) for k in (6, 8, 10)]


def test_07_green_coefficient():
    reps = _green_fits()
    devs = [abs(r.fitted_a_L / r.a_L - 1) for r in reps]
    ok = max(devs) < 0.02 and all(r.fitted_a_L > 0 for r in reps)
    report("criterion 7 Green's coefficient (alpha^n form)", ok,
           ", ".join(f"{r.fitted_a_L:.4f}" for r in reps) + f" vs {reps[0].a_L:.4f}")
    assert ok


@pytest.mark.xfail(strict=True, raises=AssertionError, reason="the a^n prefactor is (a/alpha)^n = 1/81 of the fitted coefficient")
def test_07b_literal_a_n_prefactor():
    reps = _green_fits()
    printed = reps[0].a_L_a_power
    devs = [abs(r.fitted_a_L / printed - 1) for r in reps]
    report("criterion 7 literal a^n prefactor", max(devs) < 0.02, f"a^n form {printed:.4f}")
    assert max(devs) < 0.02


def test_08_linearization_and_cone():
    worst = 0.0
    for g in GEOMS.values():
        star = derive(g, g.beta_star)
        s = np.linspace(0.05, 0.95, 19) * float(g.alpha)
        fd, an = linearization_check(star, s, h=1e-6)
        worst = max(worst, float(np.max(np.abs(fd / an - 1))))
    kappa = cone_comparison(derive(G2, G2.beta_star + Fraction(1, 10**8))).kappa
    ok = worst < 1e-4 and kappa < 0.02
    report("criterion 8 linearization / cone comparison", ok, f"{worst:.2e} / kappa {kappa:.4f}")
    assert ok


def test_09_rigidity():
    strict = futaki_rigidity_check()
    flat = futaki_rigidity_check(f=lambda u: 1.0)
    ok = strict.strict and strict.gap > 0 and not flat.strict
    report("criterion 9 rigidity", ok, f"gap {strict.gap:.6f}, f=1 gap {flat.gap:.1e}")
    assert ok


def test_10_regime_table(tmp_path):
    env = dict(os.environ, CALABI_OUT=str(tmp_path))
    out = subprocess.run([sys.executable, "-m", "conic_calabi.cli", "regimes"], env=env,
                         capture_output=True, text=True, encoding="utf-8").stdout
    rows = {tuple(line.split()[:3]): line.split()[-1] for line in out.splitlines()[1:] if line[:1].isdigit()}
    expected = {("2", "3/2", "1"): "(β−β_*)^{1/2}",
                ("3", "2", "1"): "((β−β_*)/(−log(β−β_*)))^{1/3}",
                ("4", "5/2", "1"): "(β−β_*)^{3/8}",
                ("5", "3", "1"): "(β−β_*)^{2/5}",
                ("6", "7/2", "1"): "(β−β_*)^{5/12}",
                ("3", "4/3", "1"): "(β−β_*)^{1/3}",
                ("4", "5/4", "1"): "(β−β_*)^{1/4}",
                ("5", "6/5", "1"): "(β−β_*)^{1/5}"}
    wrong = [k for k, law in expected.items() if rows.get(k) != law]
    report("criterion 10 regime table", not wrong, f"{len(expected) - len(wrong)}/{len(expected)} rows")
    assert not wrong


def test_11_obstruction_structure():
    # (a) integration by parts
    m4 = obstruction_model("n4", Fraction(1, 10**16))
    plan = make_plan(GEOMS["n4"], m4.beta, 0.7)
    ibp = abs(J_integral(m4.sol_beta, plan, "ibp") / J_integral(m4.sol_beta, plan) - 1)
    # (b) epsilon exponents at beta_*
    eps = np.geomspace(1e-3, 1e-7, 9)
    slopes = {}
    for key in GEOMS:
        A = np.array([positive_part(obstruction_model(key, Fraction(0)), e, 0.8) for e in eps])
        plain = np.polyfit(np.log(eps), np.log(A), 1)[0]
        logc = np.polyfit(np.log(eps), np.log(A / np.log(1 / eps)), 1)[0]
        slopes[key] = (plain, logc)
    b_ok = (abs(slopes["n2"][0] / 2 - 1) < 0.02 and abs(slopes["n4"][0] / (8 / 3) - 1) < 0.02
            and abs(slopes["n3"][1] / 3 - 1) < 0.02
            and abs(slopes["n3"][1] - 3) < abs(slopes["n3"][0] - 3))
    # (c) negative part against the a_L-proportional law
    c_ratios = []
    for key, theta, k in (("n2", 0.6, 8), ("n2", 0.6, 10), ("n2", 0.6, 12), ("n4", 0.7, 18)):
        m = obstruction_model(key, Fraction(1, 10**k))
        rep = model_obstruction(GEOMS[key], m.beta, theta, model=m)
        c_ratios.append(rep.I2_neg / (-rep.kappa_neg * m.delta))
    c_ok = all(abs(r - 1) < 0.05 for r in c_ratios)
    # (d) sign change and root
    d_ok = True
    for key, theta, k in (("n2", 0.6, 10), ("n3", 0.6, 14), ("n4", 0.7, 16)):
        m = obstruction_model(key, Fraction(1, 10**k))
        rep = find_sign_change(GEOMS[key], m.beta, theta, model=m)
        d_ok &= abs(rep.A_total) < 1e-3 * m.delta and abs(rep.eta_root) <= min(10 * rep.F, 0.49)
    # (e) negative a_TY
    mneg = obstruction_model("n2", Fraction(1, 10**10), a_TY=-1.0)
    try:
        find_sign_change(G2, mneg.beta, 0.6, model=mneg, eta_max=0.49)
        e_ok = False
    except NoSignChangeError:
        e_ok = True
    ok = ibp < 1e-8 and b_ok and c_ok and d_ok and e_ok
    detail = (f"ibp {ibp:.1e}; slopes n2 {slopes['n2'][0]:.4f} n3 {slopes['n3'][1]:.4f} (log) "
              f"n4 {slopes['n4'][0]:.4f}; neg ratios {min(c_ratios):.4f}..{max(c_ratios):.4f}; "
              f"roots {'ok' if d_ok else 'bad'}; a<0 {'raises' if e_ok else 'no error'}")
    report("criterion 11 obstruction structure", ok, detail)
    assert ok


def test_12_determinism(tmp_path):
    cmds = [["regimes"], ["solve", "--beta", "star+1/10000"], ["glue", "--beta", "star+1/1000000000000"],
            ["sweep", "--betas", "star+1/10000", "--betas", "star+1/100000000"], ["expand"]]
    same = True
    for i, cmd in enumerate(cmds):
        outs = []
        for rep in range(2):
            d = tmp_path / f"{i}_{rep}"
            subprocess.run([sys.executable, "-m", "conic_calabi.cli", *cmd, "--out", str(d)],
                           check=True, capture_output=True)
            outs.append({f.name: f.read_bytes() for f in sorted(d.iterdir())})
        same &= outs[0] == outs[1]
    golden = os.path.join(os.path.dirname(__file__), "golden")
    first = tmp_path / "0_0" / "regimes.csv"
    same &= first.read_bytes() == open(os.path.join(golden, "regimes.csv"), "rb").read()
    report("criterion 12 determinism", same, f"{len(cmds)} commands repeated, golden regimes.csv")
    assert same
