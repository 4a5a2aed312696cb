"""``conic-calabi`` command line front end.

Every subcommand reads an optional JSON config, lets flags override it and
writes deterministic CSV/JSON files into the output directory (``--out``,
else the config's ``output``, else ``$CALABI_OUT``, else ``calabi_out``).

Exit codes: 0 ok, 1 verification failure, 2 input error, 3 numerical failure.
"""

from __future__ import annotations

import csv
import io
import json
import math
import os
import sys
from dataclasses import dataclass, field, replace
from fractions import Fraction
from pathlib import Path
from typing import Optional

import click
import numpy as np

from . import __version__
from .asymptotics import expansion_csv, fit_expansion, formula_coefficients, near_D_expansion
from .errors import CalabiError, DomainError, WindowError
from .gluing import (DEFAULT_MARGIN, classify, epsilon_beta, law_string, make_plan, nu0_float,
                     rho_mismatch, samples_csv)
from .metric import (BarrierSpec, cone_angle_at_D, cone_comparison, futaki_rigidity_check,
                     linearization_check, metric_profile, small_beta_collapse)
from .obstruction import ModelInputs, ObstructionModel, eta_trace_csv, find_sign_change, \
    model_obstruction
from .params import (INFINITY, DerivedConstants, GeometryParams, Regime, derive, parse_j0,
                     parse_rational, parse_real, rational_json, regime)
from .profile import (Normalization, critical_family_fit, dump_json, eigen_identity_residual,
                      extinction_time, first_integral_residual, fmt, monge_ampere_residual,
                      sample_at_u, solve_profile, a1_closed_form, branch_oracle_deviation)

DEFAULT_BETA = "star+1/100000000"
DEFAULT_THETA = 0.6
FORMATS = ("csv", "json", "both")

DEFAULT_TOLERANCES = {
    "closed_family": 1e-8,
    "a1_closed_form": 1e-8,
    "monge_ampere": 1e-8,
    "first_integral": 1e-9,
    "eigen_identity": 1e-7,
    "branch_oracle": 1e-8,
    "cone_angle_D": 1e-6,
    "near_D_exponent": 1e-3,
    "green_coefficient": 0.02,
    "linearization": 1e-4,
}

# quadric and large degree hypersurface families of projective space
DEFAULT_ROWS = [(n, Fraction(n + 1, 2), 1) for n in (2, 3, 4, 5, 6)] \
    + [(n, Fraction(n + 1, n), 1) for n in (3, 4, 5)] \
    + [(n, Fraction(n + 1, n - 1), 1) for n in (4, 5)]


def parse_beta(value, geom: GeometryParams):
    """Rational, float, or ``star`` / ``star+<offset>`` relative to ``beta_*``."""
    if isinstance(value, str) and value.strip().lower().startswith("star"):
        rest = value.strip()[4:].strip()
        if not rest:
            return geom.beta_star
        if rest[0] not in "+-":
            raise DomainError(f"malformed beta {value!r}")
        off = parse_rational(rest[1:])
        return geom.beta_star + (off if rest[0] == "+" else -off)
    return parse_real(value)


@dataclass
class RunConfig:
    geometry: GeometryParams = GeometryParams(2, Fraction(3, 2), 1)
    beta: object = DEFAULT_BETA
    betas: list = field(default_factory=list)
    theta: float = DEFAULT_THETA
    eta: float = 0.0
    etas: list = field(default_factory=list)
    margin: float = DEFAULT_MARGIN
    tolerances: dict = field(default_factory=lambda: dict(DEFAULT_TOLERANCES))
    output: Optional[str] = None
    format: str = "both"
    normalization: str = "raw"
    rows: list = field(default_factory=lambda: list(DEFAULT_ROWS))

    def __post_init__(self):
        self.beta = parse_beta(self.beta, self.geometry)
        self.betas = [parse_beta(b, self.geometry) for b in self.betas]
        if self.format not in FORMATS:
            raise DomainError(f"format must be one of {FORMATS}, got {self.format!r}")
        try:
            Normalization(self._norm_value())
        except ValueError as exc:
            raise DomainError(f"unknown normalization {self.normalization!r}") from exc
        unknown = set(self.tolerances) - set(DEFAULT_TOLERANCES)
        if unknown:
            raise DomainError(f"unknown tolerance keys: {sorted(unknown)}")
        self.tolerances = {**DEFAULT_TOLERANCES, **self.tolerances}
        self.theta, self.eta, self.margin = float(self.theta), float(self.eta), float(self.margin)
        self.etas = [float(e) for e in self.etas]
        self.rows = [(int(n), parse_rational(a), parse_j0(j)) for n, a, j in self.rows]
        for beta in [self.beta, *self.betas]:
            derive(self.geometry, beta)

    def _norm_value(self) -> str:
        return {"raw": "Raw", "a1": "A1Normalized"}.get(self.normalization.lower(),
                                                        self.normalization)

    @property
    def norm(self) -> Normalization:
        return Normalization(self._norm_value())

    @property
    def consts(self) -> DerivedConstants:
        return derive(self.geometry, self.beta)

    def out_dir(self) -> Path:
        path = Path(self.output or os.environ.get("CALABI_OUT") or "calabi_out")
        path.mkdir(parents=True, exist_ok=True)
        return path

    @classmethod
    def from_json(cls, data: dict) -> "RunConfig":
        data = dict(data)
        geo = data.pop("geometry", {"n": 2, "alpha": "3/2", "j0": 1})
        try:
            geometry = GeometryParams(int(geo["n"]), parse_rational(geo["alpha"]), geo.get("j0", 1))
        except CalabiError:
            raise
        except (KeyError, TypeError, ValueError) as exc:
            raise DomainError(f"malformed geometry block: {geo!r}") from exc
        known = {f for f in cls.__dataclass_fields__} - {"geometry"}
        extra = set(data) - known
        if extra:
            raise DomainError(f"unknown config keys: {sorted(extra)}")
        return cls(geometry=geometry, **data)

    def to_json(self) -> dict:
        return {
            "geometry": self.geometry.to_json(),
            "beta": rational_json(self.beta),
            "betas": [rational_json(b) for b in self.betas],
            "theta": self.theta, "eta": self.eta, "etas": self.etas, "margin": self.margin,
            "tolerances": self.tolerances, "format": self.format,
            "normalization": self.norm.value,
        }


def load_config(path: Optional[str], **overrides) -> RunConfig:
    data = {}
    if path is not None:
        try:
            data = json.loads(Path(path).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise DomainError(f"cannot read config {path}: {exc}") from exc
        if not isinstance(data, dict):
            raise DomainError("config must be a JSON object")
    geo = dict(data.get("geometry", {"n": 2, "alpha": "3/2", "j0": 1}))
    for key in ("n", "alpha", "j0"):
        if overrides.get(key) is not None:
            geo[key] = overrides.pop(key)
        overrides.pop(key, None)
    data["geometry"] = geo
    for key, value in overrides.items():
        if value is not None and value != ():
            data[key] = list(value) if isinstance(value, tuple) else value
    return RunConfig.from_json(data)


# ---------------------------------------------------------------------------
# output helpers


def write_text(path: Path, text: str) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)


def emit(cfg: RunConfig, stem: str, csv_text: Optional[str], payload: Optional[dict]) -> list:
    out = cfg.out_dir()
    written = []
    if csv_text is not None and cfg.format in ("csv", "both"):
        write_text(out / f"{stem}.csv", csv_text)
        written.append(out / f"{stem}.csv")
    if payload is not None and cfg.format in ("json", "both"):
        write_text(out / f"{stem}.json", dump_json(_clean(payload)))
        written.append(out / f"{stem}.json")
    for path in written:
        click.echo(f"wrote {path}")
    return written


def _clean(x):
    """JSON-safe copy: numpy scalars and arrays to Python, non-finite floats to strings."""
    if isinstance(x, dict):
        return {str(k): _clean(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_clean(v) for v in x]
    if isinstance(x, np.ndarray):
        return [_clean(v) for v in x.tolist()]
    if isinstance(x, (np.floating, float)):
        x = float(x)
        if math.isnan(x):
            return "nan"
        if math.isinf(x):
            return INFINITY if x > 0 else "-" + INFINITY
        return x
    if isinstance(x, np.integer):
        return int(x)
    return x


def csv_rows(header, rows) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([v if isinstance(v, str) else fmt(v) for v in row])
    return buf.getvalue()


def _beta_str(beta) -> str:
    return str(beta) if isinstance(beta, Fraction) else fmt(beta)


# ---------------------------------------------------------------------------
# commands


def cmd_solve(cfg: RunConfig) -> int:
    sol = solve_profile(cfg.consts, normalization=cfg.norm)
    click.echo(f"regime {sol.regime.value}  samples {sol.t.size}  u0 {fmt(sol.u0)}")
    emit(cfg, "profile", sol.to_csv(), {"config": cfg.to_json(), **sol.metadata()})
    return 0


def cmd_expand(cfg: RunConfig) -> int:
    consts = cfg.consts
    if regime(consts) is not Regime.SUPERCRITICAL:
        rep = formula_coefficients(consts, normalization=Normalization.A1)
        click.echo(f"a_L (formula) {fmt(rep.a_L)}")
        emit(cfg, "expansion", None, {"config": cfg.to_json(), **rep.to_json()})
        return 0
    star = derive(cfg.geometry, cfg.geometry.beta_star)
    sol_b = solve_profile(consts, normalization=Normalization.A1)
    sol_s = solve_profile(star, normalization=Normalization.A1)
    rep = fit_expansion(sol_b, sol_s)
    samples = rep.extras.pop("samples", None)
    csv_text = expansion_csv(replace(rep, extras={"samples": samples}))
    click.echo(f"a_L formula {fmt(rep.a_L)}  fitted {fmt(rep.fitted_a_L)}")
    emit(cfg, "expansion", csv_text, {"config": cfg.to_json(), **rep.to_json()})
    return 0


def cmd_metric(cfg: RunConfig) -> int:
    consts = cfg.consts
    star = derive(cfg.geometry, cfg.geometry.beta_star)
    mp = metric_profile(consts, beta_star_consts=star)
    payload = {"config": cfg.to_json(), **mp.to_json()}
    if regime(consts) is not Regime.SUBCRITICAL:
        payload["cone_comparison"] = cone_comparison(consts).to_json()
    elif consts.beta <= 0.05:
        payload["collapse"] = small_beta_collapse(consts).to_json()
    s = np.linspace(0.05, 0.95, 7) * float(consts.alpha)
    fd, an = linearization_check(star, s)
    payload["linearization"] = {"s": s, "finite_difference": fd, "analytic": an}
    payload["rigidity"] = futaki_rigidity_check(BarrierSpec()).to_json()
    click.echo(f"cone angle at D {fmt(mp.cone_angle_D)}")
    emit(cfg, "metric", mp.to_csv(), payload)
    return 0


def cmd_glue(cfg: RunConfig) -> int:
    plan = make_plan(cfg.geometry, cfg.beta, cfg.theta, cfg.eta, margin=cfg.margin)
    sol = solve_profile(cfg.consts, normalization=Normalization.A1)
    bs = float(cfg.geometry.beta_star)
    uL = np.linspace(max(sol.u[0], plan.u_eps - 40), min(sol.u[-1], plan.u_eps + 20), 121)
    u = uL + math.log(plan.epsilon) / bs
    payload = {"config": cfg.to_json(), **plan.to_json(), "rho_mismatch": rho_mismatch(plan, sol)}
    click.echo(f"regime {plan.regime.value}  epsilon {fmt(plan.epsilon)}  r_eps {fmt(plan.r_eps)}")
    emit(cfg, "glue", samples_csv(plan, sol, u), payload)
    return 0


def cmd_obstruct(cfg: RunConfig, inputs: ModelInputs, find_root: bool) -> int:
    model = ObstructionModel(cfg.geometry, cfg.beta, inputs)
    rep = model_obstruction(cfg.geometry, cfg.beta, cfg.theta, cfg.eta, inputs, model=model)
    payload = {"config": cfg.to_json(), "inputs": inputs.to_json(), "report": rep.to_json()}
    if find_root:
        root = find_sign_change(cfg.geometry, cfg.beta, cfg.theta, inputs, model=model)
        payload["root"] = root.to_json()
        click.echo(f"eta_root {fmt(root.eta_root)}  A {fmt(root.A_total)}")
    etas = cfg.etas or list(np.linspace(-1, 1, 9) * min(10 * rep.F, 0.49))
    click.echo(f"A {fmt(rep.A_total)}  kappa {fmt(rep.kappa_normal_form)}")
    emit(cfg, "obstruct", eta_trace_csv(model, cfg.theta, etas), payload)
    return 0


def cmd_sweep(cfg: RunConfig) -> int:
    betas = cfg.betas or [cfg.beta]
    n = cfg.geometry.n
    rows = []
    for beta in betas:
        consts = derive(cfg.geometry, beta)
        reg = regime(consts)
        u_ext = law_gap = eps = math.nan
        if reg is Regime.SUPERCRITICAL:
            u_ext = extinction_time(consts)
            C = float(consts.C_beta)
            law_gap = (u_ext + math.log(C) / (n * float(consts.beta_star))) / C ** (1 / n)
            try:
                eps = epsilon_beta(cfg.geometry, beta)
            except CalabiError:
                eps = math.nan
        rows.append([_beta_str(beta), reg.value, float(consts.delta), float(consts.C_beta),
                     u_ext, law_gap, eps])
    header = ["beta", "regime", "delta", "C_beta", "u_extinct", "extinction_K", "epsilon_beta"]
    emit(cfg, "sweep", csv_rows(header, rows),
         {"config": cfg.to_json(), "rows": [dict(zip(header, r)) for r in rows]})
    return 0


def cmd_regimes(cfg: RunConfig) -> int:
    rows = []
    for n, alpha, j0 in cfg.rows:
        geom = GeometryParams(n, alpha, j0)
        nu0 = nu0_float(geom)
        rows.append([str(n), str(alpha), str(j0), str(geom.nu0) if math.isfinite(nu0) else INFINITY,
                     classify(geom).value, law_string(geom)])
    header = ["n", "alpha", "j0", "nu0", "regime", "law"]
    width = [max(len(header[i]), *(len(r[i]) for r in rows)) for i in range(len(header))]
    for r in [header, *rows]:
        click.echo("  ".join(v.ljust(w) for v, w in zip(r, width)).rstrip())
    emit(cfg, "regimes", csv_rows(header, rows), None)
    return 0


# ---------------------------------------------------------------------------
# verification suite


@dataclass
class Check:
    name: str
    status: str
    measured: Optional[float] = None
    tol: Optional[float] = None
    note: str = ""

    def line(self) -> str:
        parts = [f"{self.status:<7} {self.name}"]
        if self.measured is not None:
            parts.append(f"measured={fmt(self.measured)}")
        if self.tol is not None:
            parts.append(f"tol={fmt(self.tol)}")
        if self.note:
            parts.append(self.note)
        return "  ".join(parts)


def _bound(name, value, tol) -> Check:
    return Check(name, "PASS" if value < tol else "FAIL", float(value), tol)


def run_checks(cfg: RunConfig, a_L_factor: float = 1.0) -> list:
    tol = cfg.tolerances
    geom = cfg.geometry
    consts = cfg.consts
    star = derive(geom, geom.beta_star)
    sol = solve_profile(consts)
    sol_star = solve_profile(star)
    sol_star_a1 = solve_profile(star, normalization=Normalization.A1)
    checks = []

    fit = critical_family_fit(sol_star)
    checks.append(_bound("closed_family", fit.sup_residual, tol["closed_family"]))
    bs = float(geom.beta_star)
    u = np.linspace(0.0, 80.0, 161)
    u = u[(u > sol_star_a1.u[0]) & (u < sol_star_a1.u[-1])]
    _, phi, _, _ = sample_at_u(sol_star_a1, u)
    rho = np.exp(-bs * u / 2)
    keep = rho <= 1
    err = np.max(np.abs(phi - a1_closed_form(star, rho))[keep])
    checks.append(_bound("a1_closed_form", err, tol["a1_closed_form"]))

    inner = slice(1, -1)
    checks.append(_bound("monge_ampere", np.max(monge_ampere_residual(sol)[inner]),
                         tol["monge_ampere"]))
    checks.append(_bound("first_integral", np.max(first_integral_residual(sol)[inner]),
                         tol["first_integral"]))
    checks.append(_bound("eigen_identity", np.max(eigen_identity_residual(sol)[inner]),
                         tol["eigen_identity"]))
    checks.append(_bound("branch_oracle", branch_oracle_deviation(sol), tol["branch_oracle"]))

    ang = cone_angle_at_D(consts)
    target = 2 * math.pi * float(consts.beta)
    checks.append(_bound("cone_angle_D", abs(ang - target) / target, tol["cone_angle_D"]))

    if regime(consts) is Regime.SUBCRITICAL:
        checks.append(Check("near_D_exponent", "SKIPPED", note="subcritical profile"))
    else:
        nd = near_D_expansion(sol)
        checks.append(_bound("near_D_exponent", abs(nd.beta_fit - float(consts.beta)),
                             tol["near_D_exponent"]))

    if regime(consts) is not Regime.SUPERCRITICAL:
        checks.append(Check("green_coefficient", "SKIPPED", note="needs beta > beta_*"))
    else:
        sol_a1 = solve_profile(consts, normalization=Normalization.A1)
        try:
            rep = fit_expansion(sol_a1, sol_star_a1)
        except WindowError as exc:
            checks.append(Check("green_coefficient", "SKIPPED", note=f"window: {exc}"))
        else:
            formula = rep.a_L * a_L_factor
            checks.append(_bound("green_coefficient", abs(rep.fitted_a_L / formula - 1),
                                 tol["green_coefficient"]))

    s = np.linspace(0.05, 0.95, 19) * float(consts.alpha)
    fd, an = linearization_check(star, s)
    checks.append(_bound("linearization", np.max(np.abs(fd / an - 1)), tol["linearization"]))

    rig = futaki_rigidity_check(BarrierSpec())
    checks.append(Check("rigidity_gap", "PASS" if rig.strict and rig.gap > 0 else "FAIL",
                        rig.gap, None, "strict" if rig.strict else "equality"))
    return checks


def cmd_verify(cfg: RunConfig, a_L_factor: float = 1.0) -> int:
    checks = run_checks(cfg, a_L_factor)
    for c in checks:
        click.echo(c.line())
    failed = [c for c in checks if c.status == "FAIL"]
    click.echo(f"{len(checks) - len(failed)}/{len(checks)} checks without failure")
    emit(cfg, "verify", None, {"config": cfg.to_json(), "checks": [c.__dict__ for c in checks]})
    return 1 if failed else 0


# ---------------------------------------------------------------------------
# click wiring


def _common(f):
    opts = [
        click.option("--config", "config", type=click.Path(dir_okay=False), default=None,
                     help="JSON run configuration."),
        click.option("--n", "n", type=int, default=None, help="Dimension n >= 2."),
        click.option("--alpha", "alpha", type=str, default=None, help="Rational alpha, e.g. 3/2."),
        click.option("--j0", "j0", type=str, default=None, help="Integer j0 or 'infinity'."),
        click.option("--beta", "beta", type=str, default=None,
                     help="Angle beta: rational, float, or star[+offset]."),
        click.option("--out", "output", type=click.Path(file_okay=False), default=None,
                     help="Output directory (default $CALABI_OUT)."),
        click.option("--format", "fmt_", type=click.Choice(FORMATS), default=None),
    ]
    for opt in reversed(opts):
        f = opt(f)
    return f


def _build(config, n, alpha, j0, beta, output, fmt_, **extra) -> RunConfig:
    return load_config(config, n=n, alpha=alpha, j0=j0, beta=beta, output=output,
                       format=fmt_, **extra)


def _run(fn, *args) -> None:
    try:
        code = fn(*args)
    except CalabiError as exc:
        click.echo(f"error: {type(exc).__name__}: {exc}", err=True)
        sys.exit(exc.exit_code)
    sys.exit(code)


def _configured(build):
    try:
        return build()
    except CalabiError as exc:
        click.echo(f"error: {type(exc).__name__}: {exc}", err=True)
        sys.exit(exc.exit_code)


@click.group()
@click.version_option(__version__)
def cli():
    """Radial conic Kähler-Einstein profiles, expansions, gluing scales and obstruction model."""


@cli.command()
@_common
@click.option("--normalization", type=click.Choice(["raw", "a1"]), default=None)
def solve(normalization, **kw):
    """Solve the profile and write t,u,phi,psi,V samples."""
    cfg = _configured(lambda: _build(**kw, normalization=normalization))
    _run(cmd_solve, cfg)


@cli.command()
@_common
def expand(**kw):
    """Formula and fitted expansion coefficients near the apex."""
    cfg = _configured(lambda: _build(**kw))
    _run(cmd_expand, cfg)


@cli.command()
@_common
def metric(**kw):
    """Metric coefficients, cone angles, linearization and rigidity check."""
    cfg = _configured(lambda: _build(**kw))
    _run(cmd_metric, cfg)


@cli.command()
@_common
@click.option("--theta", type=float, default=None)
@click.option("--eta", type=float, default=None)
@click.option("--margin", type=float, default=None)
def glue(theta, eta, margin, **kw):
    """Gluing plan and rho/chi samples."""
    cfg = _configured(lambda: _build(**kw, theta=theta, eta=eta, margin=margin))
    _run(cmd_glue, cfg)


@cli.command()
@_common
@click.option("--theta", type=float, default=None)
@click.option("--eta", type=float, default=None)
@click.option("--margin", type=float, default=None)
@click.option("--c-phi", type=float, default=1.0, show_default=True)
@click.option("--a-ty", type=float, default=1.0, show_default=True)
@click.option("--find-root", is_flag=True, help="Bisect A(eta) for its sign change.")
def obstruct(theta, eta, margin, c_phi, a_ty, find_root, **kw):
    """Model obstruction A(eta) and its sign change."""
    cfg = _configured(lambda: _build(**kw, theta=theta, eta=eta, margin=margin))
    inputs = _configured(lambda: ModelInputs(c_phi, a_ty, faithful=a_ty > 0))
    _run(cmd_obstruct, cfg, inputs, find_root)


@cli.command()
@_common
@click.option("--betas", multiple=True, help="Repeatable beta values.")
def sweep(betas, **kw):
    """Extinction times and gluing scales over a list of beta values."""
    cfg = _configured(lambda: _build(**kw, betas=betas))
    _run(cmd_sweep, cfg)


@cli.command()
@_common
@click.option("--debug-scale-aL", "a_L_factor", type=float, default=1.0, hidden=True,
              help="Multiply the formula a_L before comparison (mutation check).")
def verify(a_L_factor, **kw):
    """Run the invariant checks and print PASS/FAIL/SKIPPED per check."""
    cfg = _configured(lambda: _build(**kw))
    _run(cmd_verify, cfg, a_L_factor)


@cli.command()
@_common
@click.option("--row", "rows", multiple=True, help="Row 'n,alpha,j0'; repeatable.")
def regimes(rows, **kw):
    """Print the regime and scale law for each (n, alpha, j0) row."""
    def build():
        parsed = None
        if rows:
            parsed = []
            for r in rows:
                parts = [p.strip() for p in r.split(",")]
                if len(parts) != 3:
                    raise DomainError(f"row must be 'n,alpha,j0', got {r!r}")
                try:
                    parsed.append((int(parts[0]), parts[1], parts[2]))
                except ValueError as exc:
                    raise DomainError(f"bad n in row {r!r}") from exc
        return _build(**kw, rows=parsed)
    cfg = _configured(build)
    _run(cmd_regimes, cfg)


def main(argv=None):
    if hasattr(sys.stdout, "reconfigure"):
        sys.stdout.reconfigure(encoding="utf-8")
    cli.main(args=argv, prog_name="conic-calabi")


if __name__ == "__main__":
    main()
