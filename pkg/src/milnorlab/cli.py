"""Command line front end.

Exit codes: 0 pass, 1 fail, 2 parse/usage error, 3 sampling failure,
4 inconclusive, 5 integration abort.
"""

from __future__ import annotations

import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import click
import numpy as np

from . import report
from .conic_modification import catalog_homeo, d_h_regular, homeo_from_source, is_linearization, parity_homeo_for
from .critical_locus import BallConfig, Branch, Sampler, compare_to_oracle, discriminant_sample, oracle_discriminant
from .errors import (
    ArityError,
    DegenerateProjection,
    DomainError,
    EmptyCloud,
    GermSyntaxError,
    HyperbolicityViolation,
    NoDiscriminant,
    NoOracle,
    NotSubmersion,
    StepFailure,
    UnknownName,
)
from .expr_parser import parse, parse_germ_uri, pretty
from .fiber_probe import sample_fiber
from .fibration_flow import ConnectionSpec, flow_to_sphere, horizontal_lift, tau_equivalence_probe, tube_points
from .regularity_checks import d_regular, exclusions_from_model, transversality_property

EXIT_PASS, EXIT_FAIL, EXIT_PARSE, EXIT_SAMPLING, EXIT_INCONCLUSIVE, EXIT_ABORT = range(6)
VERDICT_EXIT = {"pass": EXIT_PASS, "fail": EXIT_FAIL, "inconclusive": EXIT_INCONCLUSIVE}
FORMATS = ("csv", "json", "svg")


class CliExit(Exception):
    def __init__(self, code, message):
        super().__init__(message)
        self.code = code


@dataclass
class RunConfig:
    germ_source: str
    germ: object
    ball: BallConfig
    homeo_source: str | None = None
    budget: int = 1000
    seed: int = 0
    jobs: int = 1
    out: Path | None = None
    formats: tuple = FORMATS
    extra: dict = field(default_factory=dict)

    def wants(self, fmt):
        return self.out is not None and fmt in self.formats

    def describe(self):
        return {
            "germ": self.germ_source,
            "homeo": self.homeo_source,
            "cfg": self.ball.as_dict(),
            "budget": self.budget,
            "seed": self.seed,
        }


# ---------------------------------------------------------------------------
# loading
# ---------------------------------------------------------------------------


def load_germ(source: str):
    path = Path(source)
    try:
        if path.is_file():
            return parse(path.read_text(encoding="utf-8"))
        if source.split(":", 1)[0] in ("psi", "ldm", "catalog"):
            return parse_germ_uri(source)
        return parse(source)
    except (GermSyntaxError, ArityError, UnknownName, HyperbolicityViolation, ValueError) as exc:
        raise CliExit(EXIT_PARSE, f"cannot read germ {source!r}: {exc}") from exc


def load_homeo(source: str, germ, eta):
    path = Path(source)
    try:
        if path.is_file():
            return homeo_from_source(path.read_text(encoding="utf-8"))
        if source == "parity":
            return parity_homeo_for(germ, 1.0 if eta is None else eta)
        return catalog_homeo(source) if eta is None else catalog_homeo(source, eta)
    except (GermSyntaxError, ArityError, UnknownName, ValueError) as exc:
        raise CliExit(EXIT_PARSE, f"cannot read homeo {source!r}: {exc}") from exc


def parse_point(text, dim=None):
    try:
        v = np.array([float(s) for s in text.replace("(", "").replace(")", "").split(",")])
    except ValueError as exc:
        raise CliExit(EXIT_PARSE, f"bad point {text!r}") from exc
    if dim is not None and len(v) != dim:
        raise CliExit(EXIT_PARSE, f"point {text!r} needs {dim} coordinates")
    return v


def parse_curve(text, k):
    """const:y | line:a:b | circle:c:r, all on t in [0, 1]."""
    kind, _, rest = text.partition(":")
    parts = rest.split(":") if rest else []
    if kind == "const" and len(parts) == 1:
        y = parse_point(parts[0], k)
        return (lambda t: y), (lambda t: np.zeros(k))
    if kind == "line" and len(parts) == 2:
        a, b = parse_point(parts[0], k), parse_point(parts[1], k)
        return (lambda t: a + t * (b - a)), (lambda t: b - a)
    if kind == "circle" and len(parts) == 2 and k == 2:
        c = parse_point(parts[0], 2)
        r = float(parts[1])
        w = 2 * np.pi

        def alpha(t):
            return c + r * np.array([np.cos(w * t), np.sin(w * t)])

        def dalpha(t):
            return r * w * np.array([-np.sin(w * t), np.cos(w * t)])

        return alpha, dalpha
    raise CliExit(EXIT_PARSE, f"bad curve spec {text!r}; use const:y, line:a:b or circle:c:r")


# ---------------------------------------------------------------------------
# output
# ---------------------------------------------------------------------------


def _emit_json(rc: RunConfig, name, payload):
    doc = report.envelope(name, {"run": rc.describe(), **payload})
    if rc.wants("json"):
        report.write_json(rc.out / f"{name}.json", doc)
    return doc


def _echo_summary(lines):
    for line in lines:
        click.echo(line)


def _exit(code):
    sys.exit(code)


def common_options(fn):
    opts = [
        click.option("--germ", "germ_source", required=True, help="Germ file, DSL text or builtin URI (psi:3, ldm:2,2:(2,1),(-1,1),(0,-1), catalog:ex6)."),
        click.option("--homeo", "homeo_source", default=None, help="Catalog homeo name, 'parity', or a homeo file."),
        click.option("--eps", type=float, default=0.5, show_default=True),
        click.option("--delta", type=float, default=None, help="Default eps^2/10 (Psi: its own tube radius)."),
        click.option("--eta", type=float, default=None),
        click.option("--seed", type=int, default=0, show_default=True),
        click.option("--jobs", type=click.IntRange(min=1), default=1, show_default=True),
        click.option("--budget", type=click.IntRange(min=1), default=1000, show_default=True, help="Sampling seeds."),
        click.option("--out", type=click.Path(file_okay=False, path_type=Path), default=None, help="Output directory."),
        click.option("--format", "formats", default="csv,json,svg", show_default=True),
    ]
    for opt in reversed(opts):
        fn = opt(fn)
    return fn


def _run_config(germ_source, homeo_source, eps, delta, eta, seed, jobs, budget, out, formats):
    germ = load_germ(germ_source)
    fmts = tuple(f.strip() for f in formats.split(",") if f.strip())
    bad = [f for f in fmts if f not in FORMATS]
    if bad:
        raise CliExit(EXIT_PARSE, f"unknown format(s): {', '.join(bad)}")
    try:
        ball = BallConfig.for_germ(germ, eps, delta, eta)
    except ValueError as exc:
        raise CliExit(EXIT_PARSE, str(exc)) from exc
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    return RunConfig(germ_source, germ, ball, homeo_source, budget, seed, jobs, out, fmts)


def guarded(fn):
    """Map library exceptions onto the exit-code contract."""

    def wrapper(*args, **kw):
        try:
            code = fn(*args, **kw)
        except CliExit as exc:
            click.echo(f"error: {exc}", err=True)
            _exit(exc.code)
        except (GermSyntaxError, ArityError, UnknownName, HyperbolicityViolation) as exc:
            click.echo(f"error: {exc}", err=True)
            _exit(EXIT_PARSE)
        except (DomainError, EmptyCloud) as exc:
            click.echo(f"sampling failure: {exc}", err=True)
            _exit(EXIT_SAMPLING)
        except NoDiscriminant as exc:
            click.echo(f"inconclusive: {exc}", err=True)
            _exit(EXIT_INCONCLUSIVE)
        except (StepFailure, DegenerateProjection, NotSubmersion) as exc:
            click.echo(f"integration aborted: {exc}", err=True)
            _exit(EXIT_ABORT)
        _exit(code or 0)

    wrapper.__name__ = fn.__name__
    wrapper.__doc__ = fn.__doc__
    return wrapper


@click.group()
@click.version_option(package_name="artifact")
def cli():
    """Numerical probes for Milnor-type fibrations of real map germs."""


# ---------------------------------------------------------------------------
# describe
# ---------------------------------------------------------------------------


def describe_payload(germ):
    fam = germ.family
    try:
        oracle_discriminant(germ)
        oracle = True
    except NoOracle:
        oracle = False
    out = {
        "pretty": pretty(germ),
        "n": germ.n,
        "k": germ.k,
        "smoothness": germ.smoothness,
        "family": fam.kind if fam else None,
        "oracle": oracle,
    }
    if fam is not None and fam.kind == "ldm":
        p, q, lambdas = fam.params
        out["params"] = {"p": p, "q": q, "lambdas": [[float(a), float(b)] for a, b in lambdas]}
        # construction already rejected dependent pairs
        out["hyperbolicity"] = "ok"
    elif fam is not None:
        out["params"] = list(fam.params)
    return out


@cli.command()
@common_options
@guarded
def describe(**opts):
    """Summarize a germ: dimensions, smoothness, family and oracle availability."""
    rc = _run_config(**opts)
    payload = describe_payload(rc.germ)
    doc = _emit_json(rc, "describe", payload)
    if "json" in rc.formats and rc.out is None:
        click.echo(report.dumps(doc), nl=False)
    else:
        _echo_summary(f"{k}: {v}" for k, v in payload.items())
    return EXIT_PASS


# ---------------------------------------------------------------------------
# discriminant
# ---------------------------------------------------------------------------

PSI_LANDMARKS = (("C(1)", 1.0), ("C(0.05)", 0.05), ("C(2-1e-6)", 2.0 - 1e-6))


def _oracle_rows(branches, count=400, extra_s=()):
    rows = []
    for b in branches:
        s = b.grid(count)
        extra = [v for v in extra_s if b.s0 <= v <= b.s1]
        if extra:
            s = np.unique(np.concatenate([s, extra]))
        for si, p in zip(s, b(s)):
            rows.append([b.name, float(si), *map(float, p)])
    return rows


@cli.command()
@common_options
@guarded
def discriminant(**opts):
    """Sample the discriminant; write CSV, JSON and (k = 2) an SVG plot."""
    rc = _run_config(**opts)
    g = rc.germ
    model = discriminant_sample(g, rc.ball, Sampler(count=rc.budget, seed=rc.seed))
    payload = {"samples": int(len(model.points)), "counts": model.meta.get("counts", {})}
    psi = g.family is not None and g.family.kind == "psi"
    branches = model.branches
    curve_branches = [b for b in branches if b.kind != "point"]
    if branches:
        payload["oracle"] = compare_to_oracle(model, radius=rc.ball.delta)
    if psi:
        # full closed loop for the picture, independent of eps
        branches = oracle_discriminant(g)
        curve = Branch("C", "psi_curve", 0.0, 2.0)
        payload["landmarks"] = {name: [float(v) for v in curve(np.array(s))] for name, s in PSI_LANDMARKS}
        payload["corners"] = {
            "(e^-1, 0)": [float(np.exp(-1.0)), 0.0],
            "(0, e^-1/4)": [0.0, float(np.exp(-0.25))],
            "(e^-1, e^-1/3)": [float(np.exp(-1.0)), float(np.exp(-1.0 / 3.0))],
        }
    if rc.wants("csv"):
        hx = [f"x{i + 1}" for i in range(g.n)]
        hu = [f"u{i + 1}" for i in range(g.k)]
        rows = [[*x, *y, int(d)] for x, y, d in zip(model.preimages, model.points, model.defects)]
        report.write_csv(rc.out / "discriminant.csv", hx + hu + ["defect"], rows)
        if branches:
            extra = [s for _, s in PSI_LANDMARKS] if psi else ()
            report.write_csv(rc.out / "oracle.csv", ["branch", "s"] + hu, _oracle_rows(branches, extra_s=extra))
    if rc.wants("svg") and g.k == 2:
        drawn = [(b.name, b(b.grid(800))) for b in branches]
        markers = [(k, v) for k, v in payload.get("corners", {}).items()]
        title = "discriminant of " + rc.germ_source
        (rc.out / "discriminant.svg").write_text(report.discriminant_svg(drawn, model.points, markers, title), encoding="utf-8")
    failed = bool(curve_branches) and len(model.points) == 0
    payload["verdict"] = "sampling_failure" if failed else "ok"
    _emit_json(rc, "discriminant", payload)
    lines = [f"samples: {payload['samples']}"]
    if "oracle" in payload:
        o = payload["oracle"]
        lines.append(f"oracle max distance: {report.fmt_float(o['max_distance'])}  coverage: {report.fmt_float(o['coverage'])}")
    _echo_summary(lines)
    return EXIT_SAMPLING if failed else EXIT_PASS


# ---------------------------------------------------------------------------
# check
# ---------------------------------------------------------------------------


@cli.command()
@click.argument("which", type=click.Choice(["transversality", "dreg", "dhreg", "linearization"]))
@click.option("--exclude-angle", "exclude_angles", type=float, multiple=True, help="Directions (radians, k = 2) outside the compatibility set.")
@common_options
@guarded
def check(which, exclude_angles, **opts):
    """Run one check and exit 0 pass / 1 fail / 4 inconclusive."""
    rc = _run_config(**opts)
    g, cfg = rc.germ, rc.ball
    sampler = Sampler(count=rc.budget, seed=rc.seed)
    if which in ("dhreg", "linearization") and not rc.homeo_source:
        raise CliExit(EXIT_PARSE, f"check {which} needs --homeo")
    excluded = [(np.cos(a), np.sin(a)) for a in exclude_angles]
    if which == "dreg":
        rep = d_regular(g, cfg, sampler=sampler, seed=rc.seed).to_dict()
    elif which == "transversality":
        rep = transversality_property(g, cfg, seed=rc.seed).to_dict()
    else:
        h = load_homeo(rc.homeo_source, g, cfg.eta)
        model = discriminant_sample(g, cfg, sampler)
        if which == "linearization":
            rep = is_linearization(g, h, cfg, model).to_dict()
        else:
            rep = d_h_regular(g, h, cfg, excluded_directions=excluded, model=model, seed=rc.seed).to_dict()
    _emit_json(rc, f"check_{which}", {"report": rep})
    lines = [f"{which}: {rep['verdict']}"]
    for w in rep.get("witnesses", [])[:3]:
        lines.append("witness x = [" + ", ".join(report.fmt_float(v) for v in w["x"]) + "]  sigma_min = " + report.fmt_float(w["sigma_min"]))
    _echo_summary(lines)
    return VERDICT_EXIT.get(rep["verdict"], EXIT_INCONCLUSIVE)


# ---------------------------------------------------------------------------
# flow / lift
# ---------------------------------------------------------------------------


def _flow_ok(tr):
    return tr.reason == "reached_sphere" and tr.phi_drift <= 1e-6 and tr.radius_increasing


@cli.command()
@click.option("--start", "starts", multiple=True, help="Starting point x1,...,xn (repeatable).")
@click.option("--samples", type=click.IntRange(min=1), default=10, show_default=True, help="Tube points when no --start is given.")
@click.option("--tau", is_flag=True, help="Run the tube-to-sphere probe (requires d-regularity).")
@common_options
@guarded
def flow(starts, samples, tau, **opts):
    """Integrate the Milnor vector field to the sphere; exit 5 on abort."""
    rc = _run_config(**opts)
    g, cfg = rc.germ, rc.ball
    model = discriminant_sample(g, cfg, Sampler(count=rc.budget, seed=rc.seed))
    if tau:
        reg = d_regular(g, cfg, model=model, seed=rc.seed)
        if reg.verdict != "pass":
            _emit_json(rc, "flow", {"tau": {"verdict": "refused", "regularity": reg.to_dict()}})
            click.echo(f"tau probe refused: d-regularity verdict is {reg.verdict}")
            return VERDICT_EXIT[reg.verdict]
        res = tau_equivalence_probe(g, cfg, samples=samples, seed=rc.seed, regularity=reg, model=model)
        traces = res.pop("traces")
        res.pop("starts")
        payload = {"tau": res, "traces": [tr.summary() for tr in traces]}
        _write_traces(rc, traces)
        _emit_json(rc, "flow", payload)
        click.echo(f"tau probe: {res['verdict']}  reached {res['reached']}/{res['samples']}")
        return VERDICT_EXIT[res["verdict"]] if not res["failures"] else EXIT_ABORT
    if starts:
        x0s = [parse_point(s, g.n) for s in starts]
    else:
        x0s = list(tube_points(g, cfg, samples, rc.seed, exclusions_from_model(model, cfg)))
    w_pts = model.preimages if len(model.preimages) else None

    def one(x0):
        try:
            return flow_to_sphere(g, x0, cfg.eps, w_points=w_pts), None
        except (StepFailure, DegenerateProjection) as exc:
            return getattr(exc, "trace", None), exc

    with ThreadPoolExecutor(max_workers=rc.jobs) as pool:
        results = list(pool.map(one, x0s))
    traces = [tr for tr, _ in results if tr is not None]
    _write_traces(rc, traces)
    entries = []
    aborted = False
    for x0, (tr, exc) in zip(x0s, results):
        e = {"start": [float(v) for v in x0]}
        if tr is not None:
            e.update(tr.summary())
        if exc is not None:
            aborted = True
            e["error"] = f"{type(exc).__name__}: {exc}"
        entries.append(e)
    ok = not aborted and all(_flow_ok(tr) for tr, _ in results)
    _emit_json(rc, "flow", {"traces": entries, "verdict": "abort" if aborted else ("pass" if ok else "fail")})
    for e in entries:
        click.echo(e.get("error") or f"reached |x| = {report.fmt_float(e['norm_end'])}  phi drift {report.fmt_float(e['phi_drift'])}")
    if aborted:
        return EXIT_ABORT
    return EXIT_PASS if ok else EXIT_FAIL


def _write_traces(rc, traces):
    if not rc.wants("csv"):
        return
    for i, tr in enumerate(traces):
        header, rows = tr.csv_rows()
        report.write_csv(rc.out / f"flow_{i:03d}.csv", header, rows)


@cli.command()
@click.option("--curve", required=True, help="Base curve on [0,1]: const:y, line:a:b or circle:c:r.")
@click.option("--start", default=None, help="Start x0 on the fiber over the curve's initial point.")
@common_options
@guarded
def lift(curve, start, **opts):
    """Horizontal lift of a base curve; exit 5 on abort."""
    rc = _run_config(**opts)
    g = rc.germ
    alpha, dalpha = parse_curve(curve, g.k)
    if start is not None:
        x0 = parse_point(start, g.n)
    else:
        cloud = sample_fiber(g, alpha(0.0), rc.ball.eps, seeds=rc.budget, seed=rc.seed)
        if cloud.empty:
            raise CliExit(EXIT_SAMPLING, "no point found on the initial fiber")
        x0 = cloud.points[0]
    tr = horizontal_lift(ConnectionSpec(g), alpha, x0, (0.0, 1.0), dalpha)
    payload = {
        "start": [float(v) for v in x0],
        "end": [float(v) for v in tr.end],
        "steps": int(len(tr.t) - 1),
        "sup_error": tr.sup_error,
        "max_vertical": tr.max_vertical,
        "displacement": float(np.linalg.norm(tr.end - x0)),
    }
    ok = tr.sup_error <= 1e-6 and tr.max_vertical <= 1e-6
    payload["verdict"] = "pass" if ok else "fail"
    if rc.wants("csv"):
        header = ["t"] + [f"x{i + 1}" for i in range(g.n)] + ["base_error", "vertical"]
        rows = [[t, *x, e, v] for t, x, e, v in zip(tr.t, tr.x, tr.base_error, tr.vertical)]
        report.write_csv(rc.out / "lift.csv", header, rows)
    _emit_json(rc, "lift", payload)
    click.echo(f"lift: sup |f(x(t)) - alpha(t)| = {report.fmt_float(tr.sup_error)}  end displacement {report.fmt_float(payload['displacement'])}")
    return EXIT_PASS if ok else EXIT_FAIL


def main(argv=None):
    cli.main(args=argv, prog_name="milnorlab")


if __name__ == "__main__":
    main()
