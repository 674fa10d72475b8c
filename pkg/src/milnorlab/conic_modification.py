"""Conic homeomorphisms h of (R^k, 0), conic modifications f_h = h^-1 o f,
linearization tests and d_h-regularity.

A homeomorphism is stored as two k -> k expression maps.  Piecewise ones keep
their seams as Guard nodes, so seam points can be evaluated on either side.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .critical_locus import BallConfig, DiscriminantModel, Sampler, discriminant_sample
from .errors import BranchBoundary, DomainError, NoDiscriminant, UnknownName
from .expr_parser import parse_homeo_source
from .germ_model import (
    Add,
    Const,
    Div,
    Guard,
    MapGerm,
    Mul,
    Neg,
    Pow,
    Root,
    Sub,
    Var,
    bump,
    log,
    piecewise,
    sqrt,
    substitute,
    walk,
)
from .regularity_checks import ANGLE_EXCLUSION, RegularityReport, d_regular

SEAM_TOL = 1e-12


@dataclass(frozen=True)
class ConicHomeo:
    k: int
    fwd: MapGerm
    inv: MapGerm
    eta: float = 1.0
    name: str = "custom"
    domain: str = "all"  # "all" or "quadrant" (closed positive orthant)
    notes: tuple = ()
    # |x_i| below this is not round-trip testable for h (bump underflow)
    fwd_floor: float = 0.0

    @classmethod
    def from_exprs(cls, k, fwd, inv, eta=1.0, name="custom", domain="all", notes=(), fwd_floor=0.0):
        return cls(k, MapGerm(k, k, tuple(fwd)), MapGerm(k, k, tuple(inv)), float(eta), name, domain, tuple(notes), float(fwd_floor))

    def h(self, y, side=None):
        return self.fwd.eval(y, side=side, seam_tol=SEAM_TOL if side else 0.0)

    def h_inv(self, y, side=None):
        return self.inv.eval(y, side=side, seam_tol=SEAM_TOL if side else 0.0)

    @property
    def seams(self):
        """Guard conditions of the inverse, the ones relevant for pullbacks."""
        out = []
        for c in self.inv.components:
            for node in walk(c):
                if isinstance(node, Guard) and node.cond not in out:
                    out.append(node.cond)
        return out

    def seam_filter(self, germ: MapGerm, angle=ANGLE_EXCLUSION):
        """Predicate on x: f(x) within ``angle`` (first order, relative to |f(x)|) of a seam of h^-1.

        A signed power has zero derivative on its seam, so f_h = h^-1 o f drops
        rank on these preimages and they are left out of the regularity scans.
        """
        conds = self.seams
        if not conds:
            return None
        seam = MapGerm(self.k, len(conds), tuple(conds), check_origin=False)

        def excluded(x):
            x = np.asarray(x, dtype=float)
            flat = x.reshape(-1, germ.n)
            y = germ.eval_nan(flat)
            c, J = seam.jacobian_nan(y)
            g = np.linalg.norm(J, axis=-1)
            r = np.linalg.norm(y, axis=1, keepdims=True)
            with np.errstate(divide="ignore", invalid="ignore"):
                near = np.abs(c) <= angle * r * g
            return np.any(near, axis=1).reshape(x.shape[:-1])

        return excluded

    def sample_domain(self, rng, count, radius):
        y = rng.uniform(-radius, radius, (count, self.k))
        if self.domain == "quadrant":
            y = np.abs(y)
        return y

    def round_trip_error(self, rng=None, count=500, radius=None):
        """max |h(h^-1(y)) - y| and max |h^-1(h(y)) - y| over random domain points."""
        rng = rng or np.random.default_rng(0)
        radius = self.eta if radius is None else radius
        y = self.sample_domain(rng, count, radius)
        a = np.max(np.abs(self.fwd.eval(self.inv.eval(y)) - y))
        x = self.sample_domain(rng, count, radius)
        if self.fwd_floor > 0:
            x = np.sign(x) * np.maximum(np.abs(x), self.fwd_floor)
        b = np.max(np.abs(self.inv.eval(self.fwd.eval(x)) - x))
        return float(a), float(b)


# ---------------------------------------------------------------------------
# catalog
# ---------------------------------------------------------------------------


def _signed_power(u, m):
    """u^m for odd m, sign(u)|u|^m for even m."""
    if m % 2:
        return Pow(u, m)
    return piecewise(u, Pow(u, m), Neg(Pow(u, m)))


def _signed_root(u, m):
    if m % 2:
        return Root(u, m)
    return piecewise(u, Root(u, m), Neg(Root(Neg(u), m)))


def parity_homeo(p: int, q: int, eta=1.0) -> ConicHomeo:
    """h(u, v) = (u^(1/q), v^(1/p)) with the sign splitting needed for even exponents."""
    if p < 2 or q < 2:
        raise ValueError("parity homeo needs p, q >= 2")
    u, v = Var(0), Var(1)
    fwd = (_signed_root(u, q), _signed_root(v, p))
    inv = (_signed_power(u, q), _signed_power(v, p))
    case = {(1, 1): 1, (0, 1): 2, (1, 0): 3, (0, 0): 4}[(p % 2, q % 2)]
    return ConicHomeo.from_exprs(2, fwd, inv, eta, f"parity({p},{q})", notes=(f"case {case}",))


def _psi_radicand(w, c):
    # c^2 + 1/log(w)
    return Add(Const(c * c), Div(Const(1.0), log(w)))


def psi_exp_homeo(eta=None) -> ConicHomeo:
    u, v = Var(0), Var(1)
    fwd = (bump(Mul(u, Sub(Const(2.0), u))), bump(Mul(v, Sub(Const(4.0), v))))
    inv = (
        piecewise(u, Sub(Const(1.0), sqrt(_psi_radicand(u, 1.0))), Const(0.0), strict=True),
        piecewise(v, Sub(Const(2.0), sqrt(_psi_radicand(v, 2.0))), Const(0.0), strict=True),
    )
    # the inverse is real on [0, e^-1] x [0, e^-1/4]; keep eta inside
    eta = float(np.exp(-1.0)) if eta is None else eta
    # bump(t) is below double resolution for t < 1/745, i.e. coordinates under ~7e-4
    return ConicHomeo.from_exprs(2, fwd, inv, eta, "psi_exp", domain="quadrant", fwd_floor=2e-3)


def catalog_homeo(name: str, eta=1.0) -> ConicHomeo:
    u, v = Var(0), Var(1)
    if name == "identity":
        return ConicHomeo.from_exprs(2, (u, v), (u, v), eta, "identity")
    if name == "cube":
        return ConicHomeo.from_exprs(2, (u, Pow(v, 3)), (u, Root(v, 3)), eta, "cube")
    if name == "cube_inv":
        return ConicHomeo.from_exprs(2, (u, Root(v, 3)), (u, Pow(v, 3)), eta, "cube_inv")
    if name == "sqrt_sign":
        fwd = (_signed_root(u, 2), Mul(Const(0.5), v))
        inv = (_signed_power(u, 2), Mul(Const(2.0), v))
        return ConicHomeo.from_exprs(2, fwd, inv, eta, "sqrt_sign")
    if name == "psi_exp":
        return psi_exp_homeo()
    if name.startswith("parity(") and name.endswith(")"):
        try:
            p, q = (int(t) for t in name[7:-1].split(","))
        except ValueError:
            raise UnknownName(f"bad parity parameters in {name!r}") from None
        return parity_homeo(p, q, eta)
    raise UnknownName(f"unknown homeo {name!r}; known: identity, cube, cube_inv, sqrt_sign, psi_exp, parity(p,q)")


HOMEO_NAMES = ("identity", "cube", "cube_inv", "sqrt_sign", "psi_exp", "parity(p,q)")


def homeo_from_source(text: str) -> ConicHomeo:
    k, fwd, inv, eta = parse_homeo_source(text)
    return ConicHomeo.from_exprs(k, fwd, inv, 1.0 if eta is None else eta, "custom")


def parity_homeo_for(germ: MapGerm, eta=1.0) -> ConicHomeo:
    if germ.family is None or germ.family.kind != "ldm":
        raise UnknownName("parity homeo needs an ldm germ")
    p, q, _ = germ.family.params
    return parity_homeo(p, q, eta)


# ---------------------------------------------------------------------------
# conic modification
# ---------------------------------------------------------------------------


def conic_modify(germ: MapGerm, h: ConicHomeo, eps=None, samples=200, seed=0) -> MapGerm:
    """f_h = h^-1 o f.  With eps the image of B_eps is sample-checked against the domain of h^-1."""
    if h.k != germ.k:
        raise ValueError(f"homeo acts on R^{h.k}, germ maps to R^{germ.k}")
    comps = tuple(substitute(c, germ.components) for c in h.inv.components)
    names = tuple(f"{h.name}^-1({nm})" for nm in germ.names)
    out = MapGerm(germ.n, germ.k, comps, "", None, names, check_origin=False)
    if eps is not None:
        rng = np.random.default_rng(seed)
        x = rng.standard_normal((samples, germ.n))
        x *= (eps * rng.random((samples, 1)) ** (1.0 / germ.n)) / np.linalg.norm(x, axis=1, keepdims=True)
        vals = out.eval_nan(x)
        bad = ~np.all(np.isfinite(vals), axis=1)
        if np.any(bad):
            raise DomainError(f"{int(bad.sum())} of {samples} sampled images leave the domain of h^-1, e.g. x={x[bad][0].tolist()}")
    return out


def xi_h(h: ConicHomeo, y, eta=None):
    """h(eta * h^-1(y) / |h^-1(y)|): the point of h(S_eta) on the path through y."""
    eta = h.eta if eta is None else eta
    w = h.h_inv(np.asarray(y, dtype=float))
    r = np.linalg.norm(w, axis=-1, keepdims=True)
    if np.any(r == 0):
        raise DomainError("xi_h is undefined at y with h^-1(y) = 0")
    return h.h(eta * w / r)


def pullback(h: ConicHomeo, pts):
    """h^-1 of sampled points.  Near a seam both sides are tried and the one
    with smaller round-trip residual is kept."""
    pts = np.atleast_2d(np.asarray(pts, dtype=float))
    out = h.inv.eval_nan(pts)
    seams = h.seams
    if not seams or len(pts) == 0:
        return out
    cond = MapGerm(h.k, len(seams), tuple(seams), check_origin=False).eval_nan(pts)
    near = np.any(np.abs(cond) <= 1e-9 * np.maximum(1.0, np.linalg.norm(pts, axis=1, keepdims=True)), axis=1)
    for i in np.flatnonzero(near):
        best = None
        for side in ("pos", "neg"):
            try:
                w = h.inv.eval(pts[i], side=side, seam_tol=1e-9)
                r = np.linalg.norm(h.fwd.eval(w) - pts[i])
            except (DomainError, BranchBoundary):
                continue
            if best is None or r < best[0]:
                best = (r, w)
        if best is not None:
            out[i] = best[1]
    return out


# ---------------------------------------------------------------------------
# linearization
# ---------------------------------------------------------------------------


@dataclass
class LinearizationReport:
    verdict: str
    rays: list = field(default_factory=list)  # per cluster: direction, residual, count
    pulled: np.ndarray = None
    threshold: float = 0.0
    eta: float = 0.0

    @property
    def passed(self):
        return self.verdict == "pass"

    def to_dict(self):
        return {
            "method": "linearization",
            "verdict": self.verdict,
            "threshold": self.threshold,
            "eta": self.eta,
            "rays": [
                {"direction": [float(v) for v in r["direction"]], "residual": float(r["residual"]), "count": int(r["count"])}
                for r in self.rays
            ],
        }


def _direction_clusters(dirs, link=0.05):
    """Single-linkage clusters of unit vectors (chord distance below link)."""
    m = len(dirs)
    parent = np.arange(m)

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    for i, j in cKDTree(dirs).query_pairs(link):
        ri, rj = find(i), find(j)
        if ri != rj:
            parent[ri] = rj
    roots = np.array([find(i) for i in range(m)])
    return [np.flatnonzero(roots == r) for r in np.unique(roots)]


def fit_ray(points):
    """Principal direction through 0 and the max perpendicular distance to it."""
    _, _, vt = np.linalg.svd(points, full_matrices=False)
    d = vt[0]
    if np.sum(points @ d) < 0:
        d = -d
    along = points @ d
    perp = np.linalg.norm(points - along[:, None] * d, axis=1)
    # points behind the origin do not lie on the ray
    perp = np.where(along < 0, np.linalg.norm(points, axis=1), perp)
    return d, float(np.max(perp))


def is_linearization(germ: MapGerm, h: ConicHomeo, cfg: BallConfig, model: DiscriminantModel | None = None, rel_tol=1e-4, sampler=None):
    eta = cfg.eta_or_delta
    if model is None:
        model = discriminant_sample(germ, cfg, sampler or Sampler(count=2000, seed=0))
    if model is None:
        raise NoDiscriminant("no discriminant data")
    pts = model.inside(eta)
    threshold = rel_tol * eta
    pulled = pullback(h, pts) if len(pts) else np.zeros((0, germ.k))
    pulled = pulled[np.all(np.isfinite(pulled), axis=1)]
    norms = np.linalg.norm(pulled, axis=1)
    pulled_nz = pulled[norms > 1e-300]
    if len(pulled_nz) == 0:
        return LinearizationReport("pass", [], pulled, threshold, eta)
    rays = []
    dirs = pulled_nz / np.linalg.norm(pulled_nz, axis=1, keepdims=True)
    for idx in _direction_clusters(dirs):
        d, res = fit_ray(pulled_nz[idx])
        rays.append({"direction": d, "residual": res, "count": len(idx)})
    rays.sort(key=lambda r: np.arctan2(r["direction"][1], r["direction"][0]) if len(r["direction"]) == 2 else 0.0)
    verdict = "pass" if all(r["residual"] < threshold for r in rays) else "fail"
    return LinearizationReport(verdict, rays, pulled, threshold, eta)


def d_h_regular(
    germ: MapGerm,
    h: ConicHomeo,
    cfg: BallConfig,
    excluded_directions=(),
    model: DiscriminantModel | None = None,
    linearization: LinearizationReport | None = None,
    seed=0,
    **kw,
) -> RegularityReport:
    """d-regularity of f_h, skipping the pulled-back discriminant directions.

    ``excluded_directions`` describes the complement of a compatibility set
    and is required when the germ has no discriminant oracle and h is not
    known to linearize it.
    """
    if model is None:
        model = discriminant_sample(germ, cfg, Sampler(count=1000, seed=seed))
    if linearization is None and not model.has_oracle and not len(excluded_directions):
        linearization = is_linearization(germ, h, cfg, model)
        if not linearization.passed:
            raise NoDiscriminant("h is not a linearization here and no compatibility set was supplied")
    fh = conic_modify(germ, h)
    pulled = pullback(h, model.points) if len(model.points) else np.zeros((0, germ.k))
    pulled = pulled[np.all(np.isfinite(pulled), axis=1)]
    pulled = pulled[np.linalg.norm(pulled, axis=1) > 1e-300]
    extra = [*pulled, *np.atleast_2d(np.asarray(excluded_directions, dtype=float)).reshape(-1, germ.k)]
    fh_model = discriminant_sample(fh, cfg, Sampler(count=1000, seed=seed))
    rep = d_regular(fh, cfg, model=fh_model, extra_directions=extra, seed=seed, point_filter=h.seam_filter(germ), **kw)
    rep.notes.append(f"checked on the conic modification by {h.name}")
    return rep
