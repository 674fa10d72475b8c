"""Transversality property and d-regularity, each with failure witnesses.

d-regularity is checked along two independent routes: the rays route solves
for points of E_theta on spheres and tests the stacked constraint Jacobian,
while the submersion route samples spheres directly and tests the rank of the
differential of f/|f| restricted to the tangent space.  ``d_regular`` runs
both and only reports a verdict when they agree.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize
from scipy.spatial import cKDTree

from .critical_locus import BallConfig, DiscriminantModel, Sampler, discriminant_sample
from .errors import BranchBoundary, DomainError, OnFiberV
from .germ_model import MapGerm
from .numerics import orth_complement, row_normalize, sample_sphere

V_FLOOR = 1e-14
ANGLE_EXCLUSION = 1e-3
W_EXCLUSION = 1e-3
TOL = 1e-6
SOLVE_ACCEPT = 1e-10


@dataclass
class RegularityReport:
    verdict: str  # pass | fail | inconclusive
    method: str  # rays | submersion | both | transversality | linearization
    witnesses: list = field(default_factory=list)
    sampling: dict = field(default_factory=dict)
    tolerances: dict = field(default_factory=dict)
    notes: list = field(default_factory=list)
    parts: dict = field(default_factory=dict)

    @property
    def passed(self):
        return self.verdict == "pass"

    def to_dict(self):
        out = {
            "method": self.method,
            "verdict": self.verdict,
            "witnesses": [
                {
                    "x": [float(v) for v in w["x"]],
                    "theta_or_y": [float(v) for v in w["theta_or_y"]],
                    "sigma_min": float(w["sigma_min"]),
                    "residual": float(w["residual"]),
                }
                for w in self.witnesses
            ],
            "sampling": self.sampling,
            "tolerances": self.tolerances,
        }
        if self.notes:
            out["notes"] = list(self.notes)
        if self.parts:
            out["parts"] = {k: v.to_dict() for k, v in self.parts.items()}
        return out


# ---------------------------------------------------------------------------
# Phi and the spherefication
# ---------------------------------------------------------------------------


def phi(germ: MapGerm, x):
    y = germ.eval(x)
    r = np.linalg.norm(y)
    if r <= V_FLOOR:
        raise OnFiberV(f"|f(x)| = {r:.3g} is below {V_FLOOR}")
    return y / r


def spherefication(germ: MapGerm, x):
    x = np.asarray(x, dtype=float)
    return np.linalg.norm(x) * phi(germ, x)


def dphi(y, J):
    """Differential of f/|f| from f and Df (batch aware)."""
    r = np.linalg.norm(y, axis=-1)[..., None, None]
    u = y / r[..., 0]
    P = np.eye(y.shape[-1]) - u[..., :, None] * u[..., None, :]
    return P @ J / r


# ---------------------------------------------------------------------------
# exclusions
# ---------------------------------------------------------------------------


class Exclusions:
    """The sampled stand-ins for the sets A (directions) and W (preimage of Delta)."""

    def __init__(self, directions=None, w_points=None, eps=1.0, angle=ANGLE_EXCLUSION, w_radius=W_EXCLUSION, point_filter=None):
        dirs = np.zeros((0, 0)) if directions is None else np.asarray(directions, dtype=float)
        self.directions = dirs
        self._dir_tree = cKDTree(dirs) if dirs.size else None
        # chord length equivalent to the angular tolerance
        self._chord = 2 * np.sin(angle / 2)
        self.angle = angle
        pts = np.zeros((0, 0)) if w_points is None else np.asarray(w_points, dtype=float)
        self._w_tree = cKDTree(pts) if pts.size else None
        self.w_radius = w_radius * eps
        # extra predicate on x, e.g. where f(x) sits on a seam of a conic modification
        self.point_filter = point_filter

    def direction_excluded(self, theta):
        if self._dir_tree is None:
            return np.zeros(np.shape(theta)[:-1], dtype=bool)
        d, _ = self._dir_tree.query(theta)
        return d < self._chord

    def point_excluded(self, x):
        if self._w_tree is None:
            out = np.zeros(np.shape(x)[:-1], dtype=bool)
        else:
            d, _ = self._w_tree.query(x)
            out = d < self.w_radius
        if self.point_filter is not None:
            out = out | self.point_filter(x)
        return out

    def summary(self):
        return {
            "directions": int(len(self.directions)) if self.directions.size else 0,
            "angle_rad": self.angle,
            "w_radius": self.w_radius,
        }


def exclusions_from_model(model: DiscriminantModel | None, cfg: BallConfig, extra_directions=(), point_filter=None):
    dirs = []
    w = None
    if model is not None:
        d = model.directions()
        if len(d):
            dirs.append(d)
        if len(model.preimages):
            w = model.preimages
    extra = np.asarray(list(extra_directions), dtype=float)
    if extra.size:
        dirs.append(extra / np.linalg.norm(extra, axis=1, keepdims=True))
    directions = np.concatenate(dirs) if dirs else None
    return Exclusions(directions, w, cfg.eps, point_filter=point_filter)


# ---------------------------------------------------------------------------
# diagnostics
# ---------------------------------------------------------------------------


def rays_diagnostic(germ, x, theta=None):
    """Smallest singular value of the row-normalized stack [Q_theta^T Df; x^T].

    With theta omitted it is taken to be f(x)/|f(x)|.
    """
    y, J = germ.value_and_jacobian(x)
    if theta is None:
        r = np.linalg.norm(y)
        if r <= V_FLOOR:
            raise OnFiberV("f(x) vanishes")
        theta = y / r
    Q = orth_complement(theta)
    A = np.vstack([Q.T @ J, np.asarray(x, dtype=float)[None, :]])
    s = np.linalg.svd(row_normalize(A), compute_uv=False)
    return float(s[-1])


def submersion_diagnostic(germ, x):
    """|x| times the (k-1)-th singular value of D(f/|f|) on the tangent space of the sphere."""
    x = np.asarray(x, dtype=float)
    y, J = germ.value_and_jacobian(x)
    if np.linalg.norm(y) <= V_FLOOR:
        raise OnFiberV("f(x) vanishes")
    D = dphi(y, J)
    P = orth_complement(x)
    s = np.linalg.svd(D @ P, compute_uv=False)
    k = germ.k
    if k == 1:
        return 1.0
    return float(np.linalg.norm(x) * s[k - 2])


def _safe(fn, *args):
    try:
        return fn(*args)
    except (OnFiberV, BranchBoundary, DomainError, np.linalg.LinAlgError):
        return None


def _refine_on_sphere(objective, x0, radius, maxiter=600):
    """Nelder-Mead on a tangent chart of the sphere through x0."""
    x0 = np.asarray(x0, dtype=float)
    B = orth_complement(x0)
    scale = 0.05 * radius

    def lift(u):
        z = x0 + scale * (B @ u)
        return radius * z / np.linalg.norm(z)

    res = minimize(
        lambda u: objective(lift(u)),
        np.zeros(B.shape[1]),
        method="Nelder-Mead",
        options={"xatol": 1e-11, "fatol": 1e-14, "maxiter": maxiter, "initial_simplex": None},
    )
    return lift(res.x), float(res.fun)


def _allowed(germ, x, excl: Exclusions):
    y = _safe(germ.eval, x)
    if y is None:
        return False
    r = np.linalg.norm(y)
    if r <= V_FLOOR * 1e4:
        return False
    if excl.direction_excluded(y / r):
        return False
    if excl.point_excluded(x):
        return False
    return True


PENALTY = 10.0


def _penalized(fn, germ, excl):
    def objective(x):
        if not _allowed(germ, x, excl):
            return PENALTY
        v = _safe(fn, germ, x)
        return PENALTY if v is None else v

    return objective


def default_radii(eps):
    return (eps, eps / 2, eps / 4, eps / 8)


# ---------------------------------------------------------------------------
# route 1: rays
# ---------------------------------------------------------------------------


def _theta_samples(rng, k, count):
    if k == 2:
        a = (np.arange(count) + rng.random()) * 2 * np.pi / count
        return np.stack([np.cos(a), np.sin(a)], axis=1)
    return sample_sphere(rng, count, k)


def solve_on_ray(germ, theta, radius, seeds, iters=40):
    """Points of E_theta on the sphere of the given radius, by projected Gauss-Newton.

    Solves Q_theta^T f(x)/|f(x)| = 0 on the sphere and keeps solutions with
    <f(x), theta> > 0.  Returns (points, residuals).
    """
    Q = orth_complement(theta)
    x = radius * seeds / np.linalg.norm(seeds, axis=1, keepdims=True)
    for _ in range(iters):
        y, J = germ.jacobian_nan(x)
        r = np.linalg.norm(y, axis=1)
        ok = np.isfinite(r) & (r > V_FLOOR)
        if not np.any(ok):
            break
        res = np.full((len(x), Q.shape[1]), np.nan)
        res[ok] = (y[ok] / r[ok, None]) @ Q
        D = np.full((len(x), Q.shape[1], germ.n), np.nan)
        D[ok] = Q.T @ dphi(y[ok], J[ok])
        # restrict the step to the tangent space of the sphere
        u = x / np.linalg.norm(x, axis=1, keepdims=True)
        D = D - (D @ u[:, :, None]) * u[:, None, :]
        good = ok & np.all(np.isfinite(D), axis=(1, 2))
        if not np.any(good):
            break
        step = np.zeros_like(x)
        step[good] = np.einsum("mij,mj->mi", np.linalg.pinv(D[good], rcond=1e-12), res[good])
        cap = 0.25 * radius
        length = np.linalg.norm(step, axis=1, keepdims=True)
        step *= np.minimum(1.0, cap / np.where(length > 0, length, 1.0))
        x = x - step
        x = radius * x / np.linalg.norm(x, axis=1, keepdims=True)
    y = germ.eval_nan(x)
    r = np.linalg.norm(y, axis=1)
    with np.errstate(invalid="ignore", divide="ignore"):
        u = y / r[:, None]
        resid = np.max(np.abs(u @ Q), axis=1) if Q.shape[1] else np.zeros(len(x))
        along = u @ theta
    keep = np.isfinite(resid) & (resid < SOLVE_ACCEPT) & (along > 0) & (r > V_FLOOR)
    return x[keep], resid[keep]


def d_regular_via_rays(
    germ: MapGerm,
    cfg: BallConfig,
    exclusions: Exclusions | None = None,
    radii=None,
    n_theta=48,
    seeds_per_theta=4,
    refine=6,
    seed=0,
    tol=TOL,
) -> RegularityReport:
    excl = exclusions or Exclusions(eps=cfg.eps)
    radii = default_radii(cfg.eps) if radii is None else radii
    rng = np.random.default_rng([seed, 11])
    witnesses = []
    counts = {"radii": len(radii), "theta": 0, "theta_skipped": 0, "solutions": 0, "refined": 0}
    objective = _penalized(rays_diagnostic, germ, excl)
    for rad in radii:
        thetas = _theta_samples(rng, germ.k, n_theta)
        cands = []
        for theta in thetas:
            if excl.direction_excluded(theta):
                counts["theta_skipped"] += 1
                continue
            counts["theta"] += 1
            seeds = sample_sphere(rng, seeds_per_theta, germ.n, rad)
            pts, _ = solve_on_ray(germ, theta, rad, seeds)
            for x in pts:
                if excl.point_excluded(x):
                    continue
                v = _safe(rays_diagnostic, germ, x, theta)
                if v is not None:
                    cands.append((v, x, theta))
        counts["solutions"] += len(cands)
        cands.sort(key=lambda c: c[0])
        for v, x, theta in cands[:refine]:
            counts["refined"] += 1
            xr, vr = _refine_on_sphere(objective, x, rad)
            if vr < v:
                v, x = vr, xr
                theta = phi(germ, x)
            if v < tol:
                witnesses.append(_witness(germ, x, theta, v, rad))
    verdict = "fail" if witnesses else "pass"
    return RegularityReport(
        verdict,
        "rays",
        _dedupe_witnesses(witnesses),
        {"seed": seed, "counts": counts},
        {"sigma_tol": tol, "solve_accept": SOLVE_ACCEPT, **excl.summary()},
    )


def _witness(germ, x, theta, sigma, radius):
    y = germ.eval(x)
    u = y / np.linalg.norm(y)
    Q = orth_complement(theta)
    resid = max(abs(np.linalg.norm(x) - radius), float(np.max(np.abs(u @ Q))) if Q.shape[1] else 0.0)
    return {"x": np.asarray(x, dtype=float), "theta_or_y": np.asarray(theta, dtype=float), "sigma_min": float(sigma), "residual": float(resid)}


def _dedupe_witnesses(ws, resolution=1e-6):
    out = []
    for w in ws:
        if all(np.linalg.norm(w["x"] - o["x"]) > resolution for o in out):
            out.append(w)
    out.sort(key=lambda w: w["sigma_min"])
    return out


# ---------------------------------------------------------------------------
# route 2: submersion of the spherefication
# ---------------------------------------------------------------------------


def d_regular_via_submersion(
    germ: MapGerm,
    cfg: BallConfig,
    exclusions: Exclusions | None = None,
    radii=None,
    n_points=400,
    refine=6,
    seed=0,
    tol=TOL,
) -> RegularityReport:
    excl = exclusions or Exclusions(eps=cfg.eps)
    radii = default_radii(cfg.eps) if radii is None else radii
    rng = np.random.default_rng([seed, 13])
    witnesses = []
    counts = {"radii": len(radii), "points": 0, "skipped": 0, "refined": 0}
    objective = _penalized(submersion_diagnostic, germ, excl)
    for rad in radii:
        xs = sample_sphere(rng, n_points, germ.n, rad)
        cands = []
        for x in xs:
            if not _allowed(germ, x, excl):
                counts["skipped"] += 1
                continue
            v = _safe(submersion_diagnostic, germ, x)
            if v is None:
                counts["skipped"] += 1
                continue
            counts["points"] += 1
            cands.append((v, x))
        cands.sort(key=lambda c: c[0])
        for v, x in cands[:refine]:
            counts["refined"] += 1
            xr, vr = _refine_on_sphere(objective, x, rad)
            if vr < v:
                v, x = vr, xr
            if v < tol:
                witnesses.append(_witness(germ, x, phi(germ, x), v, rad))
    verdict = "fail" if witnesses else "pass"
    return RegularityReport(
        verdict,
        "submersion",
        _dedupe_witnesses(witnesses),
        {"seed": seed, "counts": counts},
        {"sigma_tol": tol, **excl.summary()},
    )


def d_regular(
    germ: MapGerm,
    cfg: BallConfig,
    model: DiscriminantModel | None = None,
    extra_directions=(),
    seed=0,
    sampler: Sampler | None = None,
    point_filter=None,
    **kw,
) -> RegularityReport:
    """Run both routes; disagreement yields an inconclusive verdict."""
    if model is None:
        model = discriminant_sample(germ, cfg, sampler or Sampler(count=1000, seed=seed))
    excl = exclusions_from_model(model, cfg, extra_directions, point_filter)
    rays_kw = {k: v for k, v in kw.items() if k in ("radii", "n_theta", "seeds_per_theta", "refine", "tol")}
    sub_kw = {k: v for k, v in kw.items() if k in ("radii", "n_points", "refine", "tol")}
    a = d_regular_via_rays(germ, cfg, excl, seed=seed, **rays_kw)
    b = d_regular_via_submersion(germ, cfg, excl, seed=seed, **sub_kw)
    if a.verdict == b.verdict:
        verdict = a.verdict
        notes = []
    else:
        verdict = "inconclusive"
        notes = ["the two characterizations disagree at this sampling resolution"]
    return RegularityReport(
        verdict,
        "both",
        _dedupe_witnesses(a.witnesses + b.witnesses),
        {"seed": seed, "counts": {"rays": a.sampling["counts"], "submersion": b.sampling["counts"], "discriminant": model.meta.get("counts", {})}},
        a.tolerances,
        notes,
        {"rays": a, "submersion": b},
    )


# ---------------------------------------------------------------------------
# transversality property
# ---------------------------------------------------------------------------


def fiber_sphere_transverse(germ: MapGerm, y, eps, tol=TOL, seeds=64, seed=0, model=None, iters=40):
    """Solve f(x) = y on S_eps from several seeds and test rank [Df; x^T] = k + 1.

    Returns a dict with status 'transverse', 'tangent' or 'empty'.
    """
    with np.errstate(all="ignore"):
        return _fiber_sphere_transverse(germ, y, eps, tol, seeds, seed, model, iters)


def _fiber_sphere_transverse(germ, y, eps, tol, seeds, seed, model, iters):
    y = np.asarray(y, dtype=float)
    status = {"y": y, "solutions": 0, "sigma_min": None, "witness": None}
    if model is not None and len(model.points):
        d = np.min(np.linalg.norm(model.points - y, axis=1))
        status["distance_to_discriminant"] = float(d)
    rng = np.random.default_rng([seed, 17])
    x = sample_sphere(rng, seeds, germ.n, eps)
    scale = max(np.linalg.norm(y), 1e-300)
    for _ in range(iters):
        val, J = germ.jacobian_nan(x)
        r = (val - y) / scale
        u = x / np.linalg.norm(x, axis=1, keepdims=True)
        D = J / scale
        D = D - (D @ u[:, :, None]) * u[:, None, :]
        good = np.all(np.isfinite(D), axis=(1, 2)) & np.all(np.isfinite(r), axis=1)
        if not np.any(good):
            break
        step = np.zeros_like(x)
        step[good] = np.einsum("mij,mj->mi", np.linalg.pinv(D[good], rcond=1e-12), r[good])
        length = np.linalg.norm(step, axis=1, keepdims=True)
        step *= np.minimum(1.0, 0.25 * eps / np.where(length > 0, length, 1.0))
        x = x - step
        x = eps * x / np.linalg.norm(x, axis=1, keepdims=True)
    val = germ.eval_nan(x)
    err = np.linalg.norm(val - y, axis=1)
    ok = np.isfinite(err) & (err <= 1e-12 + 1e-9 * np.linalg.norm(y))
    sols = x[ok]
    status["solutions"] = int(len(sols))
    if len(sols) == 0:
        status["status"] = "empty"
        return status
    worst = None
    for xs in sols:
        J = _safe(germ.jacobian, xs)
        if J is None:
            continue
        A = row_normalize(np.vstack([J, xs[None, :]]))
        s = float(np.linalg.svd(A, compute_uv=False)[-1])
        if worst is None or s < worst[0]:
            worst = (s, xs)
    if worst is None:
        status["status"] = "empty"
        return status
    status["sigma_min"] = worst[0]
    if worst[0] < tol:
        status["status"] = "tangent"
        status["witness"] = worst[1]
    else:
        status["status"] = "transverse"
    return status


def transversality_property(
    germ: MapGerm,
    cfg: BallConfig,
    model: DiscriminantModel | None = None,
    n_targets=48,
    seeds=48,
    seed=0,
    tol=TOL,
) -> RegularityReport:
    """Sample regular values y in B_delta and test every fiber against S_eps."""
    if model is None:
        model = discriminant_sample(germ, cfg, Sampler(count=1000, seed=seed))
    rng = np.random.default_rng([seed, 19])
    k = germ.k
    targets = sample_sphere(rng, 4 * n_targets, k) * (cfg.delta * rng.random((4 * n_targets, 1)) ** (1.0 / k))
    if len(model.points):
        tree = cKDTree(model.points)
        d, _ = tree.query(targets)
        targets = targets[d > 1e-3 * cfg.delta]
    targets = targets[:n_targets]
    witnesses = []
    counts = {"targets": int(len(targets)), "transverse": 0, "empty": 0, "tangent": 0}
    for i, y in enumerate(targets):
        st = fiber_sphere_transverse(germ, y, cfg.eps, tol=tol, seeds=seeds, seed=seed + i)
        counts[st["status"]] += 1
        if st["status"] == "tangent":
            x = st["witness"]
            witnesses.append(
                {"x": x, "theta_or_y": y, "sigma_min": st["sigma_min"], "residual": float(np.linalg.norm(germ.eval(x) - y))}
            )
    verdict = "fail" if witnesses else "pass"
    notes = []
    if counts["empty"]:
        notes.append(f"{counts['empty']} sampled fibers missed S_eps or were empty; counted as transverse")
    return RegularityReport(verdict, "transversality", witnesses, {"seed": seed, "counts": counts}, {"sigma_tol": tol}, notes)
