"""Critical sets, discriminants and their closed-form oracles."""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import NoOracle
from .germ_model import Func, MapGerm, walk
from .numerics import RANK_FLOOR, RANK_TOL, row_normalize, sample_ball, sample_sphere

GN_ITERS = 25
ROW_ITERS = 60
GN_ACCEPT = 1e-10
FD_STEP = 1e-7
DENSIFY_ROUNDS = 3


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------


def psi_delta(eps):
    """Target radius for Psi: the g-value on the sphere around 2bar of radius^2 = 4 - eps^2."""
    r2 = 4.0 - eps * eps
    return math.exp(-1.0 / (4.0 - r2))


def default_delta(germ: MapGerm | None, eps: float) -> float:
    if germ is not None and germ.family is not None and germ.family.kind == "psi":
        return psi_delta(eps)
    return eps * eps / 10.0


@dataclass(frozen=True)
class BallConfig:
    eps: float
    delta: float
    eta: float | None = None
    eps0: float | None = None

    def __post_init__(self):
        if not (0 < self.delta < self.eps):
            raise ValueError(f"need 0 < delta < eps, got delta={self.delta}, eps={self.eps}")
        if self.eps0 is not None and not self.eps < self.eps0:
            raise ValueError("need eps < eps0")
        if self.eta is not None and not (0 < self.eta <= self.delta):
            raise ValueError("need 0 < eta <= delta")

    @classmethod
    def for_germ(cls, germ, eps, delta=None, eta=None, eps0=None):
        return cls(eps, default_delta(germ, eps) if delta is None else delta, eta, eps0)

    @property
    def eta_or_delta(self):
        return self.delta if self.eta is None else self.eta

    def as_dict(self):
        return {"eps": self.eps, "delta": self.delta, "eta": self.eta, "eps0": self.eps0}


@dataclass(frozen=True)
class Sampler:
    kind: str = "random"  # or "grid"
    count: int = 2000
    seed: int = 0


# ---------------------------------------------------------------------------
# rank and minors
# ---------------------------------------------------------------------------


def rank_defect(germ: MapGerm, x, tol=RANK_TOL, side=None) -> int:
    """k minus the numerical rank of Df(x)."""
    J = germ.jacobian(x, side=side)
    s = np.linalg.svd(J, compute_uv=False)
    if s[0] < RANK_FLOOR:
        return germ.k
    return germ.k - int(np.sum(s > tol * s[0]))


def _defects(J, tol=RANK_TOL):
    s = np.linalg.svd(J, compute_uv=False)
    rank = np.sum(s > tol * s[..., :1], axis=-1)
    rank = np.where(s[..., 0] < RANK_FLOOR, 0, rank)
    return J.shape[-2] - rank


def normalized_minors(J):
    """All maximal minors of J after scaling each row to unit length.

    Zero rows stay zero, so points where a component is flat count as critical.
    Single-row matrices are left unscaled (their minors are the gradient).
    """
    k, n = J.shape[-2], J.shape[-1]
    if k > 1:
        J = row_normalize(J)
    cols = list(itertools.combinations(range(n), k))
    with np.errstate(invalid="ignore"):
        return np.stack([np.linalg.det(J[..., :, c]) for c in cols], axis=-1)


def _gauss_newton(residual, x, iters=GN_ITERS, project=None, max_step_frac=0.5, min_radius=1e-6, tangent=False):
    """Batch Gauss-Newton; the residual Jacobian comes from central differences.

    With ``tangent`` the steps are confined to the tangent space of the
    sphere through the current point (used together with a sphere projection).
    """
    n = x.shape[-1]
    x = x.copy()
    for _ in range(iters):
        r = residual(x)
        ok = np.all(np.isfinite(r), axis=-1)
        cols = []
        for j in range(n):
            e = np.zeros(n)
            e[j] = FD_STEP
            cols.append((residual(x + e) - residual(x - e)) / (2 * FD_STEP))
        Jr = np.stack(cols, axis=-1)
        if tangent:
            u = x / np.linalg.norm(x, axis=-1, keepdims=True)
            Jr = Jr - (Jr @ u[..., :, None]) * u[..., None, :]
        ok &= np.all(np.isfinite(Jr), axis=(-2, -1))
        done = ok & (np.max(np.abs(np.where(np.isfinite(r), r, np.inf)), axis=-1) < GN_ACCEPT * 1e-3)
        move = ok & ~done
        if not np.any(move):
            break
        step = np.zeros_like(x)
        step[move] = np.einsum(
            "...ij,...j->...i", np.linalg.pinv(Jr[move], rcond=1e-12), np.nan_to_num(r[move])
        )
        # trust region: degree-0 residuals make long steps fly off radially
        cap = max_step_frac * np.maximum(np.linalg.norm(x, axis=-1, keepdims=True), min_radius)
        length = np.linalg.norm(step, axis=-1, keepdims=True)
        step = step * np.minimum(1.0, cap / np.where(length > 0, length, 1.0))
        x = x - step
        if project is not None:
            x = project(x)
    r = residual(x)
    res = np.max(np.abs(r), axis=-1)
    res = np.where(np.isfinite(res), res, np.inf)
    return x, res


def _minor_residual(germ):
    def residual(x):
        _, J = germ.jacobian_nan(x)
        return normalized_minors(J)

    return residual


def _has_bump(expr):
    return any(isinstance(node, Func) and node.name == "bump" for node in walk(expr))


def _vanishing_row_points(germ, i, seeds, project):
    """Points where the gradient of component i itself has a nondegenerate zero.

    Per-row scaling in the minors cannot see these (a vanishing row has no
    direction), so they get their own pass.  Flat components such as
    exp(-1/t) near t=0 have tiny but degenerate gradients and are rejected by
    the Hessian test, which only runs on rows that contain a bump.
    """

    # the scale is frozen at the seeds: dividing by |J(x)| itself would make
    # the residual degree 0 and stall wherever the other rows vanish too
    _, J0 = germ.jacobian_nan(seeds)
    scale = np.linalg.norm(J0, axis=(-2, -1))[..., None]
    scale = np.where(np.isfinite(scale) & (scale > 0), scale, 1.0)

    def residual(x):
        _, J = germ.jacobian_nan(x)
        return J[..., i, :] / scale

    # double zeros (a quadratic term in the row) only converge linearly, hence the longer run
    x, res = _gauss_newton(residual, seeds, iters=ROW_ITERS, project=project, tangent=True)
    x = x[res < GN_ACCEPT]
    if len(x) == 0 or not _has_bump(germ.components[i]):
        # without a bump node a row cannot be flat; higher-order zeros (p >= 3) are genuine
        return x
    n = germ.n
    cols = []
    for j in range(n):
        e = np.zeros(n)
        e[j] = FD_STEP
        _, Jp = germ.jacobian_nan(x + e)
        _, Jm = germ.jacobian_nan(x - e)
        cols.append((Jp[..., i, :] - Jm[..., i, :]) / (2 * FD_STEP))
    H = np.stack(cols, axis=-1)
    _, J = germ.jacobian_nan(x)
    scale = np.linalg.norm(J, axis=(-2, -1))
    hnorm = np.linalg.norm(H, axis=(-2, -1)) * np.linalg.norm(x, axis=-1)
    ok = np.isfinite(hnorm) & (hnorm > 1e-6 * np.where(scale > 0, scale, np.inf))
    return x[ok]


def _seeds(sampler: Sampler, n, eps):
    rng = np.random.default_rng(sampler.seed)
    if sampler.kind == "grid":
        per = max(2, int(round(sampler.count ** (1.0 / n))))
        axis = np.linspace(-eps, eps, per)
        pts = np.stack(np.meshgrid(*([axis] * n), indexing="ij"), axis=-1).reshape(-1, n)
        pts = pts[np.linalg.norm(pts, axis=1) <= eps]
        # nudge off exact symmetry planes so seams are not hit head on
        return pts + 1e-9 * rng.standard_normal(pts.shape)
    return sample_ball(rng, sampler.count, n, eps)


def sample_critical_set(germ: MapGerm, cfg: BallConfig, sampler: Sampler = Sampler(), densify=True):
    """Critical points in B_eps refined by Gauss-Newton on the normalized minors.

    A second round re-seeds around the critical points whose images fall in
    B_delta, so thin pieces of the discriminant near its far end get filled in.
    Returns (points, defects) in seed order.
    """
    x, d = _critical_from_seeds(germ, cfg, _seeds(sampler, germ.n, cfg.eps))
    if not densify or len(x) == 0:
        return x, d
    rng = np.random.default_rng([sampler.seed, 2])
    xs, ds = [x], [d]
    for _ in range(DENSIFY_ROUNDS):
        allx = np.concatenate(xs)
        ynorm = np.linalg.norm(np.nan_to_num(germ.eval_nan(allx), nan=np.inf), axis=1)
        inside = ynorm <= cfg.delta
        if not np.any(inside):
            break
        near, w = allx[inside], ynorm[inside]
        # favour the far end of the discriminant inside B_delta, where seeds are scarce
        rank = np.argsort(np.argsort(w)) + 1.0
        pick = near[rng.choice(len(near), sampler.count, p=rank / rank.sum())]
        r = np.linalg.norm(pick, axis=1, keepdims=True)
        jitter = pick * np.exp(rng.uniform(-0.2, 0.2, (len(pick), 1))) + 0.05 * r * rng.standard_normal(pick.shape)
        jitter *= np.minimum(1.0, cfg.eps / np.linalg.norm(jitter, axis=1, keepdims=True))
        x2, d2 = _critical_from_seeds(germ, cfg, jitter)
        xs.append(x2)
        ds.append(d2)
    return np.concatenate(xs), np.concatenate(ds)


def _critical_from_seeds(germ, cfg, seeds):
    radii = np.linalg.norm(seeds, axis=1, keepdims=True)

    def on_seed_sphere(x):
        # critical sets meet small spheres transversally, so search within S_|seed|
        return radii * x / np.linalg.norm(x, axis=1, keepdims=True)

    x, res = _gauss_newton(_minor_residual(germ), seeds, project=on_seed_sphere, tangent=True)
    found = [x[res < GN_ACCEPT]]
    if germ.k > 1:
        for i in range(germ.k):
            found.append(_vanishing_row_points(germ, i, seeds, on_seed_sphere))
    x = np.concatenate(found)
    x = x[np.linalg.norm(x, axis=1) <= cfg.eps * (1 + 1e-12)]
    if len(x) == 0:
        return np.zeros((0, germ.n)), np.zeros(0, dtype=int)
    _, J = germ.jacobian_nan(x)
    good = np.all(np.isfinite(J), axis=(-2, -1)) & ~germ.bump_underflow(x)
    x, J = x[good], J[good]
    d = _defects(J) if len(x) else np.zeros(0, dtype=int)
    crit = d >= 1
    return x[crit], d[crit]


# ---------------------------------------------------------------------------
# oracle branches
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Branch:
    """A parametric curve s -> R^k on [s0, s1] passing through 0."""

    name: str
    kind: str  # power | psi_curve | psi_axis | parabola | line | point
    s0: float
    s1: float
    params: tuple = ()

    def __call__(self, s):
        s = np.asarray(s, dtype=float)
        if self.kind == "power":
            a, b, p, q = self.params
            return np.stack([a * s**p, b * s**q], axis=-1)
        if self.kind == "psi_curve":
            with np.errstate(divide="ignore", over="ignore"):
                u = np.where(s > 0, np.exp(-1.0 / np.where(s > 0, s * (2 - s), 1.0)), 0.0)
                v = np.where(s > 0, np.exp(-1.0 / np.where(s > 0, s * (4 - s), 1.0)), 0.0)
            return np.stack([u, v], axis=-1)
        if self.kind == "psi_axis":
            return np.stack([np.zeros_like(s), s], axis=-1)
        if self.kind == "parabola":
            return np.stack([s, s * s / 2.0], axis=-1)
        if self.kind == "line":
            return s[..., None] * np.asarray(self.params, dtype=float)
        if self.kind == "point":
            (k,) = self.params
            return np.zeros(s.shape + (k,))
        raise ValueError(self.kind)

    def grid(self, count):
        if self.kind == "psi_curve":
            # the curve is flat near 0, so sample densely where it moves
            lo = max(self.s0, 1e-3)
            return np.concatenate([[self.s0], np.geomspace(lo, self.s1, count - 1)])
        return np.linspace(self.s0, self.s1, count)


def _bounds_for(branch_s1, eps):
    return branch_s1 if eps is None else min(branch_s1, eps)


def ldm_offaxis_lines(p, q, lambdas):
    """Critical lines of (sum a_i x_i^p, sum b_i x_i^q) off the coordinate axes.

    Columns i and j of the Jacobian are parallel iff
    a_i b_j x_j^(q-p) = a_j b_i x_i^(q-p), so for p != q every support S with
    |S| >= 2 can carry critical lines t*w.  Returns the direction vectors w
    (normalized so w[min S] = 1); empty when p == q.
    """
    if p == q:
        return []
    n = len(lambdas)
    ab = [(float(a), float(b)) for a, b in lambdas]
    d = abs(q - p)
    out = []
    for size in range(2, n + 1):
        for support in itertools.combinations(range(n), size):
            i0 = support[0]
            a0, b0 = ab[i0]
            choices = []
            for j in support[1:]:
                aj, bj = ab[j]
                num, den = (aj * b0, a0 * bj) if p < q else (a0 * bj, aj * b0)
                if num == 0 or den == 0:
                    choices = None
                    break
                r = num / den
                if d % 2:
                    choices.append([math.copysign(abs(r) ** (1.0 / d), r)])
                elif r > 0:
                    root = r ** (1.0 / d)
                    choices.append([root, -root])
                else:
                    choices = None
                    break
            if choices is None:
                continue
            for combo in itertools.product(*choices):
                w = np.zeros(n)
                w[i0] = 1.0
                w[list(support[1:])] = combo
                out.append(w)
    return out


def oracle_discriminant(germ_or_family, eps=None):
    """Closed-form discriminant branches for a known family tag.

    With ``eps`` the branches are clipped to the image of the critical set in B_eps.
    """
    fam = germ_or_family.family if isinstance(germ_or_family, MapGerm) else germ_or_family
    if fam is None:
        raise NoOracle("germ has no family tag")
    if fam.kind == "ldm":
        p, q, lambdas = fam.params
        t1 = 1.0 if eps is None else eps
        out = []
        for i, (a, b) in enumerate(lambdas):
            a, b = float(a), float(b)
            kind_name = "segment" if p == q else "curve"
            out.append(Branch(f"{kind_name}{i + 1}+", "power", 0.0, t1, (a, b, p, q)))
            if p % 2 or q % 2:
                out.append(Branch(f"{kind_name}{i + 1}-", "power", -t1, 0.0, (a, b, p, q)))
        for j, w in enumerate(ldm_offaxis_lines(p, q, lambdas)):
            a = sum(float(l[0]) * wi**p for l, wi in zip(lambdas, w))
            b = sum(float(l[1]) * wi**q for l, wi in zip(lambdas, w))
            tw = t1 / float(np.linalg.norm(w))
            out.append(Branch(f"line{j + 1}+", "power", 0.0, tw, (a, b, p, q)))
            if p % 2 or q % 2:
                out.append(Branch(f"line{j + 1}-", "power", -tw, 0.0, (a, b, p, q)))
        return out
    if fam.kind == "psi":
        s1 = 2.0 - 1e-12 if eps is None else min(eps, 2.0 - 1e-12)
        top = math.exp(-0.25) if eps is None else (math.exp(-1.0 / (eps * eps)) if eps < 2 else math.exp(-0.25))
        return [Branch("C", "psi_curve", 0.0, s1), Branch("axis", "psi_axis", 0.0, top)]
    if fam.kind == "catalog":
        name = fam.params[0]
        if name == "parabola":
            u1 = math.sqrt(2.0) if eps is None else math.sqrt(2.0) * eps
            return [Branch("parabola", "parabola", -u1, u1)]
        if name == "ex6":
            return [Branch("origin", "point", 0.0, 0.0, (2,))]
        if name == "nondreg4":
            # Df drops rank exactly on x = y = 0, whose image is the u3 axis
            t1 = 1.0 if eps is None else eps
            return [Branch("u3-axis", "line", -t1, t1, (0.0, 0.0, 1.0))]
    raise NoOracle(f"no oracle for family {fam.kind}")


def _branch_distance(branch: Branch, pts, grid=4001, iters=80):
    """Distance from each point to the branch by grid search plus golden refinement."""
    if branch.kind == "point":
        return np.linalg.norm(pts, axis=1), np.zeros(len(pts))
    if branch.kind == "line":
        d = np.asarray(branch.params, dtype=float)
        s = np.clip(pts @ d / (d @ d), branch.s0, branch.s1)
        return np.linalg.norm(pts - branch(s), axis=1), s
    if branch.kind == "psi_axis":
        s = np.clip(pts[:, 1], branch.s0, branch.s1)
        return np.linalg.norm(pts - branch(s), axis=1), s
    if branch.kind == "power" and branch.params[2] == branch.params[3]:
        a, b, p, _ = branch.params
        # a straight segment from 0 toward (a, b) * t^p
        lo, hi = sorted((branch.s0**p if branch.s0 >= 0 else -((-branch.s0) ** p), branch.s1**p if branch.s1 >= 0 else -((-branch.s1) ** p)))
        lam = np.array([a, b])
        tau = np.clip(pts @ lam / (lam @ lam), lo, hi)
        return np.linalg.norm(pts - tau[:, None] * lam, axis=1), tau
    s_grid = branch.grid(grid)
    curve = branch(s_grid)
    best = np.empty(len(pts))
    best_s = np.empty(len(pts))
    for start in range(0, len(pts), 512):
        chunk = pts[start : start + 512]
        d = np.linalg.norm(chunk[:, None, :] - curve[None, :, :], axis=2)
        j = np.argmin(d, axis=1)
        lo = s_grid[np.maximum(j - 1, 0)]
        hi = s_grid[np.minimum(j + 1, len(s_grid) - 1)]
        # golden-section refinement, vectorized across points
        g = (math.sqrt(5) - 1) / 2
        for _ in range(iters):
            c = hi - g * (hi - lo)
            e = lo + g * (hi - lo)
            fc = np.linalg.norm(chunk - branch(c), axis=1)
            fe = np.linalg.norm(chunk - branch(e), axis=1)
            left = fc < fe
            hi = np.where(left, e, hi)
            lo = np.where(left, lo, c)
        s = (lo + hi) / 2
        ds = np.linalg.norm(chunk - branch(s), axis=1)
        dg = d[np.arange(len(chunk)), j]
        use_grid = dg < ds
        best[start : start + 512] = np.where(use_grid, dg, ds)
        best_s[start : start + 512] = np.where(use_grid, s_grid[j], s)
    return best, best_s


def distance_to_branches(branches, pts):
    """(distance, branch index, parameter) of the nearest branch point for each sample."""
    pts = np.atleast_2d(np.asarray(pts, dtype=float))
    if not branches or len(pts) == 0:
        return np.full(len(pts), np.inf), np.full(len(pts), -1), np.full(len(pts), np.nan)
    ds, ss = zip(*(_branch_distance(b, pts) for b in branches))
    D = np.stack(ds, axis=1)
    S = np.stack(ss, axis=1)
    idx = np.argmin(D, axis=1)
    rows = np.arange(len(pts))
    return D[rows, idx], idx, S[rows, idx]


def arclength_samples(branch: Branch, count, radius=None):
    """Points spread evenly in arclength along the branch, optionally clipped to a ball."""
    if branch.kind == "point":
        return branch(np.zeros(1))
    s = branch.grid(20001)
    pts = branch(s)
    if radius is not None:
        pts = pts[np.linalg.norm(pts, axis=1) <= radius]
    if len(pts) < 2:
        return pts
    seg = np.linalg.norm(np.diff(pts, axis=0), axis=1)
    cum = np.concatenate([[0.0], np.cumsum(seg)])
    if cum[-1] == 0:
        return pts[:1]
    targets = np.linspace(0, cum[-1], count)
    j = np.clip(np.searchsorted(cum, targets), 0, len(pts) - 1)
    return pts[j]


# ---------------------------------------------------------------------------
# discriminant models
# ---------------------------------------------------------------------------


@dataclass
class DiscriminantModel:
    k: int
    points: np.ndarray  # images in R^k
    preimages: np.ndarray  # critical points in R^n
    defects: np.ndarray
    branches: list = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    @property
    def has_oracle(self):
        return bool(self.branches)

    def inside(self, radius):
        return self.points[np.linalg.norm(self.points, axis=1) <= radius]

    def directions(self, radius=None, floor=1e-14):
        pts = self.points if radius is None else self.inside(radius)
        norms = np.linalg.norm(pts, axis=1)
        pts = pts[norms > floor]
        return pts / np.linalg.norm(pts, axis=1, keepdims=True)


@dataclass
class ExtendedDiscriminant:
    interior: DiscriminantModel
    boundary_points: np.ndarray  # images of new boundary-critical points
    boundary_preimages: np.ndarray

    def boundary_inside(self, radius):
        if len(self.boundary_points) == 0:
            return self.boundary_points
        return self.boundary_points[np.linalg.norm(self.boundary_points, axis=1) < radius * (1 - 1e-9)]

    @property
    def all_points(self):
        return np.concatenate([self.interior.points, self.boundary_points.reshape(-1, self.interior.k)])


def _dedupe(images, resolution):
    if len(images) == 0:
        return np.zeros(0, dtype=int)
    keys = np.round(images / resolution).astype(np.int64)
    _, first = np.unique(keys, axis=0, return_index=True)
    return np.sort(first)


def discriminant_sample(germ: MapGerm, cfg: BallConfig, sampler: Sampler = Sampler()) -> DiscriminantModel:
    x, d = sample_critical_set(germ, cfg, sampler)
    y = germ.eval_nan(x) if len(x) else np.zeros((0, germ.k))
    ok = np.all(np.isfinite(y), axis=1)
    x, d, y = x[ok], d[ok], y[ok]
    keep = _dedupe(y, 1e-4 * cfg.delta)
    try:
        branches = oracle_discriminant(germ, cfg.eps)
    except NoOracle:
        branches = []
    meta = {"seed": sampler.seed, "counts": {"seeds": sampler.count, "critical": int(len(x)), "images": int(len(keep))}}
    return DiscriminantModel(germ.k, y[keep], x[keep], d[keep], branches, meta)


def boundary_critical(germ: MapGerm, cfg: BallConfig, sampler: Sampler = Sampler(), model=None) -> ExtendedDiscriminant:
    """Add images of critical points of f restricted to S_eps (where Df itself has full rank)."""
    if model is None:
        model = discriminant_sample(germ, cfg, sampler)
    rng = np.random.default_rng(sampler.seed + 1)
    seeds = sample_sphere(rng, sampler.count, germ.n, cfg.eps)
    eps = cfg.eps

    def residual(x):
        _, J = germ.jacobian_nan(x)
        r = np.linalg.norm(x, axis=-1, keepdims=True)
        stacked = np.concatenate([J, (x / r)[..., None, :]], axis=-2)
        if germ.k + 1 > germ.n:
            m = np.zeros(x.shape[:-1] + (1,))
        else:
            m = normalized_minors(stacked)
        return np.concatenate([m, (r * r - eps * eps) / (eps * eps)], axis=-1)

    def project(x):
        return eps * x / np.linalg.norm(x, axis=-1, keepdims=True)

    x, res = _gauss_newton(residual, seeds, project=project)
    x = x[res < GN_ACCEPT]
    if len(x):
        y, J = germ.jacobian_nan(x)
        good = np.all(np.isfinite(J), axis=(-2, -1))
        x, y, J = x[good], y[good], J[good]
        new = _defects(J) == 0
        x, y = x[new], y[new]
    else:
        y = np.zeros((0, germ.k))
    keep = _dedupe(y, 1e-4 * cfg.delta)
    return ExtendedDiscriminant(model, y[keep], x[keep])


def compare_to_oracle(model: DiscriminantModel, radius=None, coverage_radius=None, per_branch=200):
    """Max sample-to-oracle distance and the fraction of the oracle covered by samples.

    Coverage is measured on oracle points within ``radius`` (all of them when None).
    """
    if not model.branches:
        raise NoOracle("model has no oracle branches")
    dist, _, _ = distance_to_branches(model.branches, model.points)
    max_dist = float(np.max(dist)) if len(dist) else 0.0
    ref = np.concatenate([arclength_samples(b, per_branch, radius) for b in model.branches])
    if coverage_radius is None:
        scale = radius if radius is not None else max(float(np.max(np.linalg.norm(ref, axis=1))), 1e-300)
        coverage_radius = 1e-2 * scale
    if len(model.points) == 0 or len(ref) == 0:
        coverage = 0.0 if len(ref) else 1.0
    else:
        from scipy.spatial import cKDTree

        dnn, _ = cKDTree(model.points).query(ref)
        coverage = float(np.mean(dnn <= coverage_radius))
    return {"max_distance": max_dist, "coverage": coverage, "coverage_radius": coverage_radius, "samples": int(len(model.points))}


# ---------------------------------------------------------------------------
# Psi geometry
# ---------------------------------------------------------------------------


def psi_tangency_radius2(eps, n=3, seeds=64, seed=0):
    """Numerically recover r^2 = |x - 2bar|^2 on the circle S_eps meets the sphere |x - 1bar| = 1.

    Points of that circle are found by Gauss-Newton from random seeds; no
    closed form is used.
    """
    rng = np.random.default_rng(seed)
    c1 = np.zeros(n)
    c1[0] = 1.0
    c2 = 2 * c1
    x = sample_sphere(rng, seeds, n, eps)
    for _ in range(60):
        r = np.stack([np.sum(x * x, axis=1) - eps * eps, np.sum((x - c1) ** 2, axis=1) - 1.0], axis=1)
        J = np.stack([2 * x, 2 * (x - c1)], axis=1)
        x = x - np.einsum("mij,mj->mi", np.linalg.pinv(J), r)
    res = np.max(np.abs(np.stack([np.sum(x * x, axis=1) - eps * eps, np.sum((x - c1) ** 2, axis=1) - 1.0], axis=1)), axis=1)
    x = x[res < 1e-13]
    r2 = np.sum((x - c2) ** 2, axis=1)
    return float(np.median(r2)), float(np.ptp(r2)) if len(r2) else float("nan")


def psi_geometry_report(eps, n=3):
    """Derived target radius for Psi together with the printed-exponent discrepancy."""
    r2_num, spread = psi_tangency_radius2(eps, n)
    r = math.sqrt(r2_num)
    derived = math.exp(-1.0 / (4.0 - r2_num))
    printed = math.exp(-1.0 / (r * (4.0 - r)))
    return {
        "eps": eps,
        "r2_numeric": r2_num,
        "r2_closed_form": 4.0 - eps * eps,
        "r2_error": abs(r2_num - (4.0 - eps * eps)),
        "r2_spread": spread,
        "delta_derived": derived,
        "delta_printed_exponent": printed,
        "exponent_discrepancy": True,
        "note": "g on the sphere |x-2bar|=r equals exp(-1/(4-r^2)); the printed form exp(-1/(r(4-r))) "
        "gives a different value and is not used",
    }


# ---------------------------------------------------------------------------
# CSV
# ---------------------------------------------------------------------------


def oracle_rows(branches, count=400):
    rows = []
    for b in branches:
        for s in b.grid(count):
            rows.append((b.name, float(s), *map(float, b(np.array(s)))))
    return rows


def critical_rows(model: DiscriminantModel):
    return [(*map(float, x), *map(float, y), int(d)) for x, y, d in zip(model.preimages, model.points, model.defects)]
