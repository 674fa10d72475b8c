"""Fiber sampling, component counts, sector scans and a surjectivity probe."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .critical_locus import BallConfig, Branch, oracle_discriminant
from .errors import EmptyCloud, NoOracle
from .germ_model import MapGerm
from .numerics import sample_ball

ACCEPT = 1e-9
NEWTON_ITERS = 60
LINK_FRACTION = 5e-2  # default linking radius as a fraction of eps


@dataclass
class FiberCloud:
    target: np.ndarray
    eps: float
    points: np.ndarray
    rejected: int
    seed: int
    linking_radius: float
    seeds: int = 0
    residuals: np.ndarray | None = None  # |f(x) - t| per point

    def __post_init__(self):
        if len(self.points):
            assert np.all(np.linalg.norm(self.points, axis=1) <= self.eps * (1 + 1e-12))
        if self.residuals is not None:
            assert len(self.residuals) == len(self.points)
            assert np.all(self.residuals <= ACCEPT)

    @property
    def empty(self):
        return len(self.points) == 0

    def csv_rows(self):
        n = self.points.shape[1] if self.points.ndim == 2 and self.points.shape[1] else 0
        return [f"x{i + 1}" for i in range(n)], [list(p) for p in self.points]


def _newton_to_fiber(germ, t, x, eps, iters=NEWTON_ITERS):
    """Minimum-norm Newton steps onto f(x) = t, kept inside the closed ball."""
    with np.errstate(all="ignore"):
        return _newton_loop(germ, t, x, eps, iters)


def _newton_loop(germ, t, x, eps, iters):
    for _ in range(iters):
        y, J = germ.jacobian_nan(x)
        r = y - t
        ok = np.all(np.isfinite(r), axis=1) & np.all(np.isfinite(J), axis=(1, 2))
        if not np.any(ok):
            break
        step = np.zeros_like(x)
        step[ok] = np.einsum("mij,mj->mi", np.linalg.pinv(J[ok], rcond=1e-12), r[ok])
        length = np.linalg.norm(step, axis=1, keepdims=True)
        step *= np.minimum(1.0, 0.1 * eps / np.where(length > 0, length, 1.0))
        x = x - step
        norms = np.linalg.norm(x, axis=1, keepdims=True)
        x = np.where(norms > eps, x * (eps / np.maximum(norms, 1e-300)), x)
    return x


def _dedupe_points(pts, resolution):
    """Indices of a greedy subset with pairwise distances above resolution."""
    if len(pts) == 0:
        return np.zeros(0, dtype=int)
    keep = []
    tree = cKDTree(pts)
    taken = np.zeros(len(pts), dtype=bool)
    for i in range(len(pts)):
        if taken[i]:
            continue
        keep.append(i)
        taken[tree.query_ball_point(pts[i], resolution)] = True
    return np.asarray(keep, dtype=int)


def sample_fiber(germ: MapGerm, t, eps, seeds=2000, linking_radius=None, seed=0) -> FiberCloud:
    t = np.asarray(t, dtype=float)
    if seeds < 1:
        raise ValueError("need at least one seed")
    L = LINK_FRACTION * eps if linking_radius is None else linking_radius
    rng = np.random.default_rng([seed, 29])
    x = sample_ball(rng, seeds, germ.n, eps)
    x = _newton_to_fiber(germ, t, x, eps)
    val = germ.eval_nan(x)
    res = np.linalg.norm(val - t, axis=1)
    ok = np.isfinite(res) & (res <= ACCEPT) & (np.linalg.norm(x, axis=1) <= eps)
    keep = _dedupe_points(x[ok], L / 4)
    pts = x[ok][keep].reshape(-1, germ.n)
    return FiberCloud(t, float(eps), pts, int(np.sum(~ok)), seed, float(L), seeds, res[ok][keep])


def _union_find_count(points, radius):
    m = len(points)
    parent = np.arange(m)

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    for i, j in cKDTree(points).query_pairs(radius):
        ri, rj = find(i), find(j)
        if ri != rj:
            parent[ri] = rj
    return len({find(i) for i in range(m)})


def default_linking_radius(cloud: FiberCloud):
    if len(cloud.points) < 2:
        return cloud.linking_radius
    d, _ = cKDTree(cloud.points).query(cloud.points, k=2)
    return float(min(3.0 * np.median(d[:, 1]), cloud.linking_radius))


def component_count(cloud: FiberCloud, linking_radius=None) -> int:
    if cloud.empty:
        raise EmptyCloud("cannot count components of an empty cloud")
    radius = default_linking_radius(cloud) if linking_radius is None else linking_radius
    return _union_find_count(cloud.points, radius)


def local_dimension(cloud: FiberCloud, neighbors=10, threshold=0.1):
    """Median count of normalized PCA eigenvalues above threshold over kNN patches (advisory)."""
    pts = cloud.points
    if len(pts) < 3:
        return 0
    kk = min(neighbors, len(pts))
    _, idx = cKDTree(pts).query(pts, k=kk)
    dims = []
    for row in idx:
        patch = pts[row] - pts[row].mean(axis=0)
        ev = np.linalg.svd(patch, compute_uv=False) ** 2
        if ev[0] <= 0:
            dims.append(0)
            continue
        dims.append(int(np.sum(ev / ev[0] > threshold)))
    return int(np.median(dims))


# ---------------------------------------------------------------------------
# sectors
# ---------------------------------------------------------------------------


def _psi_loop(count=4000):
    """The closed discriminant loop of Psi: C(s), s in (0, 2), closed by the axis segment."""
    curve = Branch("C", "psi_curve", 0.0, 2.0)
    s = np.concatenate([np.geomspace(1e-3, 1.0, count // 2), 2.0 - np.geomspace(1.0, 1e-6, count // 2)[1:]])
    pts = curve(s)
    return np.vstack([[0.0, 0.0], pts, [0.0, pts[-1, 1]]])


def winding_number(loop, p):
    """Winding number of a closed polygon around the point p."""
    d = loop - p
    a = np.arctan2(d[:, 1], d[:, 0])
    da = np.diff(np.concatenate([a, a[:1]]))
    da = (da + np.pi) % (2 * np.pi) - np.pi
    return int(round(da.sum() / (2 * np.pi)))


def classify_sector(germ: MapGerm, t, eps=None):
    """'inside'/'outside' for Psi, angular sector labels for other k = 2 oracles."""
    t = np.asarray(t, dtype=float)
    fam = germ.family
    if fam is not None and fam.kind == "psi":
        return "inside" if winding_number(_psi_loop(), t) != 0 else "outside"
    if germ.k != 2:
        return "unknown"
    try:
        branches = oracle_discriminant(germ, eps)
    except NoOracle:
        return "unknown"
    dirs = []
    for b in branches:
        if b.kind == "point":
            continue
        pts = b(b.grid(64))
        pts = pts[np.linalg.norm(pts, axis=1) > 0]
        dirs.extend(np.arctan2(pts[:, 1], pts[:, 0]))
    if not dirs:
        return "sector0"
    cuts = np.unique(np.round(np.mod(dirs, 2 * np.pi), 12))
    a = np.mod(np.arctan2(t[1], t[0]), 2 * np.pi)
    return f"sector{int(np.searchsorted(cuts, a)) % len(cuts)}"


@dataclass
class SectorSummary:
    entries: list = field(default_factory=list)

    def by_label(self):
        out = {}
        for e in self.entries:
            out.setdefault(e["label"], []).append(e)
        return out

    @property
    def stable(self):
        """Within each label every base point has the same count (0 for empty)."""
        return all(len({e["components"] for e in es}) == 1 for es in self.by_label().values())

    def to_dict(self):
        return {
            "stable": self.stable,
            "entries": [
                {
                    "target": [float(v) for v in e["target"]],
                    "label": e["label"],
                    "components": e["components"],
                    "empty": e["empty"],
                    "points": e["points"],
                    "local_dimension": e["local_dimension"],
                }
                for e in self.entries
            ],
        }


def sector_scan(germ: MapGerm, cfg: BallConfig, base_points, seeds=2000, seed=0, labels=None) -> SectorSummary:
    entries = []
    for i, t in enumerate(np.atleast_2d(np.asarray(base_points, dtype=float))):
        label = labels[i] if labels is not None else classify_sector(germ, t, cfg.eps)
        cloud = sample_fiber(germ, t, cfg.eps, seeds=seeds, seed=seed + i)
        entries.append(
            {
                "target": t,
                "label": label,
                "empty": cloud.empty,
                "components": 0 if cloud.empty else component_count(cloud),
                "points": int(len(cloud.points)),
                "local_dimension": local_dimension(cloud),
                "cloud": cloud,
            }
        )
    # neighbouring sectors next to each other
    entries.sort(key=lambda e: (e["label"], float(np.arctan2(e["target"][1], e["target"][0])) if len(e["target"]) == 2 else 0.0))
    return SectorSummary(entries)


def surjectivity_probe(germ: MapGerm, cfg: BallConfig, targets=40, seeds=2000, seed=0):
    """Fraction of random small targets in B_delta whose sampled fiber is nonempty."""
    rng = np.random.default_rng([seed, 31])
    k = germ.k
    dirs = rng.standard_normal((targets, k))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    ys = dirs * (cfg.delta * rng.random((targets, 1)) ** (1.0 / k))
    hits = []
    for i, y in enumerate(ys):
        cloud = sample_fiber(germ, y, cfg.eps, seeds=seeds, seed=seed + i)
        hits.append(not cloud.empty)
    hits = np.array(hits)
    return {"fraction": float(hits.mean()) if len(hits) else 0.0, "targets": int(len(ys)), "hit": int(hits.sum()), "points": ys, "hits": hits}
