"""Milnor vector field, the tube-to-sphere flow, and Ehresmann connections.

Integration uses scipy's RK45 stepper driven by hand so that every accepted
step can be recorded and a sphere crossing can be located by bisection on
the dense output.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import RK45
from scipy.spatial import cKDTree

from .critical_locus import BallConfig, DiscriminantModel, Sampler, discriminant_sample
from .errors import (
    BranchBoundary,
    DegenerateProjection,
    DomainError,
    NotSubmersion,
    OnFiberV,
    PreconditionFailed,
    StepFailure,
)
from .germ_model import MapGerm, substitute
from .numerics import orth_complement, sample_sphere
from .regularity_checks import V_FLOOR, d_regular, exclusions_from_model, phi

RTOL = 1e-8
ATOL = 1e-10
MAX_STEPS = 100_000
EVENT_TOL = 1e-10
DEGENERATE = 1e-10
SUBMERSION_TOL = 1e-8


# ---------------------------------------------------------------------------
# stepping
# ---------------------------------------------------------------------------


@dataclass
class _Path:
    t: list
    y: list
    reason: str = "reached_end"
    message: str = ""
    error: Exception | None = None


def _integrate(fun, t0, y0, t_bound, rtol, atol, max_steps, event=None):
    """Accepted RK45 steps from t0 toward t_bound, stopping at the first sign
    change of ``event`` (refined by bisection on the dense output)."""
    path = _Path([t0], [np.array(y0, dtype=float)])
    try:
        solver = RK45(fun, t0, np.array(y0, dtype=float), t_bound, rtol=rtol, atol=atol)
    except Exception as exc:  # the field is undefined at the start
        path.reason, path.message, path.error = "error", str(exc), exc
        return path
    g_prev = event(t0, path.y[0]) if event else None
    for _ in range(max_steps):
        if solver.status != "running":
            break
        try:
            msg = solver.step()
        except Exception as exc:
            # keep the accepted part of the path for the caller
            path.reason, path.message, path.error = "error", str(exc), exc
            return path
        if solver.status == "failed":
            path.reason = "step_failure"
            path.message = str(msg)
            return path
        t, y = solver.t, solver.y.copy()
        if event is not None:
            g = event(t, y)
            if g_prev < 0 <= g:
                dense = solver.dense_output()
                lo, hi = solver.t_old, t
                for _ in range(200):
                    mid = 0.5 * (lo + hi)
                    if event(mid, dense(mid)) < 0:
                        lo = mid
                    else:
                        hi = mid
                    if abs(event(hi, dense(hi))) <= EVENT_TOL or hi - lo <= 1e-15 * max(1.0, abs(hi)):
                        break
                path.t.append(hi)
                path.y.append(dense(hi))
                path.reason = "event"
                return path
            g_prev = g
        path.t.append(t)
        path.y.append(y)
    else:
        path.reason = "step_failure"
        path.message = f"more than {max_steps} steps"
        return path
    if solver.status == "finished":
        path.reason = "reached_end"
    return path


# ---------------------------------------------------------------------------
# Milnor vector field and the flow to the sphere
# ---------------------------------------------------------------------------


def milnor_vector_field(germ: MapGerm, x, w_points=None, w_radius=0.0):
    """Radial vector projected onto the tangent space of E_theta, scaled so <w, x> = |x|^2."""
    x = np.asarray(x, dtype=float)
    if w_points is not None and len(w_points):
        d = np.min(np.linalg.norm(np.asarray(w_points) - x, axis=1))
        if d < w_radius:
            raise DegenerateProjection(f"point is within {d:.3g} of the sampled preimage of the discriminant", x)
    y, J = germ.value_and_jacobian(x)
    r = np.linalg.norm(y)
    if r <= V_FLOOR:
        raise OnFiberV("f(x) vanishes")
    Q = orth_complement(y / r)
    A = Q.T @ J
    # x minus its component in the row space of A
    w = x - A.T @ np.linalg.lstsq(A @ A.T, A @ x, rcond=1e-14)[0] if A.size else x.copy()
    xx = float(x @ x)
    wx = float(w @ x)
    if wx <= DEGENERATE * xx:
        raise DegenerateProjection(f"<w, x> = {wx:.3g} is not positive; E_theta is tangent to the sphere here", x)
    return w * (xx / wx)


@dataclass
class FlowTrace:
    t: np.ndarray
    x: np.ndarray
    phi: np.ndarray
    norm_x: np.ndarray
    norm_f: np.ndarray
    reason: str  # reached_sphere | step_failure | degenerate_projection
    message: str = ""

    @property
    def end(self):
        return self.x[-1]

    @property
    def phi_drift(self):
        return float(np.max(np.linalg.norm(self.phi - self.phi[0], axis=1))) if len(self.phi) else 0.0

    @property
    def radius_increasing(self):
        return bool(np.all(np.diff(self.norm_x) > 0))

    @property
    def norm_f_direction(self):
        d = np.diff(self.norm_f)
        if np.all(d > 0):
            return "increasing"
        if np.all(d < 0):
            return "decreasing"
        return "not monotone"

    def csv_rows(self):
        n, k = self.x.shape[1], self.phi.shape[1]
        header = ["t"] + [f"x{i + 1}" for i in range(n)] + [f"phi{i + 1}" for i in range(k)] + ["norm_x", "norm_f"]
        rows = [
            [t, *x, *p, nx, nf] for t, x, p, nx, nf in zip(self.t, self.x, self.phi, self.norm_x, self.norm_f)
        ]
        return header, rows

    def summary(self):
        return {
            "reason": self.reason,
            "steps": int(len(self.t) - 1),
            "t_end": float(self.t[-1]),
            "end": [float(v) for v in self.end],
            "norm_end": float(self.norm_x[-1]),
            "phi_drift": self.phi_drift,
            "radius_increasing": self.radius_increasing,
            "norm_f": self.norm_f_direction,
        }


def _trace_from(germ, t, xs, reason, message=""):
    xs = np.asarray(xs)
    vals = germ.eval_nan(xs)
    nf = np.linalg.norm(vals, axis=1)
    with np.errstate(invalid="ignore", divide="ignore"):
        ph = vals / nf[:, None]
    return FlowTrace(np.asarray(t), xs, ph, np.linalg.norm(xs, axis=1), nf, reason, message)


def flow_to_sphere(germ: MapGerm, x0, eps, rtol=RTOL, atol=ATOL, max_steps=MAX_STEPS, w_points=None, w_radius=None):
    """Follow the Milnor vector field from x0 until |x| = eps."""
    x0 = np.asarray(x0, dtype=float)
    r0 = np.linalg.norm(x0)
    if not 0 < r0 < eps:
        raise ValueError("the starting point must satisfy 0 < |x0| < eps")
    w_radius = 1e-3 * eps if w_radius is None else w_radius
    t_bound = 1.5 * np.log(eps / r0) + 1.0

    def fun(t, x):
        return milnor_vector_field(germ, x, w_points, w_radius)

    def event(t, x):
        return float(np.linalg.norm(x) - eps)

    path = _integrate(fun, 0.0, x0, t_bound, rtol, atol, max_steps, event)
    if path.reason == "error":
        exc = path.error
        if isinstance(exc, DegenerateProjection):
            trace = _trace_from(germ, path.t, path.y, "degenerate_projection", str(exc))
            err = DegenerateProjection(str(exc), getattr(exc, "x", None))
            err.trace = trace
            raise err from exc
        if not isinstance(exc, (OnFiberV, DomainError, BranchBoundary, np.linalg.LinAlgError)):
            raise exc
        trace = _trace_from(germ, path.t, path.y, "step_failure", str(exc))
        raise StepFailure(str(exc), trace) from exc
    trace = _trace_from(germ, path.t, path.y, "reached_sphere" if path.reason == "event" else "step_failure", path.message)
    if path.reason != "event":
        raise StepFailure(f"flow stopped before reaching the sphere ({path.reason}: {path.message})", trace)
    return trace


def _tube_point(germ, direction, delta, eps, iters=200):
    """Smallest r in (0, eps) with |f(r u)| = delta along the ray, by bisection."""
    rs = np.linspace(0, eps, 65)[1:]
    vals = np.linalg.norm(germ.eval_nan(rs[:, None] * direction), axis=1)
    above = np.flatnonzero(np.nan_to_num(vals, nan=-1.0) >= delta)
    if not len(above):
        return None
    j = above[0]
    lo = rs[j - 1] if j else 0.0
    hi = rs[j]
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        if np.linalg.norm(germ.eval(mid * direction)) < delta:
            lo = mid
        else:
            hi = mid
    return hi * direction


def tube_points(germ, cfg: BallConfig, count, seed=0, exclusions=None, max_tries=50):
    """Points x in B_eps with |f(x)| = delta whose direction f(x)/|f(x)| avoids the exclusions."""
    rng = np.random.default_rng([seed, 23])
    out = []
    for _ in range(max_tries):
        for u in sample_sphere(rng, 4 * count, germ.n):
            x = _tube_point(germ, u, cfg.delta, cfg.eps)
            if x is None or np.linalg.norm(x) >= cfg.eps * (1 - 1e-6):
                continue
            if exclusions is not None:
                th = phi(germ, x)
                if exclusions.direction_excluded(th) or exclusions.point_excluded(x):
                    continue
            out.append(x)
            if len(out) == count:
                return np.array(out)
    return np.array(out).reshape(-1, germ.n)


def tau_equivalence_probe(germ, cfg: BallConfig, samples=100, seed=0, regularity=None, model=None, extra_directions=()):
    """Flow tube points to the sphere and check that tau keeps Phi and is injective."""
    if regularity is None:
        regularity = d_regular(germ, cfg, model=model, extra_directions=extra_directions, seed=seed)
    if regularity.verdict != "pass":
        raise PreconditionFailed(f"the tau probe needs a d-regular germ; d_regular verdict was {regularity.verdict}")
    if model is None:
        model = discriminant_sample(germ, cfg, Sampler(count=1000, seed=seed))
    excl = exclusions_from_model(model, cfg, extra_directions)
    starts = tube_points(germ, cfg, samples, seed, excl)
    w_pts = model.preimages if len(model.preimages) else None
    traces, failures = [], []
    for x0 in starts:
        try:
            traces.append(flow_to_sphere(germ, x0, cfg.eps, w_points=w_pts))
        except (StepFailure, DegenerateProjection) as exc:
            failures.append({"x0": [float(v) for v in x0], "error": str(exc)})
    ends = np.array([tr.end for tr in traces]).reshape(-1, germ.n)
    phi_err = [float(np.linalg.norm(phi(germ, tr.end) - phi(germ, tr.x[0]))) for tr in traces]
    radius_err = [abs(tr.norm_x[-1] - cfg.eps) / cfg.eps for tr in traces]
    collisions = 0
    if len(ends) > 1:
        tree = cKDTree(ends)
        for i, j in tree.query_pairs(1e-6 * cfg.eps):
            if np.linalg.norm(starts[i] - starts[j]) > 1e-3 * cfg.eps:
                collisions += 1
    ok = (
        not failures
        and len(traces) == len(starts) > 0
        and max(phi_err, default=0.0) <= 1e-6
        and max(radius_err, default=0.0) <= 1e-8
        and all(tr.phi_drift <= 1e-6 and tr.radius_increasing for tr in traces)
        and collisions == 0
    )
    return {
        "verdict": "pass" if ok else "fail",
        "samples": int(len(starts)),
        "reached": int(len(traces)),
        "failures": failures,
        "max_phi_error": max(phi_err, default=0.0),
        "max_radius_error": max(radius_err, default=0.0),
        "max_phi_drift": max((tr.phi_drift for tr in traces), default=0.0),
        "radius_increasing": all(tr.radius_increasing for tr in traces),
        "norm_f": sorted({tr.norm_f_direction for tr in traces}),
        "collisions": collisions,
        "starts": starts,
        "traces": traces,
    }


# ---------------------------------------------------------------------------
# Ehresmann connections
# ---------------------------------------------------------------------------


@dataclass
class ConnectionSpec:
    """A submersion with a horizontal rule.

    ``metric`` is an SPD matrix or a callable x -> matrix (identity when None);
    ``horizontal`` optionally overrides the metric rule with a callable
    x -> n x k matrix whose columns span H_x.
    """

    submersion: MapGerm
    metric: object = None
    horizontal: object = None

    def G(self, x):
        if self.metric is None:
            return np.eye(self.submersion.n)
        return np.asarray(self.metric(x) if callable(self.metric) else self.metric, dtype=float)

    def jac(self, x):
        J = self.submersion.jacobian(np.asarray(x, dtype=float))
        s = np.linalg.svd(J, compute_uv=False)
        if s[-1] <= SUBMERSION_TOL * max(s[0], 1e-300):
            raise NotSubmersion(f"Df has rank below {self.submersion.k} at x={np.asarray(x).tolist()}")
        return J


def _orthonormal(B):
    q, _ = np.linalg.qr(B)
    return q[:, : B.shape[1]]


def vertical_space(conn: ConnectionSpec, x):
    J = conn.jac(x)
    _, _, vt = np.linalg.svd(J)
    return vt[J.shape[0] :].T


def horizontal_space(conn: ConnectionSpec, x):
    J = conn.jac(x)
    if conn.horizontal is not None:
        return _orthonormal(np.asarray(conn.horizontal(x), dtype=float))
    return _orthonormal(np.linalg.solve(conn.G(x), J.T))


def splitting_condition(conn: ConnectionSpec, x):
    """Condition number of [V | H]; large values mean the split is nearly degenerate."""
    M = np.hstack([vertical_space(conn, x), horizontal_space(conn, x)])
    return float(np.linalg.cond(M))


def _lift_velocity(conn, x, dalpha):
    J = conn.jac(x)
    if conn.horizontal is not None:
        H = horizontal_space(conn, x)
        return H @ np.linalg.solve(J @ H, dalpha)
    Gi_Jt = np.linalg.solve(conn.G(x), J.T)
    return Gi_Jt @ np.linalg.solve(J @ Gi_Jt, dalpha)


def _derivative(alpha, dalpha):
    if dalpha is not None:
        return dalpha
    h = 1e-6

    def d(t):
        return (np.asarray(alpha(t + h)) - np.asarray(alpha(t - h))) / (2 * h)

    return d


@dataclass
class LiftTrace:
    t: np.ndarray
    x: np.ndarray
    base_error: np.ndarray  # |f(x(t)) - alpha(t)|
    vertical: np.ndarray  # |P_V x'(t)| / |x'(t)|

    @property
    def end(self):
        return self.x[-1]

    @property
    def sup_error(self):
        return float(np.max(self.base_error))

    @property
    def max_vertical(self):
        return float(np.max(self.vertical)) if len(self.vertical) else 0.0

    def at(self, ts):
        """Linear interpolation of the recorded path (for plotting only)."""
        return np.stack([np.interp(ts, self.t, self.x[:, i]) for i in range(self.x.shape[1])], axis=-1)


def _velocity_fn(conn, alpha, dalpha):
    da = _derivative(alpha, dalpha)

    def fun(t, x):
        try:
            return _lift_velocity(conn, x, np.asarray(da(t), dtype=float))
        except (NotSubmersion, np.linalg.LinAlgError, DomainError, BranchBoundary) as exc:
            raise StepFailure(f"horizontal lift broke down at t={t:.6g}: {exc}") from exc

    return fun, da


def _finish_lift(conn, path, alpha, fun):
    ts = np.asarray(path.t)
    xs = np.asarray(path.y)
    f = conn.submersion
    err = np.linalg.norm(f.eval_nan(xs) - np.array([alpha(t) for t in ts]), axis=1)
    vert = []
    for t, x in zip(ts, xs):
        try:
            v = fun(t, x)
            V = vertical_space(conn, x)
        except (StepFailure, NotSubmersion):
            vert.append(np.nan)
            continue
        nv = np.linalg.norm(v)
        vert.append(float(np.linalg.norm(V.T @ v) / nv) if nv > 0 else 0.0)
    return LiftTrace(ts, xs, err, np.asarray(vert))


def horizontal_lift(conn: ConnectionSpec, alpha, x0, t_span=(0.0, 1.0), dalpha=None, rtol=RTOL, atol=ATOL, max_steps=MAX_STEPS):
    """Integrate x' = G^-1 Df^T (Df G^-1 Df^T)^-1 alpha'(t) from x0."""
    x0 = np.asarray(x0, dtype=float)
    f = conn.submersion
    mismatch = np.linalg.norm(f.eval(x0) - np.asarray(alpha(t_span[0]), dtype=float))
    if mismatch > 1e-8:
        raise ValueError(f"x0 is not on the initial fiber (|f(x0) - alpha(t0)| = {mismatch:.3g})")
    fun, _ = _velocity_fn(conn, alpha, dalpha)
    path = _integrate(fun, t_span[0], x0, t_span[1], rtol, atol, max_steps)
    trace = _finish_lift(conn, path, alpha, fun)
    if path.error is not None and not isinstance(path.error, StepFailure):
        raise path.error
    if path.reason != "reached_end":
        raise StepFailure(f"lift stopped early: {path.message}", trace)
    return trace


def fiber_translation(conn: ConnectionSpec, alpha, seeds, dalpha=None, t_span=(0.0, 1.0)):
    """Samples of rho_alpha: pairs (x, end of the lift through x) plus a continuity ratio."""
    seeds = np.atleast_2d(np.asarray(seeds, dtype=float))
    ends = np.array([horizontal_lift(conn, alpha, x, t_span, dalpha).end for x in seeds])
    ratio = 0.0
    if len(seeds) > 1:
        d, j = cKDTree(seeds).query(seeds, k=2)
        num = np.linalg.norm(ends - ends[j[:, 1]], axis=1)
        ratio = float(np.max(num / np.maximum(d[:, 1], 1e-300)))
    return {"pairs": list(zip(seeds, ends)), "starts": seeds, "ends": ends, "continuity_ratio": ratio}


# ---------------------------------------------------------------------------
# composed connections
# ---------------------------------------------------------------------------


def compose(f: MapGerm, g: MapGerm) -> MapGerm:
    """g o f as a germ on the source of f."""
    if g.n != f.k:
        raise ValueError("g must act on the target of f")
    comps = tuple(substitute(c, f.components) for c in g.components)
    return MapGerm(f.n, g.k, comps, "", None, (), check_origin=False)


@dataclass
class Decomposition:
    V_f: np.ndarray
    Htilde_f: np.ndarray
    H_gf: np.ndarray
    sigma_min_dgf: float
    dims: tuple = field(default=())

    def __post_init__(self):
        self.dims = (self.V_f.shape[1], self.Htilde_f.shape[1], self.H_gf.shape[1])


def composed_connection(f_conn: ConnectionSpec, g_conn: ConnectionSpec, x) -> Decomposition:
    """Split H^f_x by pulling back V^g/H^g at f(x) through Df restricted to H^f."""
    x = np.asarray(x, dtype=float)
    f = f_conn.submersion
    y = f.eval(x)
    Hf = horizontal_space(f_conn, x)
    M = f_conn.jac(x) @ Hf  # iso H^f -> T_y Y
    Vg = vertical_space(g_conn, y)
    Hg = horizontal_space(g_conn, y)
    Minv = np.linalg.inv(M)
    Htilde = _orthonormal(Hf @ (Minv @ Vg)) if Vg.shape[1] else np.zeros((f.n, 0))
    Hgf = _orthonormal(Hf @ (Minv @ Hg))
    Jgf = g_conn.jac(y) @ f_conn.jac(x)
    s = np.linalg.svd(Jgf @ Hgf, compute_uv=False)
    return Decomposition(vertical_space(f_conn, x), Htilde, Hgf, float(s[-1]))


def _composed_velocity(f_conn, g_conn, x, dalpha):
    dec = composed_connection(f_conn, g_conn, x)
    Jgf = g_conn.jac(f_conn.submersion.eval(x)) @ f_conn.jac(x)
    C = dec.H_gf
    return C @ np.linalg.solve(Jgf @ C, dalpha), dec


def composition_lemma_probe(f_conn: ConnectionSpec, g_conn: ConnectionSpec, alpha, x0, t_span=(0.0, 1.0), dalpha=None, n_check=101, rtol=RTOL, atol=ATOL):
    """Compare f o (H^{g o f}-lift of alpha through x0) with the H^g-lift through f(x0)."""
    x0 = np.asarray(x0, dtype=float)
    f = f_conn.submersion
    gf = compose(f, g_conn.submersion)
    da = _derivative(alpha, dalpha)
    if np.linalg.norm(gf.eval(x0) - np.asarray(alpha(t_span[0]))) > 1e-8:
        raise ValueError("x0 does not lie over alpha(t0)")

    def fun_x(t, x):
        try:
            return _composed_velocity(f_conn, g_conn, x, np.asarray(da(t), dtype=float))[0]
        except (NotSubmersion, np.linalg.LinAlgError) as exc:
            raise StepFailure(f"composed lift broke down at t={t:.6g}: {exc}") from exc

    fun_y, _ = _velocity_fn(g_conn, alpha, dalpha)
    ts = np.linspace(t_span[0], t_span[1], n_check)
    xs = _on_grid(fun_x, x0, ts, rtol, atol)
    ys = _on_grid(fun_y, f.eval(x0), ts, rtol, atol)
    err = np.linalg.norm(f.eval(xs) - ys, axis=1)
    base_err = np.linalg.norm(g_conn.submersion.eval(ys) - np.array([alpha(t) for t in ts]), axis=1)
    comp_vf, comp_ht, dims, smin = [], [], set(), []
    for t, x in zip(ts, xs):
        v, dec = _composed_velocity(f_conn, g_conn, x, np.asarray(da(t), dtype=float))
        B = np.hstack([dec.V_f, dec.Htilde_f, dec.H_gf])
        c = np.linalg.solve(B, v) if B.shape[0] == B.shape[1] else np.linalg.lstsq(B, v, rcond=None)[0]
        a, b = dec.V_f.shape[1], dec.Htilde_f.shape[1]
        nv = max(np.linalg.norm(v), 1e-300)
        comp_vf.append(float(np.linalg.norm(dec.V_f @ c[:a]) / nv))
        comp_ht.append(float(np.linalg.norm(dec.Htilde_f @ c[a : a + b]) / nv))
        dims.add(dec.dims)
        smin.append(dec.sigma_min_dgf)
    sup = float(np.max(err))
    ok = sup <= 1e-5 and max(comp_vf) <= 1e-6 and max(comp_ht) <= 1e-6 and min(smin) > 1e-8
    return {
        "verdict": "pass" if ok else "fail",
        "sup_error": sup,
        "base_error": float(np.max(base_err)),
        "max_vertical_f_component": max(comp_vf),
        "max_htilde_component": max(comp_ht),
        "dims": sorted(dims),
        "min_sigma_dgf": float(min(smin)),
        "t": ts,
        "lift_x": xs,
        "lift_y": ys,
    }


def _on_grid(fun, y0, ts, rtol, atol):
    out = [np.asarray(y0, dtype=float)]
    y = out[0]
    for a, b in zip(ts[:-1], ts[1:]):
        path = _integrate(fun, a, y, b, rtol, atol, MAX_STEPS)
        if path.error is not None:
            raise path.error
        if path.reason != "reached_end":
            raise StepFailure("lift did not reach the next grid time")
        y = path.y[-1]
        out.append(y)
    return np.array(out)
