"""Small linear-algebra and sampling helpers shared by the probes."""

from __future__ import annotations

import numpy as np

RANK_TOL = 1e-8
RANK_FLOOR = 1e-12


def unit(v):
    v = np.asarray(v, dtype=float)
    return v / np.linalg.norm(v, axis=-1, keepdims=True)


def sample_sphere(rng, count, n, radius=1.0):
    x = rng.standard_normal((count, n))
    return radius * unit(x)


def sample_ball(rng, count, n, radius=1.0, log_fraction=0.5, r_min=1e-3):
    """Uniform points in the ball, with a share drawn at log-uniform radii.

    The log-uniform part puts seeds near the origin where the interesting
    small images of homogeneous germs live.
    """
    dirs = sample_sphere(rng, count, n)
    m = int(round(count * log_fraction))
    r = np.empty(count)
    r[: count - m] = radius * rng.random(count - m) ** (1.0 / n)
    r[count - m :] = radius * np.exp(rng.uniform(np.log(r_min), 0.0, m))
    return dirs * r[:, None]


def numeric_rank(J, tol=RANK_TOL, floor=RANK_FLOOR):
    s = np.linalg.svd(np.asarray(J, dtype=float), compute_uv=False)
    if s.size == 0 or s[0] < floor:
        return 0
    return int(np.sum(s > tol * s[0]))


def row_normalize(M):
    M = np.asarray(M, dtype=float)
    # pre-scale by the largest entry so rows near 1e-300 do not square to zero
    big = np.max(np.abs(M), axis=-1, keepdims=True)
    M = M / np.where(big > 0, big, 1.0)
    norms = np.linalg.norm(M, axis=-1, keepdims=True)
    return M / np.where(norms > 0, norms, 1.0)


def sigma_min(M):
    s = np.linalg.svd(np.asarray(M, dtype=float), compute_uv=False)
    return float(s[-1]) if s.size else 0.0


def orth_complement(v):
    """Orthonormal basis (as columns) of the complement of the column span of v."""
    v = np.atleast_2d(np.asarray(v, dtype=float))
    if v.shape[0] == 1 and v.shape[1] > 1:
        v = v.T
    n, r = v.shape
    u, s, _ = np.linalg.svd(v, full_matrices=True)
    rank = int(np.sum(s > 1e-14 * max(s[0], 1e-300))) if s.size else 0
    return u[:, rank:]


def null_space(A, tol=RANK_TOL):
    A = np.atleast_2d(np.asarray(A, dtype=float))
    _, s, vt = np.linalg.svd(A, full_matrices=True)
    rank = int(np.sum(s > tol * s[0])) if s.size and s[0] > RANK_FLOOR else 0
    return vt[rank:].T


def lstsq_step(J, r):
    """Minimum-norm Gauss-Newton step solving J dx = r for a batch."""
    pinv = np.linalg.pinv(J, rcond=1e-12)
    return np.einsum("...ij,...j->...i", pinv, r)


def angle_of(v):
    return float(np.arctan2(v[1], v[0]))


def angular_distance(a, b):
    d = np.abs(np.mod(a - b + np.pi, 2 * np.pi) - np.pi)
    return d
