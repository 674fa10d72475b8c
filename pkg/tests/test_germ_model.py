import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from milnorlab.errors import BranchBoundary, DomainError, HyperbolicityViolation, UnknownName
from milnorlab.germ_model import (
    BUMP_FLOOR,
    Const,
    MapGerm,
    Var,
    bump,
    builtin_catalog,
    builtin_ldm,
    builtin_psi,
    piecewise,
    sqrt,
)

from conftest import LAMBDAS, germ

ALL_GERMS = ["ldm22", "ldm23", "ldm32", "ldm33", "psi2", "psi3", "ex6", "parabola", "nondreg4", "lin"]


def central_fd(g, x, h=1e-6):
    """Independent oracle: central differences on plain evaluation."""
    J = np.zeros((g.k, g.n))
    for j in range(g.n):
        e = np.zeros(g.n)
        e[j] = h
        J[:, j] = (g.eval(x + e) - g.eval(x - e)) / (2 * h)
    return J


@pytest.mark.parametrize("name", ALL_GERMS)
def test_jacobian_matches_central_differences(name):
    g = germ(name)
    rng = np.random.default_rng(7)
    pts = rng.uniform(-1, 1, (1000, g.n))
    J = g.jacobian(pts)
    worst = 0.0
    for x, Jx in zip(pts, J):
        fd = central_fd(g, x)
        worst = max(worst, float(np.max(np.abs(Jx - fd)) / max(1.0, float(np.max(np.abs(Jx))))))
    assert worst <= 1e-6


def test_psi_value_at_center_of_first_sphere():
    y = builtin_psi(3).eval(np.array([1.0, 0, 0]))
    assert np.allclose(y, [math.exp(-1), math.exp(-1 / 3)], rtol=0, atol=1e-15)


def test_psi_at_second_center_and_outside():
    g = builtin_psi(3)
    assert np.allclose(g.eval(np.array([2.0, 0, 0])), [0.0, math.exp(-0.25)], atol=1e-15)
    rng = np.random.default_rng(1)
    d = rng.standard_normal((200, 3))
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    far = np.array([2.0, 0, 0]) + d * rng.uniform(2.0, 3.0, (200, 1))
    assert np.all(g.eval(far) == 0.0)


def test_psi_plane_value():
    y = builtin_psi(2).eval(np.array([0.5, 0.0]))
    assert y[0] == pytest.approx(math.exp(-1 / 0.75), rel=1e-15)
    assert y[1] == pytest.approx(math.exp(-1 / 1.75), rel=1e-15)


def test_psi_gradient_closed_form():
    g = builtin_psi(3)
    rng = np.random.default_rng(3)
    x = np.array([1.0, 0, 0]) + rng.uniform(-0.9, 0.9, (4000, 3))
    alpha = 1 - np.sum((x - [1, 0, 0]) ** 2, axis=1)
    beta = 4 - np.sum((x - [2, 0, 0]) ** 2, axis=1)
    keep = (alpha > 0.05) & (beta > 0.05)
    x, alpha, beta = x[keep], alpha[keep], beta[keep]
    assert len(x) > 500
    y = g.eval(x)
    J = g.jacobian(x)
    gf = -(2 / alpha**2)[:, None] * y[:, :1] * (x - [1, 0, 0])
    gg = -(2 / beta**2)[:, None] * y[:, 1:] * (x - [2, 0, 0])
    assert np.max(np.abs(J[:, 0, :] - gf)) <= 1e-8
    assert np.max(np.abs(J[:, 1, :] - gg)) <= 1e-8


def test_psi_first_row_vanishes_at_center():
    J = builtin_psi(3).jacobian(np.array([1.0, 0, 0]))
    assert np.all(J[0] == 0.0)


def test_ex6_jacobian_at_ones():
    J = builtin_catalog("ex6").jacobian(np.ones(3))
    assert np.allclose(J, [[2, 3, 1], [1, 0, 0]], atol=1e-14)
    assert np.allclose(J, central_fd(builtin_catalog("ex6"), np.ones(3)), atol=1e-8)


def test_ldm_values_and_axis_rank():
    g = builtin_ldm(2, 2, LAMBDAS)
    assert np.allclose(g.eval(np.ones(3)), [1.0, 1.0])
    for j in range(3):
        e = np.zeros(3)
        e[j] = 0.7
        assert np.linalg.matrix_rank(g.jacobian(e)) == 1


def test_hyperbolicity():
    with pytest.raises(HyperbolicityViolation) as ei:
        builtin_ldm(2, 2, [(1, 1), (-1, -1)])
    assert ei.value.pair == (0, 1)
    g = builtin_ldm(3, 2, [(1, 0), (0, 1), (-1, -1)])
    assert g.family.params[:2] == (3, 2)


def test_catalog_values():
    assert np.allclose(builtin_catalog("ex6").eval(np.array([0.0, 1.0, 0.0])), [1.0, 0.0])
    assert np.allclose(builtin_catalog("parabola").eval(np.zeros(3)), [0.0, 0.0])
    assert np.allclose(builtin_catalog("nondreg4").eval(np.array([0.0, 0.0, 1.0, 0.0])), [0.0, 0.0, 0.0])
    with pytest.raises(UnknownName):
        builtin_catalog("nope")


def test_germ_convention_enforced():
    with pytest.raises(ValueError):
        MapGerm(2, 1, (Var(0) + Const(1.0),))
    for name in ALL_GERMS:
        g = germ(name)
        assert np.all(g.eval(np.zeros(g.n)) == 0.0)


def test_guard_seam_requires_side():
    g = MapGerm(2, 1, (piecewise(Var(0), Var(0) * Var(0), -Var(0) * Var(0)),), check_origin=True)
    with pytest.raises(BranchBoundary):
        g.jacobian(np.array([0.0, 0.3]))
    assert g.jacobian(np.array([0.0, 0.3]), side="pos").shape == (1, 2)
    assert np.isnan(g.jacobian_nan(np.array([[0.0, 0.3]]))[1]).all()


def test_domain_error_on_negative_sqrt():
    g = MapGerm(1, 1, (sqrt(Var(0)),))
    with pytest.raises(DomainError):
        g.eval(np.array([-1.0]))


@given(st.floats(min_value=-1e300, max_value=0.0, allow_nan=False))
def test_bump_exactly_zero_for_nonpositive(t):
    g = MapGerm(1, 1, (bump(Var(0)),), check_origin=False)
    x = np.array([t])
    assert g.eval(x)[0] == 0.0
    assert g.jacobian(x)[0, 0] == 0.0


@given(st.floats(min_value=BUMP_FLOOR, max_value=1e3, allow_nan=False))
def test_bump_finite_and_positive_derivative(t):
    g = MapGerm(1, 1, (bump(Var(0)),), check_origin=False)
    v, J = g.value_and_jacobian(np.array([t]))
    assert np.isfinite(v).all() and np.isfinite(J).all()
    assert J[0, 0] >= 0.0


@settings(max_examples=60, deadline=None)
@given(
    st.sampled_from([(2, 2), (2, 3), (3, 2), (3, 3)]),
    st.lists(st.floats(-1, 1), min_size=3, max_size=3),
    st.floats(0.1, 3.0),
)
def test_ldm_weighted_homogeneity(pq, x, t):
    p, q = pq
    g = builtin_ldm(p, q, LAMBDAS)
    x = np.array(x)
    a, b = g.eval(t * x)
    u, v = g.eval(x)
    assert a == pytest.approx(t**p * u, abs=1e-12)
    assert b == pytest.approx(t**q * v, abs=1e-12)


@settings(max_examples=40, deadline=None)
@given(st.sampled_from(ALL_GERMS), st.integers(0, 2**31 - 1))
def test_eval_and_jacobian_deterministic(name, seed):
    g = germ(name)
    x = np.random.default_rng(seed).uniform(-1, 1, (5, g.n))
    assert np.array_equal(g.eval(x), g.eval(x.copy()))
    assert np.array_equal(g.jacobian(x), g.jacobian(x.copy()))


@settings(max_examples=40, deadline=None)
@given(st.sampled_from(ALL_GERMS), st.floats(0.5, 10.0), st.integers(0, 1000))
def test_jacobian_scales_with_components(name, c, seed):
    g = germ(name)
    x = np.random.default_rng(seed).uniform(-1, 1, (4, g.n))
    s = g.scaled([c] * g.k)
    assert np.allclose(s.jacobian(x), c * g.jacobian(x), rtol=1e-12, atol=1e-300)
