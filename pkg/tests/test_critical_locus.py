import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from milnorlab.critical_locus import (
    BallConfig,
    Sampler,
    boundary_critical,
    compare_to_oracle,
    discriminant_sample,
    distance_to_branches,
    ldm_offaxis_lines,
    normalized_minors,
    oracle_discriminant,
    psi_delta,
    psi_geometry_report,
    psi_tangency_radius2,
    rank_defect,
)
from milnorlab.errors import NoOracle
from milnorlab.germ_model import builtin_ldm, builtin_psi

from conftest import EPS, LAMBDAS, cfg_for, germ, model


def test_ball_config_validation():
    with pytest.raises(ValueError):
        BallConfig(0.5, 0.6)
    with pytest.raises(ValueError):
        BallConfig(0.5, 0.1, eta=0.2)
    with pytest.raises(ValueError):
        BallConfig(0.5, 0.1, eps0=0.4)
    assert BallConfig.for_germ(germ("ldm22"), 0.5).delta == pytest.approx(0.025)


def test_psi_delta_is_g_on_tangent_sphere():
    for eps in (0.1, 0.3, 0.5):
        assert psi_delta(eps) == pytest.approx(math.exp(-1 / eps**2), rel=1e-14)


def test_rank_defect_examples():
    g = germ("ldm22")
    assert rank_defect(g, np.array([0.3, 0.0, 0.0])) == 1
    assert rank_defect(g, np.array([0.3, 0.2, 0.1])) == 0
    assert rank_defect(g, np.zeros(3)) == 2
    assert rank_defect(germ("lin"), np.array([0.1, -0.2, 0.3])) == 0
    ex6 = germ("ex6")
    # ex6 = (x^2 z + y^3, x): critical where 3y^2 = x^2 = 0, i.e. on the z axis
    assert rank_defect(ex6, np.array([0.0, 0.0, 0.4])) == 1
    assert rank_defect(ex6, np.array([0.0, 0.3, 0.4])) == 0


@settings(max_examples=50, deadline=None)
@given(
    st.lists(st.floats(-2, 2), min_size=6, max_size=6),
    st.lists(st.floats(0.01, 100), min_size=2, max_size=2),
)
def test_normalized_minors_ignore_row_scaling(entries, scales):
    J = np.array(entries).reshape(2, 3)
    if np.min(np.linalg.norm(J, axis=1)) < 1e-3:
        return
    a = normalized_minors(J)
    b = normalized_minors(np.diag(scales) @ J)
    assert np.allclose(a, b, atol=1e-12)


def test_offaxis_lines_are_critical():
    for p, q in ((2, 3), (3, 2)):
        g = builtin_ldm(p, q, LAMBDAS)
        lines = ldm_offaxis_lines(p, q, LAMBDAS)
        assert len(lines) > 0
        for w in lines:
            x = 0.2 * np.asarray(w, dtype=float) / np.linalg.norm(w)
            assert rank_defect(g, x) == 1
    assert len(ldm_offaxis_lines(2, 2, LAMBDAS)) == 0


def test_ldm22_oracle_is_three_segments():
    br = oracle_discriminant(germ("ldm22"), EPS)
    assert len(br) == 3
    for b, (a, c) in zip(br, LAMBDAS):
        end = b(np.array(b.s1))
        assert np.allclose(end, [a * EPS**2, c * EPS**2])


@pytest.mark.parametrize("name,bound", [("ldm22", 0.95), ("ldm23", 0.95), ("ldm32", 0.95), ("ldm33", 0.95), ("parabola", 0.95)])
def test_sampled_discriminant_matches_oracle(name, bound):
    m = model(name)
    cfg = cfg_for(germ(name))
    cmp = compare_to_oracle(m, radius=cfg.delta)
    assert cmp["max_distance"] <= 1e-5 * cfg.delta
    assert cmp["coverage"] >= bound


def test_psi_samples_lie_on_oracle():
    m = model("psi3")
    cfg = cfg_for(germ("psi3"))
    cmp = compare_to_oracle(m, radius=cfg.delta)
    assert cmp["max_distance"] <= 1e-5 * cfg.delta
    assert cmp["samples"] > 100


def test_samples_are_traceable():
    for name in ("ldm22", "ex6", "psi3"):
        g = germ(name)
        m = model(name)
        assert len(m.points) == len(m.preimages) == len(m.defects)
        assert np.allclose(g.eval(m.preimages), m.points, atol=1e-15, rtol=0)
        assert np.all(m.defects >= 1)
        assert np.all(np.linalg.norm(m.preimages, axis=1) <= EPS * (1 + 1e-12))


def test_sampling_deterministic():
    g = germ("ldm22")
    a = discriminant_sample(g, cfg_for(g), Sampler(count=200, seed=4))
    b = discriminant_sample(g, cfg_for(g), Sampler(count=200, seed=4))
    assert np.array_equal(a.points, b.points)


def test_ex6_discriminant_is_origin():
    m = model("ex6")
    assert len(m.points) > 0
    assert np.max(np.abs(m.points)) <= 1e-5 * cfg_for(germ("ex6")).delta


def test_nondreg4_discriminant_is_u3_axis():
    # Df of (x^2 - y^2 z, y, w) drops rank only on x = y = 0
    # near z = 0 the first row vanishes to second order, so y is only resolved to ~sqrt(1e-13)
    m = model("nondreg4")
    assert np.max(np.abs(m.points[:, :2])) <= 1e-6
    assert np.max(np.abs(m.preimages[:, :2])) <= 1e-6
    cmp = compare_to_oracle(m, radius=cfg_for(germ("nondreg4")).delta)
    assert cmp["coverage"] >= 0.95


def test_no_oracle_for_plain_germs():
    from milnorlab.expr_parser import parse

    g = parse("map 3 -> 2 { u = x1 + x2^2; v = x3; }")
    with pytest.raises(NoOracle):
        oracle_discriminant(g)


def test_psi_curve_landmarks():
    (c, axis) = oracle_discriminant(builtin_psi(3))
    assert np.allclose(c(np.array(1.0)), [math.exp(-1), math.exp(-1 / 3)], atol=1e-9, rtol=0)
    assert np.allclose(c(np.array(2 - 1e-6)), [0.0, math.exp(-0.25)], atol=1e-6)
    assert np.allclose(axis(np.array(axis.s1)), [0.0, math.exp(-0.25)])
    # C is flat at 0: both coordinates are below 1e-8 by s = 0.01
    assert np.all(c(np.array(0.01)) < 1e-8)
    u, v = c(np.array(0.05))
    assert u == pytest.approx(math.exp(-1 / 0.0975), rel=1e-12)
    assert v == pytest.approx(math.exp(-1 / 0.1975), rel=1e-12)


def test_distance_to_branches_on_curve():
    (c, axis) = oracle_discriminant(builtin_psi(3))
    s = np.linspace(0.2, 1.8, 9)
    d, _, _ = distance_to_branches([c, axis], c(s))
    assert np.max(d) <= 1e-12


@pytest.mark.parametrize("eps", [0.1, 0.3, 0.5])
def test_psi_tangency_radius(eps):
    r2, spread = psi_tangency_radius2(eps)
    assert abs(r2 - (4 - eps * eps)) <= 1e-8
    assert spread <= 1e-8


def test_psi_report_flags_exponent():
    rep = psi_geometry_report(0.5)
    assert rep["exponent_discrepancy"] is True
    assert rep["delta_derived"] == pytest.approx(psi_delta(0.5), rel=1e-8)
    assert abs(rep["delta_printed_exponent"] - rep["delta_derived"]) > 1e-3


def test_boundary_critical_linear_projection():
    # (x, y) on the sphere of radius eps: critical where z = 0, image the circle of radius eps
    g = germ("lin")
    cfg = cfg_for(g)
    ext = boundary_critical(g, cfg, Sampler(count=300, seed=0))
    pts = ext.boundary_points
    assert len(pts) > 20
    assert np.allclose(np.linalg.norm(pts, axis=1), EPS, atol=1e-9)
    assert len(ext.boundary_inside(EPS)) == 0
