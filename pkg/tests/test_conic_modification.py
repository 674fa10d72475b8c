import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from milnorlab.conic_modification import (
    HOMEO_NAMES,
    catalog_homeo,
    conic_modify,
    d_h_regular,
    fit_ray,
    homeo_from_source,
    is_linearization,
    parity_homeo,
    parity_homeo_for,
    pullback,
    xi_h,
)
from milnorlab.critical_locus import oracle_discriminant
from milnorlab.errors import DomainError, NoDiscriminant, UnknownName
from milnorlab.expr_parser import parse
from milnorlab.germ_model import builtin_psi

from conftest import EPS, PARITY_CASES, cfg_for, dhreg, germ, linearization, model

CATALOG = ["identity", "cube", "cube_inv", "sqrt_sign", "psi_exp", "parity(2,2)", "parity(2,3)", "parity(3,2)", "parity(3,3)"]


@pytest.mark.parametrize("name", CATALOG)
def test_round_trips(name):
    a, b = catalog_homeo(name).round_trip_error(np.random.default_rng(5))
    assert a <= 1e-12
    assert b <= 1e-12


def test_cube_inverse_value():
    h = catalog_homeo("cube")
    assert np.allclose(h.h_inv(np.array([1.0, 8.0])), [1.0, 2.0], atol=1e-15)
    assert np.allclose(h.h(np.array([1.0, 2.0])), [1.0, 8.0], atol=1e-15)


@pytest.mark.parametrize("s", [0.25, 0.5, 0.75, 1.0])
def test_psi_exp_straightens_curve(s):
    (c, _) = oracle_discriminant(builtin_psi(3))
    h = catalog_homeo("psi_exp")
    assert np.allclose(h.h_inv(c(np.array(s))), [s, s], atol=1e-8, rtol=0)


def test_psi_exp_sends_axis_to_axis():
    h = catalog_homeo("psi_exp")
    w = h.h_inv(np.array([0.0, math.exp(-1 / 3)]))
    assert w[0] == 0.0
    assert w[1] == pytest.approx(1.0, abs=1e-12)


def test_ex6_modification():
    g = germ("ex6")
    fh = conic_modify(g, catalog_homeo("cube_inv"))
    ref = parse("map 3 -> 2 { u = x1^2*x3 + x2^3; v = x1^3; }")
    x = np.random.default_rng(2).uniform(-0.5, 0.5, (200, 3))
    assert np.allclose(fh.eval(x), ref.eval(x), atol=1e-15)
    assert np.allclose(fh.jacobian(x), ref.jacobian(x), atol=1e-14)


def test_sqrt_sign_is_piecewise():
    h = catalog_homeo("sqrt_sign")
    assert np.allclose(h.h_inv(np.array([-2.0, 1.0])), [-4.0, 2.0])
    assert np.allclose(h.h_inv(np.array([3.0, 1.0])), [9.0, 2.0])
    assert np.allclose(h.h(np.array([-4.0, 2.0])), [-2.0, 1.0])
    assert len(h.seams) == 1


@settings(max_examples=60, deadline=None)
@given(st.sampled_from(["ex6", "parabola", "ldm22", "ldm33"]), st.integers(0, 10_000))
def test_h_of_fh_recovers_f(name, seed):
    g = germ(name)
    h = catalog_homeo("cube_inv") if name == "ex6" else catalog_homeo("sqrt_sign") if name == "parabola" else parity_homeo_for(g)
    fh = conic_modify(g, h)
    x = np.random.default_rng(seed).uniform(-0.4, 0.4, (16, 3))
    y = g.eval(x)
    # stay off the seams, where only a one-sided evaluation is defined
    keep = np.min(np.abs(y), axis=1) > 1e-9
    assert np.allclose(h.h(fh.eval(x[keep])), y[keep], atol=1e-12, rtol=1e-9)


def test_conic_modify_domain_check():
    g = germ("ldm22")
    with pytest.raises(DomainError):
        conic_modify(g, catalog_homeo("psi_exp"), eps=EPS)
    with pytest.raises(ValueError):
        conic_modify(germ("nondreg4"), catalog_homeo("identity"))


def test_xi_h_identity_is_radial_projection():
    h = catalog_homeo("identity", eta=0.3)
    y = np.array([[0.1, 0.2], [-0.5, 0.05]])
    assert np.allclose(xi_h(h, y), 0.3 * y / np.linalg.norm(y, axis=1, keepdims=True))
    with pytest.raises(DomainError):
        xi_h(h, np.zeros(2))


def test_xi_h_lands_on_image_of_sphere():
    h = catalog_homeo("cube", eta=0.5)
    y = np.random.default_rng(1).uniform(-1, 1, (50, 2))
    z = xi_h(h, y)
    assert np.allclose(np.linalg.norm(h.h_inv(z), axis=1), 0.5)


def test_pullback_on_seam():
    h = catalog_homeo("sqrt_sign")
    out = pullback(h, np.array([[0.0, 0.5], [1.0, 1.0]]))
    assert np.allclose(out, [[0.0, 1.0], [1.0, 2.0]])


def test_fit_ray():
    d, res = fit_ray(np.array([[1.0, 1.0], [2.0, 2.0], [0.5, 0.5]]))
    assert np.allclose(d, [2**-0.5, 2**-0.5])
    assert res <= 1e-15
    _, res = fit_ray(np.array([[1.0, 0.0], [-1.0, 0.0]]))
    assert res == pytest.approx(1.0)


def test_homeo_parsing_and_names():
    h = homeo_from_source("homeo 2 { fwd { a = x1; b = root(x2, 3); } inv { a = x1; b = x2^3; } eta = 0.2; }")
    assert h.eta == 0.2
    assert np.allclose(h.h_inv(np.array([1.0, 2.0])), [1.0, 8.0])
    assert "parity(p,q)" in HOMEO_NAMES
    with pytest.raises(UnknownName):
        catalog_homeo("nope")
    with pytest.raises(ValueError):
        parity_homeo(1, 2)


def test_parity_case_labels():
    labels = {pq: parity_homeo(*pq).notes[0] for pq in PARITY_CASES}
    assert labels == {(3, 3): "case 1", (2, 3): "case 2", (3, 2): "case 3", (2, 2): "case 4"}


@pytest.mark.parametrize("case", ["ex6", "parabola", "psi", "ldm22_id", "ldm33", "ldm23", "ldm32", "ldm22"])
def test_linearizations_pass(case):
    lin = linearization(case)
    assert lin.passed
    assert lin.rays
    for r in lin.rays:
        assert r["residual"] < 1e-4 * lin.eta


def test_parabola_rays_are_diagonals():
    lin = linearization("parabola")
    angles = sorted(round(math.degrees(math.atan2(r["direction"][1], r["direction"][0])), 6) for r in lin.rays)
    assert angles == [45.0, 135.0]


def test_identity_is_not_a_linearization_of_parabola():
    g = germ("parabola")
    lin = is_linearization(g, catalog_homeo("identity"), cfg_for(g), model("parabola"))
    assert lin.verdict == "fail"


@pytest.mark.parametrize("case", ["ex6", "parabola", "psi"])
def test_d_h_regular_catalog(case):
    rep = dhreg(case)
    assert rep.verdict == "pass", rep.to_dict()
    assert rep.parts["rays"].verdict == rep.parts["submersion"].verdict


@pytest.mark.parametrize("case", ["ldm" + "".join(map(str, pq)) for pq in PARITY_CASES])
def test_d_h_regular_parity(case):
    rep = dhreg(case)
    assert rep.verdict == "pass"


def test_d_h_regular_requires_compatibility_set():
    g = parse("map 3 -> 2 { u = x1 + x2; v = x1^2 + x2^2 + x3^3; }")
    with pytest.raises(NoDiscriminant):
        d_h_regular(g, catalog_homeo("identity"), cfg_for(g))
