"""Shared germs and cached expensive reports.

The regularity and flow runs take seconds each, so module tests and the
acceptance suite share one cached result per case.
"""

import tempfile
from functools import lru_cache
from pathlib import Path

import numpy as np
import pytest

from milnorlab.conic_modification import catalog_homeo, d_h_regular, is_linearization, parity_homeo_for
from milnorlab.critical_locus import BallConfig, Sampler, discriminant_sample
from milnorlab.fibration_flow import tau_equivalence_probe
from milnorlab.germ_model import builtin_catalog, builtin_ldm, builtin_psi, linear_projection
from milnorlab.regularity_checks import d_regular

LAMBDAS = ((2, 1), (-1, 1), (0, -1))
EPS = 0.5
PARITY_CASES = ((3, 3), (2, 3), (3, 2), (2, 2))
DIAGONAL_DIRS = np.array([[np.cos(np.pi / 4), np.sin(np.pi / 4)], [np.cos(3 * np.pi / 4), np.sin(3 * np.pi / 4)]])


def germ(name):
    if name == "ldm22":
        return builtin_ldm(2, 2, LAMBDAS)
    if name.startswith("ldm"):
        return builtin_ldm(int(name[3]), int(name[4]), LAMBDAS)
    if name == "lin":
        return linear_projection(3, 2)
    if name.startswith("psi"):
        return builtin_psi(int(name[3:] or 3))
    return builtin_catalog(name)


def cfg_for(g, eps=EPS):
    return BallConfig.for_germ(g, eps)


@lru_cache(maxsize=None)
def model(name):
    g = germ(name)
    return discriminant_sample(g, cfg_for(g), Sampler(count=1000, seed=0))


@lru_cache(maxsize=None)
def dreg(name):
    g = germ(name)
    return d_regular(g, cfg_for(g), model=model(name), seed=0)


def _homeo_case(case):
    if case == "ex6":
        return "ex6", catalog_homeo("cube_inv"), ()
    if case == "parabola":
        return "parabola", catalog_homeo("sqrt_sign"), DIAGONAL_DIRS
    if case == "psi":
        return "psi3", catalog_homeo("psi_exp"), ()
    if case == "ldm22_id":
        return "ldm22", catalog_homeo("identity"), ()
    p, q = int(case[3]), int(case[4])
    name = f"ldm{p}{q}"
    return name, parity_homeo_for(germ(name)), ()


@lru_cache(maxsize=None)
def linearization(case):
    name, h, _ = _homeo_case(case)
    g = germ(name)
    return is_linearization(g, h, cfg_for(g), model(name))


@lru_cache(maxsize=None)
def dhreg(case):
    name, h, excluded = _homeo_case(case)
    g = germ(name)
    return d_h_regular(g, h, cfg_for(g), excluded_directions=excluded, model=model(name), linearization=linearization(case))


@lru_cache(maxsize=None)
def tau_ldm22():
    g = germ("ldm22")
    return tau_equivalence_probe(g, cfg_for(g), samples=100, seed=0, regularity=dreg("ldm22"), model=model("ldm22"))


@lru_cache(maxsize=None)
def cli_run(*args, out=False):
    """Run the command line once per argument tuple; returns (exit code, stdout, output dir)."""
    from click.testing import CliRunner

    from milnorlab.cli import cli

    argv = list(args)
    outdir = None
    if out:
        outdir = Path(tempfile.mkdtemp(prefix="milnorlab-"))
        argv += ["--out", str(outdir)]
    res = CliRunner().invoke(cli, argv)
    if res.exception is not None and not isinstance(res.exception, SystemExit):
        raise res.exception
    return res.exit_code, res.output, outdir


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# acceptance lines, printed once at the end of the run
ACCEPTANCE = {}


def record(criterion, ok, detail):
    line = f"criterion {criterion}: {'PASS' if ok else 'FAIL'}  {detail}"
    ACCEPTANCE[criterion] = line
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance")
        for key in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[key])
