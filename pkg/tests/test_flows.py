from __future__ import annotations

import math

import numpy as np
import pytest
import sympy as sp
from hypothesis import given, strategies as st
from numpy.testing import assert_allclose

from robinshape import disk_spectral as ds
from robinshape import flows
from robinshape.ball import BallProblem, beta_thresholds, mode_second_variation
from robinshape.errors import ConfigurationError, GeometryError
from robinshape.sources import RadialSource

TRANS = flows.PerturbationSpec.translation((1.0, 0.0))
STAR2 = flows.PerturbationSpec.star_mode(2, 1.0)
ONE = RadialSource.constant(1.0)
MID = ds.SpectralConfig(32, 128)


# -- perturbed domains ------------------------------------------------------------------

def test_translated_disk():
    dom = flows.perturbed_domain(TRANS, 0.1)
    assert dom.center == (0.1, 0.0)
    assert dom.area == math.pi


def test_star_mode_scale_and_area():
    dom = flows.perturbed_domain(STAR2, 0.1)
    scale = float(dom.rho(np.array([np.pi / 4]))[0])  # cos 2theta = 0 there
    assert_allclose(scale, 1.005 ** -0.5, rtol=1e-14)
    assert_allclose(scale, 0.997509, atol=1e-6)
    th = np.linspace(0, 2 * np.pi, 4096, endpoint=False)
    assert abs(np.pi * np.mean(dom.rho(th) ** 2) - math.pi) <= 1e-12


@pytest.mark.parametrize("spec", [TRANS, STAR2, flows.PerturbationSpec.star_mode(5, 0.3)])
def test_zero_parameter_is_identity(spec):
    dom = flows.perturbed_domain(spec, 0.0, 1.7)
    th = np.linspace(0, 2 * np.pi, 17)
    assert_allclose(dom.rho(th), 1.7, rtol=0, atol=0)
    assert tuple(dom.center) == (0.0, 0.0)


def test_star_mode_too_large():
    with pytest.raises(GeometryError):
        flows.perturbed_domain(STAR2, 1.0)


def test_bad_specs():
    with pytest.raises(ConfigurationError):
        flows.PerturbationSpec.translation((0.0, 0.0))
    with pytest.raises(ConfigurationError):
        flows.PerturbationSpec.star_mode(0)
    with pytest.raises(ConfigurationError):
        flows.PerturbationSpec("spin")


def test_velocity_has_zero_mean_symbolically():
    th, a, R, d1, d2 = sp.symbols("theta a R d1 d2", real=True)
    k = sp.Symbol("k", integer=True, positive=True)
    trans = sp.integrate((d1 * sp.cos(th) + d2 * sp.sin(th)) * R, (th, 0, 2 * sp.pi))
    star = sp.integrate(R * a * sp.cos(k * th) * R, (th, 0, 2 * sp.pi))
    assert sp.simplify(trans) == 0
    assert sp.simplify(star) == 0


def test_star_area_exact_symbolically():
    th, t, a, R = sp.symbols("theta t a R", positive=True)
    for kk in (1, 2, 3, 6):
        s = (1 + t**2 * a**2 / 2) ** sp.Rational(-1, 2)
        rho = s * R * (1 + t * a * sp.cos(kk * th))
        area = sp.integrate(rho**2 / 2, (th, 0, 2 * sp.pi))
        assert sp.simplify(area - sp.pi * R**2) == 0


@given(st.sampled_from(["translation", "star-mode"]), st.integers(1, 8),
       st.floats(0.1, 2.0), st.floats(-np.pi, np.pi))
def test_velocity_zero_mean_numerically(kind, k, R, phi):
    spec = (flows.PerturbationSpec.translation((math.cos(phi), math.sin(phi))) if kind == "translation"
            else flows.PerturbationSpec.star_mode(k, 0.7))
    th = np.linspace(0, 2 * np.pi, 64, endpoint=False)
    assert abs(np.mean(spec.zeta(th, R))) <= 1e-14
    assert_allclose(2 * np.pi * R * np.mean(spec.zeta(th, R) ** 2), spec.zeta_norm_sq(R), rtol=1e-12)


# -- energies along paths ---------------------------------------------------------------------

def test_constant_source_translation_is_flat():
    s = flows.energy_along_flow(BallProblem.robin(2, 1.0, 1.0), ONE, TRANS, t=0.05, cfg=MID)
    assert abs(s.d2_richardson) <= 1e-6
    assert abs(s.d1_richardson) <= 1e-8


def test_translation_sign_matches_mode_one():
    p = BallProblem.robin(2, 1.0, 0.5)
    g = RadialSource.gaussian(0.3)
    s = flows.energy_along_flow(p, g, TRANS, cfg=MID)
    Q1 = mode_second_variation(p, g, 1).Q_l
    assert s.d2_richardson < 0 and Q1 < 0
    assert_allclose(s.d2_richardson, Q1 * math.pi, rtol=1e-4)


def test_star_mode_second_variation():
    p = BallProblem.robin(2, 1.0, 1.0)
    cmp = flows.second_variation_check(p, ONE, STAR2)
    assert cmp.numeric > 0
    assert_allclose(cmp.analytic, 0.5416666666666666 * math.pi, rtol=1e-12)
    assert cmp.rel_error <= 0.02


@pytest.mark.parametrize("src,spec,tol", [
    (ONE, TRANS, 1e-8),
    (RadialSource.gaussian(0.3), STAR2, 1e-5),
    (ONE, STAR2, 1e-5),
])
def test_first_variation_vanishes(src, spec, tol):
    p = BallProblem.robin(2, 1.0, 1.0)
    assert abs(flows.first_variation_check(p, src, spec, h=0.04)) <= tol


@pytest.mark.parametrize("beta,sign", [(0.5, -1), (2.0, 1)])
def test_two_sided_window(beta, sign):
    p = BallProblem.robin(2, 1.0, beta)
    s = flows.energy_along_flow(p, RadialSource.gaussian(0.1), TRANS, cfg=ds.SpectralConfig(64, 512))
    assert np.sign(s.d2_richardson) == sign
    assert abs(s.d2_richardson) > 3 * s.d2_error


def test_window_midpoint_is_unstable():
    g = RadialSource.gaussian(0.3)
    th = beta_thresholds(g, 2, 1.0)
    mid = 0.5 * (th.beta1 + th.beta2)
    s = flows.energy_along_flow(BallProblem.robin(2, 1.0, mid), g, TRANS, cfg=MID)
    assert s.d2_richardson < 0


@pytest.mark.parametrize("beta", [0.3, 0.8, 3.0, 10.0])
@pytest.mark.parametrize("delta", [0.2, 0.5])
def test_sign_agreement_translation(beta, delta):
    p = BallProblem.robin(2, 1.0, beta)
    g = RadialSource.gaussian(delta)
    s = flows.energy_along_flow(p, g, TRANS, cfg=MID)
    Q1 = mode_second_variation(p, g, 1).Q_l
    if abs(Q1 * math.pi) > 3 * s.d2_error:
        assert np.sign(s.d2_richardson) == np.sign(Q1)


def test_dirichlet_translation_is_stable():
    p = BallProblem.dirichlet(2, 1.0)
    s = flows.energy_along_flow(p, RadialSource.gaussian(0.3), TRANS, cfg=MID)
    assert s.d2_richardson > 0


def test_flow_requires_planar_problem():
    with pytest.raises(ConfigurationError):
        flows.energy_along_flow(BallProblem.robin(3, 1.0, 1.0), ONE.with_dimension(3), TRANS)


def test_parallel_stencil_is_deterministic():
    p = BallProblem.robin(2, 1.0, 1.0)
    a = flows.energy_along_flow(p, ONE, STAR2, h=0.1)
    b = flows.energy_along_flow(p, ONE, STAR2, h=0.1, jobs=3)
    assert a.J == b.J


def test_flow_sample_csv(tmp_path):
    s = flows.energy_along_flow(BallProblem.robin(2, 1.0, 1.0), RadialSource.gaussian(0.5), TRANS, cfg=MID)
    path = tmp_path / "flow.csv"
    s.to_csv(path)
    lines = path.read_text().splitlines()
    assert lines[0] == "t,J"
    rows = np.array([[float(v) for v in ln.split(",")] for ln in lines[1:6]])
    assert_allclose(rows[:, 0], [-0.02, -0.01, 0.0, 0.01, 0.02])
    assert_allclose(rows[:, 1], s.J, rtol=0)
    import json
    footer = json.loads(lines[6][2:])
    assert footer["d2_richardson"] == s.d2_richardson
    assert footer["extrapolation_order"] == 4
