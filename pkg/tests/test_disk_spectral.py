from __future__ import annotations

import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from numpy.testing import assert_allclose

from robinshape import disk_spectral as ds
from robinshape.sources import RadialSource

SMALL = ds.SpectralConfig(K=16, M=64)
MID = ds.SpectralConfig(K=32, M=128)
ONE = RadialSource.constant(1.0)
ZERO = lambda x: np.zeros(x.shape[:-1])


def polar(r, th):
    return np.stack([r * np.cos(th), r * np.sin(th)], axis=-1)


def test_config_validation():
    with pytest.raises(ValueError):
        ds.SpectralConfig(K=0)
    with pytest.raises(ValueError):
        ds.SpectralConfig(M=8)


def test_robin_constant_source_exact():
    fld = ds.solve_disk(1.0, 1.0, ONE.value_at, SMALL)
    r = np.linspace(0, 1, 7)
    th = np.linspace(0, 2 * np.pi, 7)
    Rg, Tg = np.meshgrid(r, th)
    assert_allclose(fld.evaluate(polar(Rg, Tg)), 0.75 - Rg**2 / 4, atol=1e-12)
    assert np.max(np.abs(fld.coeffs[:, 1:])) <= 1e-12


def test_dirichlet_constant_source_exact():
    fld = ds.solve_disk(1.0, None, ONE.value_at, SMALL)
    r = np.linspace(0, 1, 9)
    assert_allclose(fld.evaluate(polar(r, 0.3 + 0 * r)), (1 - r**2) / 4, atol=1e-12)


def test_energy_examples():
    assert_allclose(ds.energy(ds.solve_disk(1.0, 1.0, ONE.value_at, SMALL)), -5 * math.pi / 16, rtol=1e-12)
    assert_allclose(ds.energy(ds.solve_disk(1.0, None, ONE.value_at, SMALL)), -math.pi / 16, rtol=1e-12)
    assert ds.energy(ds.solve_disk(1.0, 1.0, ZERO, SMALL)) == 0.0


def test_norms_examples():
    fld = ds.solve_disk(1.0, 1.0, ONE.value_at, SMALL)
    assert_allclose(ds.linf_norm(fld), 0.75, rtol=1e-10)
    assert_allclose(ds.average(fld), 0.625, rtol=1e-10)
    assert_allclose(ds.total_heat(fld), 5 * math.pi / 8, rtol=1e-10)
    z = ds.solve_disk(1.0, 1.0, ZERO, SMALL)
    assert ds.linf_norm(z) == 0.0 and ds.average(z) == 0.0 and ds.total_heat(z) == 0.0


def test_shifted_gaussian_breaks_symmetry():
    g = RadialSource.gaussian(0.5)
    centred = ds.solve_disk(1.0, 1.0, g.value_at, MID)
    shifted = ds.solve_disk(1.0, 1.0, ds.shifted_source(g, (0.2, 0.0)), MID)
    assert np.max(np.abs(shifted.mode(1))) > 1e-3
    assert np.max(np.abs(centred.mode(1))) < 1e-13


def test_small_shift_heat_loss_matches_second_variation():
    # beta = 1 is just stable for delta = 0.5: int f u drops by J''(0) t^2 for small t
    from robinshape.ball import BallProblem, mode_second_variation

    g = RadialSource.gaussian(0.5)
    J2 = mode_second_variation(BallProblem.robin(2, 1.0, 1.0), g, 1).Q_l * math.pi
    base = ds.total_heat(ds.solve_disk(1.0, 1.0, g.value_at, MID))
    t = 0.02
    drop = base - ds.total_heat(ds.solve_disk(1.0, 1.0, ds.shifted_source(g, (t, 0.0)), MID))
    assert J2 > 0
    assert_allclose(drop, J2 * t**2, rtol=0.1)


def test_large_shift_gains_heat_near_marginal_beta():
    # the quadratic term is tiny here, so quartic terms win by t = 0.2
    g = RadialSource.gaussian(0.5)
    base = ds.total_heat(ds.solve_disk(1.0, 1.0, g.value_at, MID))
    gain = ds.total_heat(ds.solve_disk(1.0, 1.0, ds.shifted_source(g, (0.2, 0.0)), MID)) - base
    assert gain > 1e-5


def test_shift_loses_heat_when_clearly_stable():
    g = RadialSource.gaussian(0.5)
    base = ds.total_heat(ds.solve_disk(1.0, 2.0, g.value_at, MID))
    for t in (0.05, 0.2):
        assert ds.total_heat(ds.solve_disk(1.0, 2.0, ds.shifted_source(g, (t, 0.0)), MID)) < base


def test_energy_identity_at_defaults():
    g = RadialSource.gaussian(0.3)
    for beta in (0.5, None):
        fld = ds.solve_disk(1.0, beta, ds.shifted_source(g, (0.25, -0.1)))
        J = ds.energy(fld)
        assert abs(J + 0.5 * ds.total_heat(fld)) <= 1e-9 * abs(J)


def test_spectral_convergence_under_doubling():
    g = RadialSource.gaussian(0.5)
    src = ds.shifted_source(g, (0.3, 0.1))
    J1 = ds.energy(ds.solve_disk(1.0, 1.0, src, ds.SpectralConfig(K=32, M=128)))
    J2 = ds.energy(ds.solve_disk(1.0, 1.0, src, ds.SpectralConfig(K=64, M=256)))
    assert abs(J1 - J2) <= 1e-8 * abs(J2)


@settings(max_examples=8)
@given(st.floats(0, 2 * np.pi))
def test_rotation_equivariance(angle):
    g = RadialSource.gaussian(0.5)
    base = ds.solve_disk(1.0, 1.0, ds.shifted_source(g, (0.25, 0.0)), MID)
    rot = ds.solve_disk(1.0, 1.0, ds.shifted_source(g, (0.25 * math.cos(angle), 0.25 * math.sin(angle))), MID)
    assert_allclose(ds.energy(rot), ds.energy(base), rtol=1e-10)
    assert_allclose(ds.average(rot), ds.average(base), rtol=1e-10)
    assert_allclose(ds.linf_norm(rot), ds.linf_norm(base), rtol=1e-10)


def test_maximum_principle():
    g = RadialSource.gaussian(0.4)
    fld = ds.solve_disk(1.0, 2.0, ds.shifted_source(g, (0.5, 0.2)), MID)
    r = np.linspace(0, 1, 21)
    th = np.linspace(0, 2 * np.pi, 40, endpoint=False)
    Rg, Tg = np.meshgrid(r, th)
    assert np.all(fld.evaluate(polar(Rg, Tg)) > 0)


def test_boundary_residuals():
    g = RadialSource.gaussian(0.5)
    src = ds.shifted_source(g, (0.3, 0.0))
    rob = ds.solve_disk(1.0, 1.5, src, MID)
    scale = np.max(np.abs(rob.coeffs))
    assert np.all(rob.boundary_residuals() <= 1e-8 * scale)
    dir_ = ds.solve_disk(1.0, None, src, MID)
    assert np.all(dir_.boundary_residuals() <= 1e-12)


def test_real_mean_mode_and_conjugate_modes():
    g = RadialSource.gaussian(0.5)
    fld = ds.solve_disk(1.0, 1.0, ds.shifted_source(g, (0.1, 0.2)), SMALL)
    assert np.max(np.abs(fld.mode(0).imag)) <= 1e-14
    assert_allclose(fld.mode(-3), np.conj(fld.mode(3)))


def test_regularity_at_origin():
    # u_k(r) ~ r^k: the k = 3 mode decays like r^3 towards the centre
    g = RadialSource.gaussian(0.5)
    fld = ds.solve_disk(1.0, 1.0, ds.shifted_source(g, (0.3, 0.0)), MID)
    r = np.array([1e-3, 2e-3])
    V = fld.op.interp_matrix(r, -1) @ fld.coeffs[:, 3]
    assert_allclose(abs(V[1] / V[0]), 8.0, rtol=1e-2)


def test_alias_warning():
    narrow = RadialSource.gaussian(0.05)
    with pytest.warns(RuntimeWarning):
        ds.solve_disk(1.0, 1.0, ds.shifted_source(narrow, (0.6, 0.0)), ds.SpectralConfig(K=4, M=64))
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        ds.solve_disk(1.0, 1.0, ONE.value_at, SMALL)


def test_evaluate_outside_rejected():
    fld = ds.solve_disk(1.0, 1.0, ONE.value_at, SMALL)
    with pytest.raises(ValueError):
        fld.evaluate(np.array([[1.5, 0.0]]))


def test_csv_export(tmp_path):
    fld = ds.solve_disk(1.0, 1.0, ONE.value_at, SMALL)
    path = tmp_path / "u.csv"
    fld.to_csv(path, nr=5, ntheta=4)
    rows = path.read_text().strip().splitlines()
    assert rows[0] == "r,theta,u" and len(rows) == 21
    r, th, u = (float(v) for v in rows[-1].split(","))
    assert_allclose(u, 0.75 - r**2 / 4, atol=1e-12)


def test_radius_scaling():
    # u_R(x) = R^2 u_1(x/R) for f = 1 with beta scaled as beta/R
    a = ds.energy(ds.solve_disk(2.0, 0.5, ONE.value_at, SMALL))
    b = ds.energy(ds.solve_disk(1.0, 1.0, ONE.value_at, SMALL))
    assert_allclose(a, 2.0**4 * b, rtol=1e-12)
