from __future__ import annotations

import math

import numpy as np
import pytest
from numpy.testing import assert_allclose
from scipy.spatial import cKDTree

from robinshape import fem2d
from robinshape.ball import BallProblem, radial_profile, stationarity_constant
from robinshape.errors import ConfigurationError, GeometryError
from robinshape.sources import RadialSource

ONE = lambda x: np.ones(x.shape[:-1])
ZERO = lambda x: np.zeros(x.shape[:-1])
DISK = fem2d.StarDomain.disk(1.0)
ROBIN1 = fem2d.BoundaryCondition.robin(1.0)
DIRICHLET = fem2d.BoundaryCondition.dirichlet()


@pytest.fixture(scope="module")
def disk_mesh_002():
    return fem2d.build_star_mesh(DISK, 0.02)


# -- domains ----------------------------------------------------------------------------

def test_fourier_area_is_preserved():
    dom = fem2d.StarDomain.fourier(1.0, {2: 0.3, 5: -0.1}, {3: 0.2})
    t = np.linspace(0, 2 * np.pi, 20000, endpoint=False)
    assert abs(dom.area - math.pi) <= 1e-10
    assert abs(0.5 * np.mean(dom.rho(t) ** 2) * 2 * np.pi - math.pi) <= 1e-10


def test_fourier_derivatives_match_finite_differences():
    dom = fem2d.StarDomain.fourier(1.3, {2: 0.2, 4: 0.05}, {3: -0.1})
    t = np.linspace(0, 2 * np.pi, 13)
    e = 1e-5
    assert_allclose(dom.drho(t), (dom.rho(t + e) - dom.rho(t - e)) / (2 * e), atol=1e-8)
    assert_allclose(dom.ddrho(t), (dom.drho(t + e) - dom.drho(t - e)) / (2 * e), atol=1e-7)


def test_curvature_of_circle_and_ellipse():
    assert_allclose(fem2d.StarDomain.disk(2.0).curvature(np.linspace(0, 6, 5)), 0.5)
    a, b = 1.2, 1 / 1.2
    ell = fem2d.StarDomain.ellipse(a, b)
    # vertex curvatures a/b^2 and b/a^2
    assert_allclose(ell.curvature(np.array([0.0, np.pi / 2])), [a / b**2, b / a**2], rtol=1e-12)


def test_non_star_domain_rejected():
    with pytest.raises(GeometryError):
        fem2d.StarDomain.fourier(1.0, {2: 1.5}, preserve_area=False)


# -- meshes -------------------------------------------------------------------------------

def test_disk_mesh_area():
    m = fem2d.build_star_mesh(DISK, 0.1)
    assert abs(m.area() - math.pi) <= 0.02


@pytest.mark.parametrize("dom", [DISK, fem2d.StarDomain.fourier(1.0, {2: 0.1}),
                                 fem2d.StarDomain.ellipse(1.3, 1 / 1.3)])
def test_mesh_quality(dom):
    h = 0.05
    m = fem2d.build_star_mesh(dom, h)
    assert np.all(m.signed_areas() > 0)
    assert m.min_angle() >= 20.0
    V, E, T = m.n_vertices, len(m.edges()), len(m.triangles)
    assert V - E + T == 1
    bv = m.vertices[m.boundary_vertices()]
    th = np.arctan2(bv[:, 1], bv[:, 0])
    assert_allclose(np.hypot(bv[:, 0], bv[:, 1]), dom.rho(th), atol=1e-12)
    # chord midpoints stay within h^2/R of the curve
    mid = 0.5 * (m.vertices[m.boundary_edges[:, 0]] + m.vertices[m.boundary_edges[:, 1]])
    dev = np.abs(np.hypot(mid[:, 0], mid[:, 1]) - dom.rho(np.arctan2(mid[:, 1], mid[:, 0])))
    assert dev.max() <= h * h / dom.R


def test_mesh_is_deterministic():
    a = fem2d.build_star_mesh(DISK, 0.1)
    b = fem2d.build_star_mesh(DISK, 0.1)
    assert np.array_equal(a.vertices, b.vertices) and np.array_equal(a.triangles, b.triangles)


def test_mesh_rejects_coarse_h():
    with pytest.raises(ConfigurationError):
        fem2d.build_star_mesh(DISK, 0.3)


def test_mesh_roundtrip(tmp_path):
    m = fem2d.build_star_mesh(DISK, 0.2 / 1.5)
    path = tmp_path / "mesh.txt"
    m.save(path)
    header = path.read_text().splitlines()[0].split()
    assert [int(v) for v in header] == [m.n_vertices, len(m.edges()), len(m.triangles)]
    again = fem2d.Mesh.load(path)
    assert np.array_equal(again.vertices, m.vertices)
    assert np.array_equal(again.triangles, m.triangles)
    assert len(again.boundary_edges) == len(m.boundary_edges)


# -- solves ---------------------------------------------------------------------------------

def test_robin_disk_energy(disk_mesh_002):
    fld = fem2d.assemble_solve(disk_mesh_002, ROBIN1, ONE)
    J = -5 * math.pi / 16
    assert abs(fem2d.energy(fld) - J) <= 1e-3 * abs(J)
    assert abs(fem2d.average_temperature(fld) - 0.625) <= 1e-3


def test_dirichlet_disk_energy(disk_mesh_002):
    fld = fem2d.assemble_solve(disk_mesh_002, DIRICHLET, ONE)
    assert abs(fem2d.energy(fld) + math.pi / 16) <= 1e-3 * math.pi / 16
    assert np.all(fld.u[np.unique(disk_mesh_002.boundary_edges)] == 0.0)


def test_zero_source_gives_zero_field():
    m = fem2d.build_star_mesh(DISK, 0.1)
    fld = fem2d.assemble_solve(m, ROBIN1, ZERO)
    assert np.all(fld.u == 0.0)
    assert fem2d.energy(fld) == 0.0 and fem2d.total_heat(fld) == 0.0
    assert fem2d.average_temperature(fld) == 0.0


def test_discrete_energy_identity():
    g = RadialSource.gaussian(0.5)
    for h in (0.08, 0.04):
        fld = fem2d.assemble_solve(fem2d.build_star_mesh(fem2d.StarDomain.ellipse(1.2, 1 / 1.2), h),
                                   ROBIN1, g.value_at)
        J = fem2d.energy(fld)
        assert abs(J + 0.5 * fem2d.total_heat(fld)) <= h * h * abs(J)


def test_ellipse_torsion_exceeds_disk():
    ell = fem2d.StarDomain.ellipse(1.2, 1 / 1.2)
    fld = fem2d.assemble_solve(fem2d.build_star_mesh(ell, 0.02), DIRICHLET, ONE)
    a, b = 1.2, 1 / 1.2
    exact = -0.5 * math.pi * a * b / (4 * (1 / a**2 + 1 / b**2))
    assert_allclose(fem2d.energy(fld), exact, rtol=1e-3)
    assert fem2d.energy(fld) > -math.pi / 16


def test_galerkin_monotone_and_second_order():
    J = -5 * math.pi / 16
    hs = [0.08, 0.04, 0.02]
    Js = [fem2d.energy(fem2d.assemble_solve(fem2d.build_star_mesh(DISK, h), ROBIN1, ONE)) for h in hs]
    assert Js[0] > Js[1] > Js[2] > J
    slope = np.polyfit(np.log(hs), np.log(np.array(Js) - J), 1)[0]
    assert abs(slope - 2) <= 0.3


def test_positivity_and_mirror_symmetry():
    g = RadialSource.gaussian(0.5)
    ell = fem2d.StarDomain.ellipse(1.3, 1 / 1.3)
    m = fem2d.build_star_mesh(ell, 0.05)
    fld = fem2d.assemble_solve(m, ROBIN1, g.value_at)
    assert np.all(fld.u > 0)
    tree = cKDTree(m.vertices)
    d, j = tree.query(m.vertices * np.array([1.0, -1.0]))
    assert d.max() < 1e-12
    assert_allclose(fld.u[j], fld.u, rtol=1e-10)


def test_evaluate_reproduces_nodes():
    m = fem2d.build_star_mesh(DISK, 0.1)
    fld = fem2d.assemble_solve(m, ROBIN1, ONE)
    pts = m.vertices[::7]
    assert_allclose(fld.evaluate(pts), fld.u[::7], atol=1e-12)


def test_field_export(tmp_path):
    m = fem2d.build_star_mesh(DISK, 0.2 / 1.5)
    fld = fem2d.assemble_solve(m, ROBIN1, ONE)
    path = tmp_path / "u.xyu"
    fld.to_xyu(path)
    rows = np.loadtxt(path)
    assert rows.shape == (m.n_vertices, 3)
    assert_allclose(rows[:, 2], fld.u)


def test_nonpositive_robin_rejected():
    with pytest.raises(ConfigurationError):
        fem2d.BoundaryCondition.robin(0.0)
    m = fem2d.build_star_mesh(DISK, 0.1)
    with pytest.raises(ConfigurationError):
        fem2d.assemble_solve(m, fem2d.BoundaryCondition.robin_variable(lambda t: np.cos(t)), ONE)


# -- stationarity ----------------------------------------------------------------------------

def test_stationarity_on_disk(disk_mesh_002):
    fld = fem2d.assemble_solve(disk_mesh_002, ROBIN1, ONE)
    gmax, gmin, spread = fem2d.stationarity_residual(fld, DISK)
    oracle = stationarity_constant(BallProblem.robin(2, 1.0, 1.0), RadialSource.constant(1.0))
    assert spread <= 0.05
    assert abs(0.5 * (gmax + gmin) - oracle) <= 0.01


def test_stationarity_zero_source():
    m = fem2d.build_star_mesh(DISK, 0.1)
    assert fem2d.stationarity_residual(fem2d.assemble_solve(m, ROBIN1, ZERO), DISK) == (0.0, 0.0, 0.0)


def test_stationarity_fails_off_the_disk():
    dom = fem2d.StarDomain.fourier(1.0, {2: 0.2})
    spreads = []
    for h in (0.04, 0.02):
        fld = fem2d.assemble_solve(fem2d.build_star_mesh(dom, h), ROBIN1, ONE)
        spreads.append(fem2d.stationarity_residual(fld, dom)[2])
    assert min(spreads) > 0.01
    assert abs(spreads[0] - spreads[1]) < 0.1 * spreads[1]


def test_stationarity_needs_constant_robin():
    m = fem2d.build_star_mesh(DISK, 0.1)
    with pytest.raises(ConfigurationError):
        fem2d.stationarity_residual(fem2d.assemble_solve(m, DIRICHLET, ONE), DISK)


# -- insulation ----------------------------------------------------------------------------------

def test_constant_insulation_is_constant_robin():
    m = fem2d.build_star_mesh(DISK, 0.05)
    mass = 1.0
    ins = fem2d.solve_insulation(m, lambda t: np.full_like(t, mass / (2 * math.pi)), ONE)
    rob = fem2d.assemble_solve(m, fem2d.BoundaryCondition.robin(2 * math.pi / mass), ONE)
    assert_allclose(ins.u, rob.u, rtol=1e-10)


def test_insulation_heat_content_matches_radial_oracle():
    m = fem2d.build_star_mesh(DISK, 0.02)
    ins = fem2d.solve_insulation(m, lambda t: np.full_like(t, 1 / (2 * math.pi)), ONE)
    x, w = np.polynomial.legendre.leggauss(24)
    r = 0.5 * (x + 1)
    prof = radial_profile(BallProblem.robin(2, 1.0, 2 * math.pi), RadialSource.constant(1.0), r)
    oracle = 2 * math.pi * np.sum(0.5 * w * prof[:, 1] * r)
    assert_allclose(fem2d.integral(ins), oracle, rtol=1e-3)


def test_nonuniform_insulation_loses_heat():
    g = RadialSource.gaussian(0.5)
    m = fem2d.build_star_mesh(DISK, 0.04)
    h0 = 1 / (2 * math.pi)
    const = fem2d.integral(fem2d.solve_insulation(m, lambda t: np.full_like(t, h0), g.value_at))
    wavy = fem2d.integral(fem2d.solve_insulation(m, lambda t: h0 * (1 + 0.5 * np.cos(2 * t)), g.value_at))
    assert wavy < const


def test_insulation_below_floor_rejected():
    m = fem2d.build_star_mesh(DISK, 0.1)
    with pytest.raises(ConfigurationError):
        fem2d.solve_insulation(m, lambda t: 0.1 * (1 + np.cos(t)), ONE, h_min=1e-3)


def test_linear_solve_backward_error():
    m = fem2d.build_star_mesh(fem2d.StarDomain.ellipse(1.3, 1 / 1.3), 0.01)
    fld = fem2d.assemble_solve(m, ROBIN1, RadialSource.gaussian(0.5).value_at)
    A = (fld.stiffness + fld.boundary_mass).tocsr()
    r = fld.load - A @ fld.u
    back = np.abs(r).max() / (abs(A).sum(axis=1).max() * np.abs(fld.u).max() + np.abs(fld.load).max())
    assert back <= fem2d.RESIDUAL_TOL
    assert fld.residual <= 1e-10
