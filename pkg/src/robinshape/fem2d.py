"""P1 finite elements on star-shaped planar domains.

Domains are described by a boundary radius ``rho(theta)`` about a centre.
Meshes are structured: ring ``i`` of ``Nr`` carries ``8 i`` vertices placed at
``centre + (i/Nr) rho(theta) e(theta)``, and neighbouring rings are stitched
sector by sector (eight 45-degree sectors, each a uniformly subdivided
triangle). Boundary vertices therefore lie exactly on the curve, the
topology is independent of ``rho``, and the mesh is symmetric under
quarter turns and reflections in the axes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy import sparse
from scipy.sparse import linalg as splinalg
from scipy.spatial import cKDTree

from .errors import ConfigurationError, GeometryError, SolverError

SourceAt = Callable[[np.ndarray], np.ndarray]

_N_AREA = 4096
RESIDUAL_TOL = 1e-12  # normwise backward error required of every linear solve


@dataclass(frozen=True)
class StarDomain:
    """Star-shaped domain ``{centre + s e(theta): 0 <= s < rho(theta)}``.

    ``rho``, ``drho`` and ``ddrho`` are vectorised callables in ``theta``.
    ``R`` is the radius of the disk of equal area when the domain is
    volume preserving, and the nominal base radius otherwise.
    """

    R: float
    rho: Callable = field(repr=False)
    drho: Callable = field(repr=False)
    ddrho: Callable = field(repr=False)
    center: tuple = (0.0, 0.0)
    label: str = "star"
    exact_area: Optional[float] = None

    # -- constructors ----------------------------------------------------------

    @classmethod
    def disk(cls, R: float = 1.0, center=(0.0, 0.0)) -> "StarDomain":
        R = float(R)
        return cls(R, lambda t: np.full_like(np.asarray(t, dtype=float), R),
                   lambda t: np.zeros_like(np.asarray(t, dtype=float)),
                   lambda t: np.zeros_like(np.asarray(t, dtype=float)),
                   tuple(map(float, center)), "disk", math.pi * R * R)

    @classmethod
    def fourier(cls, R: float, cos_coeffs: dict | None = None, sin_coeffs: dict | None = None,
                preserve_area: bool = True, scale: float = 1.0) -> "StarDomain":
        """``rho = s R (1 + sum_k a_k cos k t + b_k sin k t)``.

        With ``preserve_area`` the scale is ``s = (1 + sum (a_k^2 + b_k^2)/2)^(-1/2)``,
        which makes the area exactly ``pi R^2``.
        """
        a = {int(k): float(v) for k, v in (cos_coeffs or {}).items()}
        b = {int(k): float(v) for k, v in (sin_coeffs or {}).items()}
        if 0 in a or 0 in b:
            raise GeometryError("mode 0 is the scale; pass it through `scale`")
        energy = 0.5 * (sum(v * v for v in a.values()) + sum(v * v for v in b.values()))
        s = 1.0 / math.sqrt(1.0 + energy) if preserve_area else float(scale)
        R = float(R)

        def series(t, d):
            t = np.asarray(t, dtype=float)
            out = np.zeros_like(t) + (1.0 if d == 0 else 0.0)
            for k, v in a.items():
                out = out + v * k**d * _trig(k * t, d, "cos")
            for k, v in b.items():
                out = out + v * k**d * _trig(k * t, d, "sin")
            return s * R * out

        dom = cls(R, lambda t: series(t, 0), lambda t: series(t, 1), lambda t: series(t, 2),
                  (0.0, 0.0), "fourier", math.pi * (s * R) ** 2 * (1.0 + energy))
        dom._check_positive()
        return dom

    @classmethod
    def ellipse(cls, a: float, b: float) -> "StarDomain":
        """Centred ellipse with semi-axes ``a`` (x) and ``b`` (y)."""
        a, b = float(a), float(b)

        def q(t):
            t = np.asarray(t, dtype=float)
            return np.cos(t) ** 2 / a**2 + np.sin(t) ** 2 / b**2

        def dq(t):
            t = np.asarray(t, dtype=float)
            return np.sin(2 * t) * (1 / b**2 - 1 / a**2)

        def ddq(t):
            t = np.asarray(t, dtype=float)
            return 2 * np.cos(2 * t) * (1 / b**2 - 1 / a**2)

        rho = lambda t: q(t) ** -0.5
        drho = lambda t: -0.5 * q(t) ** -1.5 * dq(t)
        ddrho = lambda t: 0.75 * q(t) ** -2.5 * dq(t) ** 2 - 0.5 * q(t) ** -1.5 * ddq(t)
        return cls(math.sqrt(a * b), rho, drho, ddrho, (0.0, 0.0), "ellipse", math.pi * a * b)

    # -- geometry ----------------------------------------------------------------

    def _check_positive(self):
        t = np.linspace(0, 2 * np.pi, _N_AREA, endpoint=False)
        if np.any(self.rho(t) <= 0):
            raise GeometryError("radius function must be positive (domain not star-shaped)")

    @property
    def area(self) -> float:
        if self.exact_area is not None:
            return self.exact_area
        t = np.linspace(0, 2 * np.pi, _N_AREA, endpoint=False)
        return float(0.5 * np.mean(self.rho(t) ** 2) * 2 * np.pi)

    def boundary_point(self, theta) -> np.ndarray:
        t = np.asarray(theta, dtype=float)
        r = self.rho(t)
        return np.stack([self.center[0] + r * np.cos(t), self.center[1] + r * np.sin(t)], axis=-1)

    def curvature(self, theta) -> np.ndarray:
        """Signed curvature from the analytic radius function."""
        r, dr, ddr = self.rho(theta), self.drho(theta), self.ddrho(theta)
        return (r * r + 2 * dr * dr - r * ddr) / (r * r + dr * dr) ** 1.5

    def contains(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        dx = x[..., 0] - self.center[0]
        dy = x[..., 1] - self.center[1]
        return np.hypot(dx, dy) < self.rho(np.arctan2(dy, dx))

    def bounding_box(self) -> tuple[float, float, float, float]:
        t = np.linspace(0, 2 * np.pi, _N_AREA, endpoint=False)
        p = self.boundary_point(t)
        return float(p[:, 0].min()), float(p[:, 0].max()), float(p[:, 1].min()), float(p[:, 1].max())


def _trig(x, d, kind):
    # d-th derivative of cos / sin without the chain-rule factor
    shift = d % 4
    if kind == "cos":
        return [np.cos(x), -np.sin(x), -np.cos(x), np.sin(x)][shift]
    return [np.sin(x), np.cos(x), -np.sin(x), -np.cos(x)][shift]


@dataclass
class Mesh:
    vertices: np.ndarray        # (V, 2)
    triangles: np.ndarray       # (T, 3), counter-clockwise
    boundary_edges: np.ndarray  # (B, 2), counter-clockwise along the boundary
    boundary_theta: np.ndarray  # (B+0,) angle of each boundary vertex, ordered as ring
    h: float
    center: tuple = (0.0, 0.0)

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    def edges(self) -> np.ndarray:
        e = np.concatenate([self.triangles[:, [0, 1]], self.triangles[:, [1, 2]], self.triangles[:, [2, 0]]])
        return np.unique(np.sort(e, axis=1), axis=0)

    def signed_areas(self) -> np.ndarray:
        p = self.vertices[self.triangles]
        return 0.5 * ((p[:, 1, 0] - p[:, 0, 0]) * (p[:, 2, 1] - p[:, 0, 1])
                      - (p[:, 2, 0] - p[:, 0, 0]) * (p[:, 1, 1] - p[:, 0, 1]))

    def area(self) -> float:
        return float(self.signed_areas().sum())

    def min_angle(self) -> float:
        """Smallest interior angle over all triangles, in degrees."""
        p = self.vertices[self.triangles]
        angs = []
        for i in range(3):
            a = p[:, (i + 1) % 3] - p[:, i]
            b = p[:, (i + 2) % 3] - p[:, i]
            cosang = np.sum(a * b, axis=1) / (np.linalg.norm(a, axis=1) * np.linalg.norm(b, axis=1))
            angs.append(np.degrees(np.arccos(np.clip(cosang, -1, 1))))
        return float(np.min(angs))

    def boundary_vertices(self) -> np.ndarray:
        return self.boundary_edges[:, 0]

    def save(self, path):
        """Plain text: ``V E T`` header, vertex lines ``x y``, triangle lines ``i j k``."""
        with open(path, "w") as fh:
            fh.write(f"{len(self.vertices)} {len(self.edges())} {len(self.triangles)}\n")
            for x, y in self.vertices:
                fh.write(f"{x:.17g} {y:.17g}\n")
            for i, j, k in self.triangles:
                fh.write(f"{i} {j} {k}\n")

    @classmethod
    def load(cls, path, h: float = float("nan")) -> "Mesh":
        with open(path) as fh:
            V, E, T = (int(v) for v in fh.readline().split())
            verts = np.array([[float(v) for v in fh.readline().split()] for _ in range(V)])
            tris = np.array([[int(v) for v in fh.readline().split()] for _ in range(T)], dtype=np.int64)
        bedges = _boundary_edges(tris, verts)
        c = (0.0, 0.0)
        th = np.arctan2(verts[bedges[:, 0], 1] - c[1], verts[bedges[:, 0], 0] - c[0])
        mesh = cls(verts, tris, bedges, th, h, c)
        if len(mesh.edges()) != E:
            raise GeometryError(f"edge count {len(mesh.edges())} does not match header {E}")
        return mesh


def _boundary_edges(tris, verts):
    e = np.concatenate([tris[:, [0, 1]], tris[:, [1, 2]], tris[:, [2, 0]]])
    key = np.sort(e, axis=1)
    _, inv, counts = np.unique(key, axis=0, return_inverse=True, return_counts=True)
    return e[counts[inv.ravel()] == 1]


def build_star_mesh(domain: StarDomain, h: float, n_rings: Optional[int] = None) -> Mesh:
    """Structured ring mesh of ``domain`` with target edge length ``h``.

    ``n_rings`` overrides the ring count derived from ``h``. Families of
    domains meshed with a common ring count share one topology, so nodal
    positions (and discrete energies) vary smoothly along the family.
    """
    rmax = float(np.max(domain.rho(np.linspace(0, 2 * np.pi, _N_AREA, endpoint=False))))
    rmin = float(np.min(domain.rho(np.linspace(0, 2 * np.pi, _N_AREA, endpoint=False))))
    if rmin <= 0:
        raise GeometryError("radius function must be positive (domain not star-shaped)")
    if not (0 < h < domain.R / 4):
        raise ConfigurationError(f"target edge length must satisfy 0 < h < R/4, got {h}")
    Nr = max(int(math.ceil(rmax / h)), 4) if n_rings is None else int(n_rings)
    if Nr < 2:
        raise ConfigurationError("mesh needs at least two rings")
    cx, cy = domain.center
    verts = [(cx, cy)]
    thetas = []
    for i in range(1, Nr + 1):
        t = 2 * np.pi * np.arange(8 * i) / (8 * i)
        rr = (i / Nr) * domain.rho(t)
        verts.extend(zip(cx + rr * np.cos(t), cy + rr * np.sin(t)))
        if i == Nr:
            thetas = t
    verts = np.asarray(verts)

    def off(i):
        return 1 + 4 * i * (i - 1) if i > 0 else 0

    tris = []
    for i in range(1, Nr + 1):
        no, ni = 8 * i, 8 * (i - 1)
        for s in range(8):
            outer = [off(i) + (s * i + j) % no for j in range(i + 1)]
            inner = [off(i - 1) + ((s * (i - 1) + j) % ni if ni else 0) for j in range(i)]
            for m in range(i):
                tris.append((outer[m], outer[m + 1], inner[m]))
            for m in range(i - 1):
                tris.append((inner[m], outer[m + 1], inner[m + 1]))
    tris = np.asarray(tris, dtype=np.int64)
    ring = off(Nr) + np.arange(8 * Nr)
    bedges = np.stack([ring, np.roll(ring, -1)], axis=1)
    mesh = Mesh(verts, tris, bedges, np.asarray(thetas), float(h), (float(cx), float(cy)))
    neg = mesh.signed_areas() <= 0
    if np.any(neg):
        mesh.triangles[neg] = mesh.triangles[neg][:, [0, 2, 1]]
        if np.any(mesh.signed_areas() <= 0):
            raise GeometryError("degenerate triangle in structured mesh")
    return mesh


# -- boundary conditions -----------------------------------------------------------

@dataclass(frozen=True)
class BoundaryCondition:
    """``dirichlet``, ``robin`` with constant ``beta``, or ``robin-variable`` with ``beta(theta)``."""

    kind: str
    beta: float | None = None
    beta_fn: Callable | None = field(default=None, repr=False)

    @classmethod
    def dirichlet(cls):
        return cls("dirichlet")

    @classmethod
    def robin(cls, beta: float):
        if beta <= 0:
            raise ConfigurationError("Robin coefficient must be positive")
        return cls("robin", float(beta))

    @classmethod
    def robin_variable(cls, beta_fn: Callable):
        return cls("robin-variable", None, beta_fn)


@dataclass
class FemField:
    mesh: Mesh
    u: np.ndarray
    bc: BoundaryCondition
    source_at: SourceAt = field(repr=False)
    stiffness: sparse.csr_matrix = field(repr=False)
    boundary_mass: sparse.csr_matrix = field(repr=False)
    load: np.ndarray = field(repr=False)
    residual: float = 0.0

    def to_xyu(self, path):
        with open(path, "w") as fh:
            for (x, y), v in zip(self.mesh.vertices, self.u):
                fh.write(f"{x:.17g} {y:.17g} {v:.17g}\n")

    def evaluate(self, x) -> np.ndarray:
        """P1 interpolant at points ``x``; points just outside the polygon use the nearest element."""
        x = np.asarray(x, dtype=float)
        shape = x.shape[:-1]
        pts = x.reshape(-1, 2)
        V, T = self.mesh.vertices, self.mesh.triangles
        tree = _centroid_tree(self.mesh)
        _, cand = tree.query(pts, k=min(12, len(T)))
        out = np.full(len(pts), np.nan)
        best = np.full(len(pts), -np.inf)
        for c in cand.T:
            lam = _barycentric(V[T[c]], pts)
            score = lam.min(axis=1)
            take = score > best
            lam_c = np.clip(lam, 0, None)
            lam_c /= lam_c.sum(axis=1, keepdims=True)
            out[take] = np.sum(lam_c[take] * self.u[T[c[take]]], axis=1)
            best[take] = score[take]
        return out.reshape(shape)


_TREES: dict = {}


def _centroid_tree(mesh: Mesh) -> cKDTree:
    key = id(mesh)
    hit = _TREES.get(key)
    if hit is None or hit[0] is not mesh:
        cent = mesh.vertices[mesh.triangles].mean(axis=1)
        hit = (mesh, cKDTree(cent))
        _TREES.clear()
        _TREES[key] = hit
    return hit[1]


def _barycentric(tri, p):
    a, b, c = tri[:, 0], tri[:, 1], tri[:, 2]
    v0, v1, v2 = b - a, c - a, p - a
    d = v0[:, 0] * v1[:, 1] - v1[:, 0] * v0[:, 1]
    l1 = (v2[:, 0] * v1[:, 1] - v1[:, 0] * v2[:, 1]) / d
    l2 = (v0[:, 0] * v2[:, 1] - v2[:, 0] * v0[:, 1]) / d
    return np.stack([1 - l1 - l2, l1, l2], axis=1)


# -- assembly ---------------------------------------------------------------------

_GAUSS3 = (np.array([0.5 - math.sqrt(15) / 10, 0.5, 0.5 + math.sqrt(15) / 10]),
           np.array([5 / 18, 8 / 18, 5 / 18]))


def _stiffness(mesh: Mesh):
    V, T = mesh.vertices, mesh.triangles
    p = V[T]
    area = mesh.signed_areas()
    b = np.stack([p[:, 1, 1] - p[:, 2, 1], p[:, 2, 1] - p[:, 0, 1], p[:, 0, 1] - p[:, 1, 1]], axis=1)
    c = np.stack([p[:, 2, 0] - p[:, 1, 0], p[:, 0, 0] - p[:, 2, 0], p[:, 1, 0] - p[:, 0, 0]], axis=1)
    Ke = (b[:, :, None] * b[:, None, :] + c[:, :, None] * c[:, None, :]) / (4 * area)[:, None, None]
    rows = np.repeat(T, 3, axis=1).ravel()
    cols = np.tile(T, (1, 3)).ravel()
    n = len(V)
    return sparse.csr_matrix((Ke.ravel(), (rows, cols)), shape=(n, n))


def _load(mesh: Mesh, source_at: SourceAt) -> np.ndarray:
    V, T = mesh.vertices, mesh.triangles
    p = V[T]
    area = mesh.signed_areas()
    mids = np.stack([(p[:, 0] + p[:, 1]) / 2, (p[:, 1] + p[:, 2]) / 2, (p[:, 2] + p[:, 0]) / 2], axis=1)
    fm = np.asarray(source_at(mids), dtype=float).reshape(len(T), 3)
    # midpoint rule: vertex i gets half of the values on its two adjacent edge midpoints
    Fe = np.stack([fm[:, 0] + fm[:, 2], fm[:, 0] + fm[:, 1], fm[:, 1] + fm[:, 2]], axis=1) * (area / 6)[:, None]
    return np.bincount(T.ravel(), weights=Fe.ravel(), minlength=len(V))


def _boundary_mass(mesh: Mesh, beta_at_points: Callable) -> sparse.csr_matrix:
    V, E = mesh.vertices, mesh.boundary_edges
    a, b = V[E[:, 0]], V[E[:, 1]]
    L = np.linalg.norm(b - a, axis=1)
    s, w = _GAUSS3
    pts = a[:, None, :] + s[None, :, None] * (b - a)[:, None, :]
    beta = np.asarray(beta_at_points(pts), dtype=float).reshape(len(E), 3)
    if not np.all(np.isfinite(beta)) or np.any(beta <= 0):
        raise ConfigurationError("Robin coefficient must be positive and finite on the boundary")
    phi = np.stack([1 - s, s], axis=0)  # (2, 3)
    Me = np.einsum("eq,q,iq,jq->eij", beta, w, phi, phi) * L[:, None, None]
    rows = np.repeat(E, 2, axis=1).ravel()
    cols = np.tile(E, (1, 2)).ravel()
    n = len(V)
    return sparse.csr_matrix((Me.ravel(), (rows, cols)), shape=(n, n))


def _theta_of(mesh: Mesh, pts):
    return np.arctan2(pts[..., 1] - mesh.center[1], pts[..., 0] - mesh.center[0])


def _solve_refined(A, b):
    """Sparse LU with iterative refinement.

    Returns the solution, the residual relative to ``|b|`` and the normwise
    backward error ``|b - Ax| / (|A| |x| + |b|)`` (infinity norms).
    """
    lu = splinalg.splu(A)
    x = lu.solve(b)
    normA = float(abs(A).sum(axis=1).max())
    for _ in range(3):
        r = b - A @ x
        back = np.abs(r).max() / max(normA * np.abs(x).max() + np.abs(b).max(), 1e-300)
        if back <= 0.1 * RESIDUAL_TOL:
            break
        x = x + lu.solve(r)
    r = b - A @ x
    rel = np.linalg.norm(r) / max(np.linalg.norm(b), 1e-300)
    back = np.abs(r).max() / max(normA * np.abs(x).max() + np.abs(b).max(), 1e-300)
    return x, float(rel), float(back)


def assemble_solve(mesh: Mesh, bc: BoundaryCondition, source_at: SourceAt) -> FemField:
    """Assemble and solve the P1 system for ``-Laplace u = f`` with the given condition."""
    K = _stiffness(mesh)
    F = _load(mesh, source_at)
    n = mesh.n_vertices
    if bc.kind == "dirichlet":
        Mb = sparse.csr_matrix((n, n))
        bnd = np.unique(mesh.boundary_edges)
        free = np.setdiff1d(np.arange(n), bnd)
        u = np.zeros(n)
        A = K[free][:, free].tocsc()
        u[free], res, back = _solve_refined(A, F[free])
    else:
        if bc.kind == "robin":
            Mb = _boundary_mass(mesh, lambda p: np.full(p.shape[:-1], bc.beta))
        elif bc.kind == "robin-variable":
            Mb = _boundary_mass(mesh, lambda p: bc.beta_fn(_theta_of(mesh, p)))
        else:
            raise ConfigurationError(f"unknown boundary condition {bc.kind!r}")
        A = (K + Mb).tocsc()
        u, res, back = _solve_refined(A, F)
    if not np.all(np.isfinite(u)):
        raise SolverError("finite-element solve produced non-finite values")
    if np.linalg.norm(F) > 0 and back > RESIDUAL_TOL:
        raise SolverError(f"finite-element backward error {back:.3e} above tolerance "
                          f"(relative residual {res:.3e})")
    return FemField(mesh, u, bc, source_at, K, Mb, F, float(res))


def energy(fld: FemField) -> float:
    """``J = 1/2 u.K.u + 1/2 u.Mb.u - F.u``."""
    u = fld.u
    return float(0.5 * u @ (fld.stiffness @ u) + 0.5 * u @ (fld.boundary_mass @ u) - fld.load @ u)


def total_heat(fld: FemField) -> float:
    """``int f u`` with the load quadrature."""
    return float(fld.load @ fld.u)


def integral(fld: FemField) -> float:
    """``int u`` (exact for P1)."""
    area = fld.mesh.signed_areas()
    return float(np.sum(area * fld.u[fld.mesh.triangles].mean(axis=1)))


def average_temperature(fld: FemField) -> float:
    return integral(fld) / fld.mesh.area()


def stationarity_residual(fld: FemField, domain: StarDomain) -> tuple[float, float, float]:
    """``(max, min, spread)`` of ``-beta^2 u^2 + |grad u|^2/2 + beta/2 u^2 H - f u``
    at boundary-edge midpoints."""
    if fld.bc.kind != "robin":
        raise ConfigurationError("stationarity residual needs a constant Robin coefficient")
    mesh, beta = fld.mesh, fld.bc.beta
    V, T, E = mesh.vertices, mesh.triangles, mesh.boundary_edges
    # owning triangle of every boundary edge
    owner = {}
    for t, tri in enumerate(T):
        for a, b in ((tri[0], tri[1]), (tri[1], tri[2]), (tri[2], tri[0])):
            owner[(a, b)] = t
    tids = np.array([owner.get((a, b), owner.get((b, a), -1)) for a, b in E])
    if np.any(tids < 0):
        raise GeometryError("boundary edge without an adjacent triangle")
    p = V[T[tids]]
    area = 0.5 * ((p[:, 1, 0] - p[:, 0, 0]) * (p[:, 2, 1] - p[:, 0, 1])
                  - (p[:, 2, 0] - p[:, 0, 0]) * (p[:, 1, 1] - p[:, 0, 1]))
    bcoef = np.stack([p[:, 1, 1] - p[:, 2, 1], p[:, 2, 1] - p[:, 0, 1], p[:, 0, 1] - p[:, 1, 1]], axis=1)
    ccoef = np.stack([p[:, 2, 0] - p[:, 1, 0], p[:, 0, 0] - p[:, 2, 0], p[:, 1, 0] - p[:, 0, 0]], axis=1)
    uu = fld.u[T[tids]]
    gx = np.sum(bcoef * uu, axis=1) / (2 * area)
    gy = np.sum(ccoef * uu, axis=1) / (2 * area)
    mid = (V[E[:, 0]] + V[E[:, 1]]) / 2
    um = (fld.u[E[:, 0]] + fld.u[E[:, 1]]) / 2
    th = np.arctan2(mid[:, 1] - domain.center[1], mid[:, 0] - domain.center[0])
    H = domain.curvature(th)
    f = np.asarray(fld.source_at(mid), dtype=float)
    g = -beta**2 * um**2 + 0.5 * (gx**2 + gy**2) + 0.5 * beta * um**2 * H - f * um
    return float(g.max()), float(g.min()), float(g.max() - g.min())


def solve_insulation(mesh: Mesh, h_fn: Callable, source_at: SourceAt, h_min: float = 1e-6) -> FemField:
    """``-Laplace u = f`` with ``h u_nu + u = 0``, i.e. Robin coefficient ``1/h(theta)``."""
    t = np.linspace(-np.pi, np.pi, 2048)
    if np.min(h_fn(t)) < h_min:
        raise ConfigurationError(f"insulation thickness falls below h_min = {h_min}")
    return assemble_solve(mesh, BoundaryCondition.robin_variable(lambda th: 1.0 / h_fn(th)), source_at)
