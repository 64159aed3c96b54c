"""Spherical decreasing rearrangement on grids and the comparison experiments built on it.

A :class:`GridField` stores cell-centre values together with the fraction of
each cell that lies inside the domain. The decreasing rearrangement is the
step function obtained by sorting ``(value, measure)`` pairs, so the only
discretisation error is the cell size itself.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from typing import Callable, Optional

import numpy as np

from . import disk_spectral as ds
from . import fem2d
from .errors import ConfigurationError
from .sources import RadialSource

_SUB = 4  # subsamples per cell side for boundary fractions


@dataclass
class GridField:
    """Values on a uniform grid with per-cell domain fractions.

    ``values`` and ``fractions`` have shape ``(ny, nx)``; cell ``(j, i)`` has
    centre ``(x0 + (i + 1/2) dx, y0 + (j + 1/2) dx)``.
    """

    x0: float
    y0: float
    dx: float
    values: np.ndarray
    fractions: np.ndarray
    profile: Optional[tuple] = field(default=None, repr=False)

    def __post_init__(self):
        if self.values.shape != self.fractions.shape:
            raise ValueError("values and fractions must have the same shape")
        if not np.all(np.isfinite(self.values[self.fractions > 0])):
            raise ValueError("grid values must be finite inside the domain")

    @property
    def shape(self):
        return self.values.shape

    @property
    def cell_area(self) -> float:
        return self.dx * self.dx

    def centers(self) -> np.ndarray:
        ny, nx = self.shape
        xs = self.x0 + (np.arange(nx) + 0.5) * self.dx
        ys = self.y0 + (np.arange(ny) + 0.5) * self.dx
        X, Y = np.meshgrid(xs, ys)
        return np.stack([X, Y], axis=-1)

    def measure(self) -> float:
        return float(self.fractions.sum() * self.cell_area)

    def integral(self, other: Optional["GridField"] = None) -> float:
        """``int f`` or ``int f g`` over the domain (midpoint rule with fractions)."""
        v = self.values if other is None else self.values * other.values
        return float(np.sum(np.where(self.fractions > 0, v, 0.0) * self.fractions) * self.cell_area)

    def distribution(self, t: float) -> float:
        """``mu(t) = |{f > t}|``."""
        return float(self.fractions[self.values > t].sum() * self.cell_area)

    def decreasing_profile(self) -> tuple[np.ndarray, np.ndarray]:
        """Breakpoints ``s_j`` (cumulative measure) and values ``f*`` on ``(s_{j-1}, s_j]``."""
        inside = self.fractions > 0
        v = self.values[inside]
        m = self.fractions[inside] * self.cell_area
        order = np.lexsort((np.arange(v.size), -v))  # descending, stable
        return np.cumsum(m[order]), v[order]

    def with_values(self, values: np.ndarray) -> "GridField":
        return GridField(self.x0, self.y0, self.dx, np.asarray(values, dtype=float), self.fractions)

    def to_csv(self, path):
        c = self.centers()
        with open(path, "w") as fh:
            fh.write("x,y,value,fraction\n")
            for (x, y), v, w in zip(c.reshape(-1, 2), self.values.ravel(), self.fractions.ravel()):
                if w > 0:
                    fh.write(f"{x:.17g},{y:.17g},{v:.17g},{w:.17g}\n")


def _fractions(contains: Callable, x0, y0, dx, nx, ny) -> np.ndarray:
    off = (np.arange(_SUB) + 0.5) / _SUB * dx
    xs = x0 + (np.arange(nx)[:, None] * dx + off[None, :]).ravel()
    ys = y0 + (np.arange(ny)[:, None] * dx + off[None, :]).ravel()
    X, Y = np.meshgrid(xs, ys)
    inside = contains(np.stack([X, Y], axis=-1)).astype(float)
    return inside.reshape(ny, _SUB, nx, _SUB).mean(axis=(1, 3))


def grid_on_domain(domain: fem2d.StarDomain, func: Callable, dx: float) -> GridField:
    """Sample ``func`` (planar points -> values) at cell centres over ``domain``."""
    xmin, xmax, ymin, ymax = domain.bounding_box()
    x0, y0 = xmin - dx, ymin - dx
    nx = int(math.ceil((xmax - x0) / dx)) + 1
    ny = int(math.ceil((ymax - y0) / dx)) + 1
    frac = _fractions(domain.contains, x0, y0, dx, nx, ny)
    g = GridField(x0, y0, dx, np.zeros((ny, nx)), frac)
    vals = np.zeros((ny, nx))
    inside = frac > 0
    vals[inside] = func(g.centers()[inside])
    return GridField(x0, y0, dx, vals, frac)


def profile_value(profile: tuple, s) -> np.ndarray:
    """``f*(s)`` for a step profile; zero beyond the total measure."""
    cum, vals = profile
    s = np.asarray(s, dtype=float)
    idx = np.searchsorted(cum, s, side="left")
    out = np.where(idx < len(vals), vals[np.minimum(idx, len(vals) - 1)], 0.0)
    return np.where(s <= 0, vals[0], out)


def spherical_rearrangement(fld: GridField, dx: Optional[float] = None) -> GridField:
    """``f#`` on the centred disk of equal (grid) measure.

    Output cells are ranked by distance from the origin and receive ``f*`` at
    the midpoint of their cumulative-measure interval. ``f#`` is then radially
    non-increasing and its distribution function differs from that of ``f``
    by less than one cell measure.
    """
    if np.any(fld.values[fld.fractions > 0] < 0):
        raise ValueError("rearrangement needs a nonnegative field")
    dx = fld.dx if dx is None else float(dx)
    prof = fld.decreasing_profile()
    total = float(prof[0][-1])
    Rs = math.sqrt(total / math.pi)
    disk = fem2d.StarDomain.disk(Rs)
    x0 = y0 = -Rs - dx
    n = int(math.ceil(2 * (Rs + dx) / dx)) + 1
    frac = _fractions(disk.contains, x0, y0, dx, n, n)
    frac *= total / (frac.sum() * dx * dx)  # grid measure equals that of the input exactly
    out = GridField(x0, y0, dx, np.zeros((n, n)), frac, prof)
    c = out.centers()
    r = np.hypot(c[..., 0], c[..., 1])
    inside = frac > 0
    rr, mm = r[inside], frac[inside] * dx * dx
    order = np.lexsort((np.arange(rr.size), rr))
    cum = np.cumsum(mm[order])
    mid = cum - mm[order] / 2
    vals = np.empty(rr.size)
    vals[order] = profile_value(prof, mid)
    out.values[inside] = vals
    return out


def rearranged_at(fld: GridField, x) -> np.ndarray:
    """Exact step-profile ``f#(x) = f*(pi |x|^2)`` at arbitrary points."""
    x = np.asarray(x, dtype=float)
    prof = fld.profile if fld.profile is not None else fld.decreasing_profile()
    return profile_value(prof, math.pi * (x[..., 0] ** 2 + x[..., 1] ** 2))


def hardy_littlewood(f: GridField, g: GridField) -> tuple[float, float]:
    """``(int f g, int f* g*)`` with both profiles integrated exactly on merged breakpoints."""
    if f.shape != g.shape or not np.array_equal(f.fractions, g.fractions):
        raise ValueError("fields must share a grid and domain")
    lhs = f.integral(g)
    cf, vf = f.decreasing_profile()
    cg, vg = g.decreasing_profile()
    s = np.union1d(cf, cg)
    left = np.concatenate([[0.0], s[:-1]])
    mid = 0.5 * (left + s)
    rhs = float(np.sum(profile_value((cf, vf), mid) * profile_value((cg, vg), mid) * (s - left)))
    return lhs, rhs


# -- domination of rearranged restrictions --------------------------------------------

@dataclass(frozen=True)
class DominationReport:
    max_violation: float
    n_points: int
    dx: float
    measure_domain: float
    measure_ball: float

    @property
    def ok(self) -> bool:
        return self.max_violation <= 0.0


def lemma_domination_check(src: RadialSource, domain: fem2d.StarDomain, R: float,
                           dx: float = 0.02) -> DominationReport:
    """Check ``(f|_Omega)#(x) <= f(x)`` on grid points of ``B_R``.

    The grid profile of ``f|_Omega`` can exceed the continuous one by at most
    one cell diagonal in radius, so the comparison is against
    ``f(max(|x| - diag, 0))``; anything above that is reported as a violation.
    """
    cell = dx * dx
    ball = math.pi * R * R
    if abs(domain.area - ball) > 2 * cell:
        raise ConfigurationError(
            f"domain measure {domain.area:.6g} differs from |B_R| = {ball:.6g} by more than two cells")
    fld = grid_on_domain(domain, src.value_at, dx)
    if abs(fld.measure() - ball) > 2 * cell:
        raise ConfigurationError(
            f"grid measure {fld.measure():.6g} differs from |B_R| = {ball:.6g} by more than two cells")
    prof = fld.decreasing_profile()
    n = int(math.ceil(R / dx))
    xs = (np.arange(-n, n + 1)) * dx
    X, Y = np.meshgrid(xs, xs)
    r = np.hypot(X, Y)
    keep = r < R
    r = r[keep]
    lhs = profile_value(prof, math.pi * r**2)
    rhs = src.value(np.maximum(r - math.sqrt(2) * dx, 0.0))
    viol = float(np.max(lhs - rhs, initial=-np.inf))
    return DominationReport(max(viol, 0.0), int(r.size), dx, fld.measure(), ball)


# -- Talenti-type comparisons --------------------------------------------------------

@dataclass(frozen=True)
class TalentiReport:
    beta: Optional[float]
    J_domain: float
    J_ball: float
    heat_domain: float
    heat_ball: float
    J_margin: float        # J(domain) - J(ball); >= 0 expected for Dirichlet
    heat_margin: float     # int u (ball) - int u (domain); >= 0 expected
    hl_lhs: float
    hl_rhs: float
    solver: str

    @property
    def hardy_littlewood_ok(self) -> bool:
        return self.hl_lhs <= self.hl_rhs * (1 + 1e-12)

    def to_json(self) -> dict:
        return asdict(self)


def _is_disk(domain: fem2d.StarDomain) -> bool:
    return domain.label == "disk"


def talenti_experiments(domain: fem2d.StarDomain, src: RadialSource, beta: Optional[float],
                        h: float = 0.02, dx: float = 0.02,
                        cfg: Optional[ds.SpectralConfig] = None) -> TalentiReport:
    """Energy and heat content on ``domain`` versus the centred disk of equal area.

    Disks (possibly off-centre) use the spectral solver with a shifted source;
    other domains use P1 elements. The centred disk always uses the spectral
    solver. ``beta=None`` is the Dirichlet problem.
    """
    if src.n != 2:
        raise ConfigurationError("solver-backed comparisons are two-dimensional")
    cfg = cfg or ds.SpectralConfig()
    Rb = math.sqrt(domain.area / math.pi)
    ball = ds.solve_disk(Rb, beta, src.value_at, cfg)
    J_ball, heat_ball = ds.energy(ball), ds.integral(ball)
    if _is_disk(domain):
        shift = domain.center
        fld = ds.solve_disk(domain.R, beta, ds.shifted_source(src, shift), cfg)
        J_dom, heat_dom = ds.energy(fld), ds.integral(fld)
        c = np.asarray(shift)
        u_at = lambda x: fld.evaluate(_clip_to_disk(x - c, domain.R))
        solver = "spectral"
    else:
        mesh = fem2d.build_star_mesh(domain, h)
        bc = fem2d.BoundaryCondition.dirichlet() if beta is None else fem2d.BoundaryCondition.robin(beta)
        fld = fem2d.assemble_solve(mesh, bc, src.value_at)
        J_dom, heat_dom = fem2d.energy(fld), fem2d.integral(fld)
        u_at = fld.evaluate
        solver = "fem"
    fg = grid_on_domain(domain, src.value_at, dx)
    ug = fg.with_values(np.where(fg.fractions > 0, _safe(u_at, fg), 0.0))
    hl_lhs, hl_rhs = hardy_littlewood(fg, ug)
    return TalentiReport(beta, J_dom, J_ball, heat_dom, heat_ball, J_dom - J_ball,
                         heat_ball - heat_dom, hl_lhs, hl_rhs, solver)


def _clip_to_disk(y, R):
    # boundary cell centres may sit just outside; project them radially onto the circle
    r = np.hypot(y[..., 0], y[..., 1])
    scale = np.minimum(1.0, R / np.maximum(r, 1e-300))
    return y * scale[..., None]


def _safe(u_at, g: GridField) -> np.ndarray:
    out = np.zeros(g.shape)
    inside = g.fractions > 0
    out[inside] = np.maximum(u_at(g.centers()[inside]), 0.0)
    return out


# -- two-disk example ----------------------------------------------------------------

@dataclass(frozen=True)
class TwoDiskReport:
    eps: float
    c: float
    beta: float
    beta0: float
    linf_omega: float
    linf_ball: float
    delta: float
    verdict: str

    def to_json(self) -> dict:
        return asdict(self)

    def dumps(self) -> str:
        return json.dumps(self.to_json(), sort_keys=True)


def two_disk_counterexample(eps: float, beta: float) -> TwoDiskReport:
    """Closed-form sup norms for a unit disk plus a small far-away disk of radius ``eps``
    versus the centred disk of equal area, with unit source on the union."""
    if eps <= 0 or beta <= 0:
        raise ConfigurationError("eps and beta must be positive")
    c = math.sqrt(1.0 + eps * eps)
    lc = math.log1p(eps * eps) / 2
    # (1 - 1/c)/ln c, evaluated stably for small eps
    one_minus_inv_c = eps * eps / (c * (1 + c))
    beta0 = one_minus_inv_c / lc
    linf_omega = 1 / (2 * beta) + 0.25
    linf_ball = 1 / (2 * beta * c) + 0.5 * lc + 0.25
    delta = 0.5 * lc - one_minus_inv_c / (2 * beta)
    verdict = "comparison fails" if beta < beta0 else "comparison holds"
    return TwoDiskReport(eps, c, beta, beta0, linf_omega, linf_ball, delta, verdict)


# -- thin insulation ---------------------------------------------------------------------

def insulation_profile(m: float, R: float, cos_coeffs=(), sin_coeffs=()) -> Callable:
    """``h(theta) = m/(2 pi R) (1 + sum a_k cos k theta + b_k sin k theta)``.

    Every non-constant term integrates to zero on the circle, so the mass is
    exactly ``m``. Positivity needs ``sum |a_k| + |b_k| < 1``.
    """
    a = np.asarray(cos_coeffs, dtype=float)
    b = np.asarray(sin_coeffs, dtype=float)
    if np.abs(a).sum() + np.abs(b).sum() >= 1:
        raise ConfigurationError("insulation profile would not stay positive")
    h0 = m / (2 * math.pi * R)

    def h(theta):
        theta = np.asarray(theta, dtype=float)
        out = np.ones_like(theta)
        for k, v in enumerate(a, start=1):
            out = out + v * np.cos(k * theta)
        for k, v in enumerate(b, start=1):
            out = out + v * np.sin(k * theta)
        return h0 * out

    return h


@dataclass(frozen=True)
class InsulationReport:
    m: float
    heat_constant: float
    heat_profiles: tuple
    margins: tuple

    @property
    def min_margin(self) -> float:
        return min(self.margins)


def insulation_comparison(src: RadialSource, m: float = 1.0, R: float = 1.0, n_profiles: int = 20,
                          seed: int = 0, h: float = 0.04, max_mode: int = 4,
                          amplitude: float = 0.6) -> InsulationReport:
    """``int u_h`` on the disk for constant ``h`` versus random mass-``m`` profiles."""
    rng = np.random.default_rng(seed)
    mesh = fem2d.build_star_mesh(fem2d.StarDomain.disk(R), h)
    const = fem2d.solve_insulation(mesh, insulation_profile(m, R), src.value_at)
    base = fem2d.integral(const)
    heats, margins = [], []
    for _ in range(n_profiles):
        w = rng.uniform(-1, 1, size=2 * max_mode)
        w *= amplitude * rng.uniform(0.2, 1.0) / np.abs(w).sum()
        prof = insulation_profile(m, R, w[:max_mode], w[max_mode:])
        q = fem2d.integral(fem2d.solve_insulation(mesh, prof, src.value_at))
        heats.append(q)
        margins.append(base - q)
    return InsulationReport(m, base, tuple(heats), tuple(margins))
