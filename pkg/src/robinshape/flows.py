"""Volume-preserving perturbations of the disk and energy derivatives along them.

Two families are supported:

* translations ``x -> x + t d`` with a unit direction ``d``; the energy is
  computed on the fixed disk with the source shifted by ``t d``;
* star modes ``rho_t = s(t) R (1 + t a cos k theta)`` with
  ``s(t) = (1 + t^2 a^2 / 2)^(-1/2)``, which keeps the area at ``pi R^2``.

At ``t = 0`` both have normal velocity ``zeta`` with zero mean on the circle.
Because every member of either path has exactly the area of the disk, the
second derivative of ``J`` at ``t = 0`` depends only on ``zeta``.
"""

from __future__ import annotations

import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import disk_spectral as ds
from . import fem2d
from .ball import BallProblem
from .errors import ConfigurationError, GeometryError
from .sources import RadialSource


@dataclass(frozen=True)
class PerturbationSpec:
    """``translation`` along ``direction`` or ``star-mode`` with wavenumber ``k`` and amplitude."""

    kind: str
    direction: tuple = (1.0, 0.0)
    k: int = 2
    amplitude: float = 1.0

    def __post_init__(self):
        if self.kind == "translation":
            d = np.asarray(self.direction, dtype=float)
            norm = float(np.hypot(*d))
            if norm == 0:
                raise ConfigurationError("translation direction must be non-zero")
            object.__setattr__(self, "direction", (float(d[0]) / norm, float(d[1]) / norm))
        elif self.kind == "star-mode":
            if int(self.k) != self.k or self.k < 1:
                raise ConfigurationError("star mode wavenumber must be a positive integer")
        else:
            raise ConfigurationError(f"unknown perturbation kind {self.kind!r}")

    @classmethod
    def translation(cls, direction=(1.0, 0.0)) -> "PerturbationSpec":
        return cls("translation", tuple(direction))

    @classmethod
    def star_mode(cls, k: int = 2, amplitude: float = 1.0) -> "PerturbationSpec":
        return cls("star-mode", k=int(k), amplitude=float(amplitude))

    @classmethod
    def from_spec(cls, d: dict) -> "PerturbationSpec":
        if d["kind"] == "translation":
            return cls.translation(d.get("direction", (1.0, 0.0)))
        return cls.star_mode(d.get("k", 2), d.get("amplitude", 1.0))

    def zeta(self, theta, R: float = 1.0):
        """Normal velocity at ``t = 0`` on the circle of radius ``R``."""
        theta = np.asarray(theta, dtype=float)
        if self.kind == "translation":
            return self.direction[0] * np.cos(theta) + self.direction[1] * np.sin(theta)
        return R * self.amplitude * np.cos(self.k * theta)

    def zeta_norm_sq(self, R: float = 1.0) -> float:
        """``oint zeta^2 dsigma`` on the circle of radius ``R``."""
        if self.kind == "translation":
            return math.pi * R
        return math.pi * R**3 * self.amplitude**2

    def mode_index(self) -> int:
        return 1 if self.kind == "translation" else self.k


def perturbed_domain(spec: PerturbationSpec, t: float, R: float = 1.0) -> fem2d.StarDomain:
    """The member ``F_t(B_R)`` of the path; ``t = 0`` gives the disk itself."""
    if spec.kind == "translation":
        return fem2d.StarDomain.disk(R, center=(t * spec.direction[0], t * spec.direction[1]))
    if abs(t * spec.amplitude) >= 1:
        raise GeometryError("star-mode amplitude too large: boundary radius would vanish")
    return fem2d.StarDomain.fourier(R, {spec.k: t * spec.amplitude}, preserve_area=True)


@dataclass
class FlowSample:
    """Energies on a symmetric stencil with central differences and one Richardson step."""

    t: tuple
    J: tuple
    stencil_width: float
    d1: float
    d2: float
    d1_richardson: float
    d2_richardson: float
    d1_error: float
    d2_error: float
    extrapolation_order: int = 4
    meta: dict = field(default_factory=dict)

    def footer(self) -> dict:
        d = asdict(self)
        d.pop("t")
        d.pop("J")
        return d

    def csv_text(self) -> str:
        """Rows ``t,J`` followed by a ``#``-prefixed JSON footer."""
        lines = ["t,J"] + [f"{t:.17g},{j:.17g}" for t, j in zip(self.t, self.J)]
        lines.append("# " + json.dumps(self.footer(), sort_keys=True))
        return "\n".join(lines) + "\n"

    def to_csv(self, path):
        with open(path, "w") as fh:
            fh.write(self.csv_text())


def _stencil(t: float) -> list[float]:
    return [-t, -t / 2, 0.0, t / 2, t]


def _energy_at(p: BallProblem, src: RadialSource, spec: PerturbationSpec, s: float,
               h: float, cfg: ds.SpectralConfig) -> float:
    if spec.kind == "translation":
        shift = (s * spec.direction[0], s * spec.direction[1])
        fld = ds.solve_disk(p.R, p.beta, ds.shifted_source(src, shift), cfg)
        return ds.energy(fld)
    dom = perturbed_domain(spec, s, p.R)
    # ring count from the unperturbed disk keeps one topology across the stencil
    mesh = fem2d.build_star_mesh(dom, h, n_rings=max(int(math.ceil(p.R / h)), 4))
    bc = fem2d.BoundaryCondition.dirichlet() if not p.is_robin else fem2d.BoundaryCondition.robin(p.beta)
    return fem2d.energy(fem2d.assemble_solve(mesh, bc, src.value_at))


def energy_along_flow(p: BallProblem, src: RadialSource, spec: PerturbationSpec,
                      t: Optional[float] = None, h: float = 0.02,
                      cfg: Optional[ds.SpectralConfig] = None, jobs: int = 1) -> FlowSample:
    """Sample ``J`` at ``{0, +-t/2, +-t}`` and form central differences.

    Translations use the spectral disk solver, star modes the P1 solver with
    target edge length ``h``. ``t`` defaults to ``0.02 R``.
    """
    if p.n != 2 or src.n != 2:
        raise ConfigurationError("solver-backed flow experiments are two-dimensional")
    t = 0.02 * p.R if t is None else float(t)
    if t <= 0:
        raise ConfigurationError("stencil width must be positive")
    cfg = cfg or ds.SpectralConfig()
    ts = _stencil(t)
    if jobs > 1:
        with ThreadPoolExecutor(jobs) as ex:
            Js = list(ex.map(lambda s: _energy_at(p, src, spec, s, h, cfg), ts))
    else:
        Js = [_energy_at(p, src, spec, s, h, cfg) for s in ts]
    Jm, Jmh, J0, Jph, Jp = Js
    d1_t = (Jp - Jm) / (2 * t)
    d1_h = (Jph - Jmh) / t
    d2_t = (Jp + Jm - 2 * J0) / t**2
    d2_h = (Jph + Jmh - 2 * J0) / (t / 2) ** 2
    d1_r = (4 * d1_h - d1_t) / 3
    d2_r = (4 * d2_h - d2_t) / 3
    # truncation estimate from the Richardson correction plus a roundoff floor
    eps = np.finfo(float).eps * max(abs(J0), 1e-300)
    d1_err = abs(d1_r - d1_h) + 4 * eps / t
    d2_err = abs(d2_r - d2_h) + 16 * eps / t**2
    meta = {"kind": spec.kind, "R": p.R, "beta": p.beta,
            "solver": "spectral" if spec.kind == "translation" else "fem",
            "h": None if spec.kind == "translation" else h}
    return FlowSample(tuple(ts), tuple(Js), t, d1_t, d2_t, d1_r, d2_r, d1_err, d2_err, 4, meta)


def first_variation_check(p: BallProblem, src: RadialSource, spec: PerturbationSpec,
                          t: Optional[float] = None, h: float = 0.02) -> float:
    """Richardson-extrapolated central difference ``J'(0)``."""
    return energy_along_flow(p, src, spec, t, h).d1_richardson


@dataclass(frozen=True)
class SecondVariationComparison:
    numeric: float
    analytic: float
    rel_error: float
    samples: tuple = ()


def second_variation_check(p: BallProblem, src: RadialSource, spec: PerturbationSpec,
                           t: Optional[float] = None, h: float = 0.04,
                           refine: bool = True) -> SecondVariationComparison:
    """Compare numeric ``J''(0)`` with ``Q_l oint zeta^2``.

    For star modes with ``refine`` the FEM value is extrapolated in ``h`` from
    meshes ``h`` and ``h/2`` assuming second-order convergence.
    """
    from .ball import mode_second_variation

    Q = mode_second_variation(p, src, spec.mode_index()).Q_l
    analytic = Q * spec.zeta_norm_sq(p.R)
    s1 = energy_along_flow(p, src, spec, t, h)
    samples = (s1,)
    numeric = s1.d2_richardson
    if spec.kind == "star-mode" and refine:
        s2 = energy_along_flow(p, src, spec, t, h / 2)
        samples = (s1, s2)
        numeric = (4 * s2.d2_richardson - s1.d2_richardson) / 3
    scale = max(abs(analytic), 1e-300)
    return SecondVariationComparison(numeric, analytic, abs(numeric - analytic) / scale, samples)


def sample_path(p: BallProblem, src: RadialSource, spec: PerturbationSpec,
                ts: Sequence[float], h: float = 0.02) -> list[float]:
    """``J`` along an arbitrary list of path parameters."""
    cfg = ds.SpectralConfig()
    return [_energy_at(p, src, spec, float(s), h, cfg) for s in ts]
