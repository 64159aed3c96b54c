"""Closed-form analysis of the centred ball ``B_R`` under a radial source.

Everything here reduces to three boundary numbers of the source,
``f(R)``, ``f_r(R)`` and the ball mean ``fbar(R)``. The Robin state on the
ball has the traces

    u(R)    =  R fbar / (n beta)
    u_r(R)  = -R fbar / n
    u_rr(R) = -f(R) + (n-1)/n fbar

and the second variation of the energy along a volume-preserving flow with
normal velocity in the degree-``l`` spherical-harmonic space is an explicit
quadratic form in these traces (see :func:`mode_second_variation`).
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Optional

import numpy as np
from scipy import integrate

from .errors import RobinShapeError
from .sources import RadialSource

# Marginal band on the normalised stability number lhs / fbar^2.
MARGINAL_TOL = 1e-9

_EPS = np.finfo(float).eps
_TINY = np.finfo(float).tiny


@dataclass(frozen=True)
class BallProblem:
    """Ball of radius ``R`` in R^n with Robin coefficient ``beta`` (``None`` = Dirichlet)."""

    n: int
    R: float
    beta: Optional[float] = None

    def __post_init__(self):
        if self.n < 2:
            raise ValueError("dimension must be >= 2")
        if self.R <= 0:
            raise ValueError("radius must be positive")
        if self.beta is not None and self.beta <= 0:
            raise ValueError("Robin coefficient must be positive")

    @property
    def is_robin(self) -> bool:
        return self.beta is not None

    @classmethod
    def robin(cls, n: int, R: float, beta: float) -> "BallProblem":
        return cls(n, R, float(beta))

    @classmethod
    def dirichlet(cls, n: int, R: float) -> "BallProblem":
        return cls(n, R, None)


@dataclass(frozen=True)
class SourceTraces:
    """``f(R)``, ``f_r(R)`` and ``fbar(R)`` after the negligibility flush."""

    f_R: float
    fr_R: float
    fbar: float
    underflow: bool


@dataclass(frozen=True)
class BoundaryData:
    u_R: float
    ur_R: float
    urr_R: float
    fbar: float
    f_R: float
    fr_R: float
    underflow: bool = False


@dataclass(frozen=True)
class Thresholds:
    """Roots of ``A1 b^2 - A0 b + A2``; the ball is unstable for ``beta1 < b < beta2``."""

    beta1: float
    beta2: float
    discriminant: float
    underflow: bool


@dataclass(frozen=True)
class Classification:
    verdict: str   # stable-all-beta | stable | unstable | boundary
    clause: str    # slow-decay | large-beta-radius | discriminant | window | direct


@dataclass(frozen=True)
class StabilityReport:
    lhs: float
    A0: float
    A1: float
    A2: float
    discriminant: float
    beta1: Optional[float]
    beta2: Optional[float]
    verdict: str   # stable | marginally-stable | unstable | always-stable
    clause: str
    underflow: bool
    summary: str

    def to_json(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class ModeSecondVariation:
    """Second variation for a degree-``l`` normal velocity, per unit ``int zeta^2``."""

    l: int
    lambda_l: float
    c_l: float
    Q_l: float


def source_traces(src: RadialSource, R: float) -> SourceTraces:
    """Boundary values of the source, flushing numerically negligible ones to 0.

    ``f(R)`` is flushed when it is below the smallest normal double or below
    ``eps * fbar``; ``f_r(R)`` likewise with ``R |f_r(R)|``. At that size
    neither can change the stability number in double precision, but a
    nonzero ``f_r`` would otherwise produce a spurious ``beta1 ~ 1e-130``.
    """
    fbar = src.ball_mean(R).fbar
    f_R = float(src.value(R))
    fr_R = float(src.radial_derivative(R))
    flushed = False
    cut = max(_TINY, _EPS * abs(fbar))
    if f_R != 0.0 and abs(f_R) < cut:
        f_R, flushed = 0.0, True
    if fr_R != 0.0 and abs(fr_R) * R < cut:
        fr_R, flushed = 0.0, True
    return SourceTraces(f_R, fr_R, fbar, flushed)


def boundary_data(p: BallProblem, src: RadialSource) -> BoundaryData:
    """Traces ``u(R), u_r(R), u_rr(R)`` of the state on the ball.

    Dirichlet problems use ``u(R) = 0`` with the same flux identity.
    """
    _check_dim(p, src)
    tr = source_traces(src, p.R)
    n, R = p.n, p.R
    ur = -R * tr.fbar / n
    u = R * tr.fbar / (n * p.beta) if p.is_robin else 0.0
    urr = -tr.f_R + (n - 1) / n * tr.fbar
    return BoundaryData(u, ur, urr, tr.fbar, tr.f_R, tr.fr_R, tr.underflow)


def radial_profile(p: BallProblem, src: RadialSource, grid) -> np.ndarray:
    """Radial state ``u(r)`` on the ball, as an ``(m, 2)`` array of ``(r, u)``.

    Uses ``u_r(r) = -(r/n) fbar(r)`` integrated inward from the boundary value.
    """
    _check_dim(p, src)
    r = np.atleast_1d(np.asarray(grid, dtype=float))
    if np.any(r < 0) or np.any(r > p.R * (1 + 1e-14)):
        raise ValueError("profile radii must lie in [0, R]")
    n = p.n
    uR = boundary_data(p, src).u_R

    def flux(s):
        return src.radial_moment(s) / s ** (n - 1) if s > 0 else 0.0

    out = np.empty((r.size, 2))
    for i, ri in enumerate(r):
        tail = integrate.quad(flux, ri, p.R, epsabs=1e-13, epsrel=1e-12, limit=200)[0] if ri < p.R else 0.0
        out[i] = ri, uR + tail
    return out


def abc_decomposition(p: BallProblem, src: RadialSource) -> tuple[float, float, float]:
    """``(A0, A1, A2)`` with stability number ``A0 - beta A1 - A2 / beta``."""
    _check_dim(p, src)
    tr = source_traces(src, p.R)
    return _abc(p.n, p.R, tr)


def _abc(n, R, tr: SourceTraces):
    f, fr, fb = tr.f_R, tr.fr_R, tr.fbar
    A0 = (f - fb) * (f - (n - 1) / n * fb) + R / n * fr * fb
    A1 = R / n * fb * (fb - f)
    A2 = -fr * fb / n + 0.0
    return A0, A1, A2


def stability_lhs(p: BallProblem, src: RadialSource) -> float:
    """Stability number of ``B_R``; the ball is stable iff it is ``<= 0``."""
    if not p.is_robin:
        raise ValueError("stability_lhs needs a Robin problem")
    _check_dim(p, src)
    tr = source_traces(src, p.R)
    return _lhs(p.n, p.R, p.beta, tr)


def _lhs(n, R, beta, tr: SourceTraces) -> float:
    f, fr, fb = tr.f_R, tr.fr_R, tr.fbar
    return (f - (n - 1 - R * beta) / n * fb) * (f - fb) + (1 + beta * R) / (n * beta) * fr * fb


def beta_thresholds(src: RadialSource, n: int, R: float) -> Optional[Thresholds]:
    """Instability window ``(beta1, beta2)``, or ``None`` when stable for every beta."""
    if not src.is_decreasing:
        raise ValueError("thresholds are only defined for radially decreasing sources")
    tr = source_traces(src.with_dimension(n), R)
    return _thresholds(*_abc(n, R, tr), tr.underflow, tr.fbar**2)


def _thresholds(A0, A1, A2, flagged, scale=0.0) -> Optional[Thresholds]:
    disc = A0 * A0 - 4 * A1 * A2
    # coefficients carry quadrature roundoff of order eps * fbar^2
    if A0 <= 2 * math.sqrt(max(A1 * A2, 0.0)) + MARGINAL_TOL * scale:
        return None
    if A1 <= 0:
        raise RobinShapeError(
            f"inconsistent coefficients: A0 = {A0:.6g} > 0 with A1 = {A1:.6g}")
    if A2 == 0.0:
        return Thresholds(0.0, A0 / A1, disc, flagged)
    sq = math.sqrt(disc)
    beta2 = (A0 + sq) / (2 * A1)
    beta1 = 2 * A2 / (A0 + sq)
    return Thresholds(beta1, beta2, disc, flagged)


def classify(src: RadialSource, n: int, R: float, beta: float) -> Classification:
    """Stability verdict for ``(f, n, R, beta)`` together with the rule that decided it."""
    src = src.with_dimension(n)
    tr = source_traces(src, R)
    lhs = _lhs(n, R, beta, tr)
    marginal = abs(lhs) <= MARGINAL_TOL * max(tr.fbar**2, _TINY)
    if not src.is_decreasing:
        verdict = "boundary" if marginal else ("unstable" if lhs > 0 else "stable")
        return Classification(verdict, "direct")
    if tr.f_R >= (n - 1) / n * tr.fbar:
        return Classification("stable-all-beta", "slow-decay")
    if beta * R >= n - 1:
        return Classification("boundary" if marginal else "stable", "large-beta-radius")
    th = _thresholds(*_abc(n, R, tr), tr.underflow, tr.fbar**2)
    if th is None:
        return Classification("stable-all-beta", "discriminant")
    if marginal:
        return Classification("boundary", "window")
    return Classification("unstable" if th.beta1 < beta < th.beta2 else "stable", "window")


def stability_report(p: BallProblem, src: RadialSource) -> StabilityReport:
    """Full stability picture for a Robin ball: number, decomposition, window, verdict."""
    if not p.is_robin:
        raise ValueError("stability_report needs a Robin problem")
    _check_dim(p, src)
    n, R, beta = p.n, p.R, p.beta
    tr = source_traces(src, R)
    lhs = _lhs(n, R, beta, tr)
    A0, A1, A2 = _abc(n, R, tr)
    disc = A0 * A0 - 4 * A1 * A2
    tol = MARGINAL_TOL * tr.fbar**2
    all_beta = A1 >= -tol and A2 >= -tol and A0 <= 2 * math.sqrt(max(A1 * A2, 0.0)) + tol
    th = _thresholds(A0, A1, A2, tr.underflow, tr.fbar**2) if (src.is_decreasing and not all_beta) else None
    cls = classify(src, n, R, beta)
    marginal = abs(lhs) <= MARGINAL_TOL * max(tr.fbar**2, _TINY)
    if marginal:
        verdict = "marginally-stable"
    elif lhs > 0:
        verdict = "unstable"
    elif all_beta:
        verdict = "always-stable"
    else:
        verdict = "stable"
    if verdict == "unstable":
        summary = "unstable"
    else:
        tags = [t for t, on in (("marginal", marginal), ("all β", all_beta)) if on]
        summary = "stable" + (f" ({', '.join(tags)})" if tags else "")
    return StabilityReport(
        lhs=lhs, A0=A0, A1=A1, A2=A2, discriminant=disc,
        beta1=None if th is None else th.beta1,
        beta2=None if th is None else th.beta2,
        verdict=verdict, clause=cls.clause, underflow=tr.underflow, summary=summary)


def sphere_eigenvalue(l: int, n: int, R: float) -> float:
    """Eigenvalue ``l(l+n-2)/R^2`` of ``-Laplace-Beltrami`` on the sphere of radius R."""
    return l * (l + n - 2) / R**2


def mode_second_variation(p: BallProblem, src: RadialSource, l: int) -> ModeSecondVariation:
    """Second variation of the energy for a degree-``l`` normal velocity ``zeta``.

    The shape derivative of the state is ``v = c_l r^l Y_l`` with
    ``c_l = -D / (l R^(l-1) + beta R^l)``, ``D = u_rr(R) - beta^2 u(R)``, and

        Q_l = beta/2 u^2 (lambda_l - (n-1)/R^2) - f_r u + u_r D - R/(l + beta R) D^2.

    ``l = 0`` is excluded: volume preservation forces a mean-free ``zeta``.
    """
    if not p.is_robin:
        raise ValueError("mode_second_variation needs a Robin problem")
    if l < 1:
        raise ValueError("degree must be >= 1 for volume-preserving perturbations")
    bd = boundary_data(p, src)
    n, R, beta = p.n, p.R, p.beta
    lam = sphere_eigenvalue(l, n, R)
    D = bd.urr_R - beta**2 * bd.u_R
    c = -D / (l * R ** (l - 1) + beta * R**l)
    Q = (beta / 2 * bd.u_R**2 * (lam - (n - 1) / R**2)
         - bd.fr_R * bd.u_R
         + bd.ur_R * D
         - R / (l + beta * R) * D**2)
    return ModeSecondVariation(l, lam, c, Q)


def dirichlet_stability(src: RadialSource, R: float) -> str:
    """``strictly-stable`` / ``marginally-stable`` / ``unstable`` for the Dirichlet energy.

    The criterion is ``f(R) <= fbar(R)``.
    """
    tr = source_traces(src, R)
    gap = tr.fbar - tr.f_R
    if abs(gap) <= MARGINAL_TOL * max(abs(tr.fbar), _TINY):
        return "marginally-stable"
    return "strictly-stable" if gap > 0 else "unstable"


def stationarity_constant(p: BallProblem, src: RadialSource) -> float:
    """``-beta^2 u^2 + |grad u|^2/2 + beta/2 u^2 H - f u`` on the sphere ``|x| = R``."""
    if not p.is_robin:
        raise ValueError("stationarity_constant needs a Robin problem")
    bd = boundary_data(p, src)
    H = (p.n - 1) / p.R
    u, beta = bd.u_R, p.beta
    return -beta**2 * u**2 + 0.5 * bd.ur_R**2 + beta / 2 * u**2 * H - bd.f_R * u


def _check_dim(p: BallProblem, src: RadialSource):
    if src.n != p.n:
        raise ValueError(f"source dimension {src.n} does not match problem dimension {p.n}")
