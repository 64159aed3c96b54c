"""Radially symmetric heat sources.

A source is ``f(x) = f(|x|)`` on R^n. Four families are supported:

* ``constant``   -- ``f = c``
* ``gaussian``   -- ``f = delta**-n * exp(-pi r^2 / delta^2)``, unit mass on R^n
* ``polynomial`` -- ``f = sum_i c_i r^(2i)`` (a polynomial in ``r^2``)
* ``tabulated``  -- monotone cubic (PCHIP) interpolation of samples on ``[0, r_end]``

Sources are immutable. Evaluation is vectorised over ``r``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any

import numpy as np
from numpy.polynomial import polynomial as P
from scipy import integrate
from scipy.interpolate import PchipInterpolator
from scipy.special import gamma, gammainc

from .errors import QuadratureError, SourceRangeError

KINDS = ("constant", "gaussian", "polynomial", "tabulated")

_N_VALIDATE = 257


def ball_volume(n: int, R: float) -> float:
    """Lebesgue measure of the n-ball of radius R."""
    return math.pi ** (n / 2) * R**n / gamma(n / 2 + 1)


def sphere_area(n: int, R: float) -> float:
    """Surface measure of the sphere of radius R in R^n."""
    return n * ball_volume(n, R) / R


@dataclass(frozen=True)
class BallAverage:
    """Mean of a source over the centred ball ``B_R``."""

    R: float
    fbar: float


@dataclass(frozen=True)
class RadialSource:
    """A positive radial heat source.

    Parameters
    ----------
    kind : str
        One of ``constant``, ``gaussian``, ``polynomial``, ``tabulated``.
    params : dict
        ``{"c": float}``, ``{"delta": float}``, ``{"coeffs": [c0, c1, ...]}``
        or ``{"r": [...], "f": [...]}`` respectively.
    n : int
        Space dimension (>= 2).
    floor : float
        Positivity floor; sampled values must exceed it.
    r_max : float
        End of the working range used for validation. Ignored for
        tabulated sources, whose range is the table.
    """

    kind: str
    params: dict
    n: int = 2
    floor: float = 0.0
    r_max: float = 1.0
    _interp: Any = field(default=None, init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown source kind {self.kind!r}; expected one of {KINDS}")
        if int(self.n) != self.n or self.n < 2:
            raise ValueError(f"dimension must be an integer >= 2, got {self.n}")
        if self.floor < 0:
            raise ValueError("positivity floor must be >= 0")
        p = dict(self.params)
        if self.kind == "constant":
            if float(p.get("c", 0.0)) <= 0:
                raise ValueError("constant source needs c > 0")
        elif self.kind == "gaussian":
            if float(p.get("delta", 0.0)) <= 0:
                raise ValueError("gaussian source needs delta > 0")
        elif self.kind == "polynomial":
            if not p.get("coeffs"):
                raise ValueError("polynomial source needs a non-empty coeffs list")
        else:
            r = np.asarray(p.get("r", []), dtype=float)
            f = np.asarray(p.get("f", []), dtype=float)
            if r.ndim != 1 or r.size < 2 or r.shape != f.shape:
                raise ValueError("tabulated source needs matching 1-D 'r' and 'f' arrays")
            if r[0] != 0.0 or np.any(np.diff(r) <= 0):
                raise ValueError("tabulated radii must start at 0 and increase strictly")
            object.__setattr__(self, "_interp", PchipInterpolator(r, f, extrapolate=False))
        self._validate_positive()

    # -- construction helpers ------------------------------------------------

    @classmethod
    def constant(cls, c: float = 1.0, n: int = 2, **kw) -> "RadialSource":
        return cls("constant", {"c": float(c)}, n, **kw)

    @classmethod
    def gaussian(cls, delta: float, n: int = 2, **kw) -> "RadialSource":
        return cls("gaussian", {"delta": float(delta)}, n, **kw)

    @classmethod
    def polynomial(cls, coeffs, n: int = 2, **kw) -> "RadialSource":
        return cls("polynomial", {"coeffs": [float(c) for c in coeffs]}, n, **kw)

    @classmethod
    def tabulated(cls, r, f, n: int = 2, **kw) -> "RadialSource":
        return cls("tabulated", {"r": [float(x) for x in r], "f": [float(x) for x in f]}, n, **kw)

    @classmethod
    def from_spec(cls, spec: dict) -> "RadialSource":
        """Build a source from its JSON description."""
        kw = {k: spec[k] for k in ("floor", "r_max") if k in spec}
        return cls(spec["kind"], dict(spec.get("params", {})), int(spec.get("n", 2)), **kw)

    def to_spec(self) -> dict:
        return {"kind": self.kind, "params": dict(self.params), "n": self.n,
                "floor": self.floor, "r_max": self.r_max}

    def with_dimension(self, n: int) -> "RadialSource":
        return RadialSource(self.kind, dict(self.params), n, self.floor, self.r_max)

    # -- evaluation ------------------------------------------------------------

    @property
    def r_range(self) -> tuple[float, float]:
        if self.kind == "tabulated":
            r = self.params["r"]
            return 0.0, float(r[-1])
        return 0.0, math.inf

    def _check_range(self, r: np.ndarray):
        if np.any(r < 0):
            raise SourceRangeError("radius must be non-negative")
        lo, hi = self.r_range
        if np.any(r > hi * (1 + 1e-14)):
            raise SourceRangeError(f"radius {float(np.max(r))} outside tabulated range [0, {hi}]")

    def value(self, r):
        """``f(r)``; a float for scalar input."""
        r_arr = np.asarray(r, dtype=float)
        self._check_range(r_arr)
        if self.kind == "constant":
            out = np.full_like(r_arr, float(self.params["c"]))
        elif self.kind == "gaussian":
            d = float(self.params["delta"])
            out = d ** (-self.n) * np.exp(-math.pi * r_arr**2 / d**2)
        elif self.kind == "polynomial":
            out = P.polyval(r_arr**2, self.params["coeffs"])
        else:
            out = self._interp(np.minimum(r_arr, self.r_range[1]))
        return float(out) if np.ndim(out) == 0 else out

    def radial_derivative(self, r):
        """``f_r(r) = df/dr``."""
        r_arr = np.asarray(r, dtype=float)
        self._check_range(r_arr)
        if self.kind == "constant":
            out = np.zeros_like(r_arr)
        elif self.kind == "gaussian":
            d = float(self.params["delta"])
            out = -2 * math.pi * r_arr / d**2 * (d ** (-self.n) * np.exp(-math.pi * r_arr**2 / d**2))
        elif self.kind == "polynomial":
            dc = P.polyder(self.params["coeffs"])
            out = 2 * r_arr * P.polyval(r_arr**2, dc)
        else:
            out = self._interp.derivative()(np.minimum(r_arr, self.r_range[1]))
        return float(out) if np.ndim(out) == 0 else out

    def value_at(self, x, shift=(0.0, 0.0)):
        """Evaluate ``f(|x + shift|)`` at planar points ``x`` of shape (..., 2)."""
        if self.n != 2:
            raise ValueError("off-centre evaluation is only defined for n = 2")
        x = np.asarray(x, dtype=float)
        s = np.asarray(shift, dtype=float)
        return self.value(np.hypot(x[..., 0] + s[0], x[..., 1] + s[1]))

    # -- properties --------------------------------------------------------------

    def _sample_grid(self) -> np.ndarray:
        hi = self.r_range[1] if self.kind == "tabulated" else self.r_max
        return np.linspace(0.0, hi, _N_VALIDATE)

    def _validate_positive(self):
        if self.kind == "gaussian":
            return  # positive in closed form; tails underflow harmlessly
        vals = np.atleast_1d(self.value(self._sample_grid()))
        if not np.all(vals > self.floor):
            raise ValueError(
                f"{self.kind} source is not above the floor {self.floor} on its working range "
                f"(min sampled value {float(vals.min()):.6g})")

    @property
    def is_decreasing(self) -> bool:
        """True when ``f_r <= 0`` on the sampled working range."""
        if self.kind in ("constant", "gaussian"):
            return True
        r = self._sample_grid()
        scale = max(float(np.max(np.abs(self.value(r)))), 1e-300)
        return bool(np.all(self.radial_derivative(r) <= 1e-12 * scale))

    def ball_mean(self, R: float) -> BallAverage:
        """``fbar(R) = n R^-n int_0^R f(s) s^(n-1) ds`` by adaptive Gauss-Kronrod quadrature."""
        if R <= 0:
            raise ValueError("ball radius must be positive")
        return BallAverage(float(R), self.n * self.radial_moment(R) / R**self.n)

    def radial_moment(self, r: float) -> float:
        """``int_0^r f(s) s^(n-1) ds``."""
        if r == 0:
            return 0.0
        self._check_range(np.asarray(r))
        n = self.n

        def integrand(s):
            return self.value(s) * s ** (n - 1)

        s = np.linspace(0.0, r, 65)
        scale = max(float(np.max(np.abs(self.value(s) * s ** (n - 1)))) * r, 1e-300)
        points = None
        if self.kind == "gaussian":
            d = float(self.params["delta"])
            points = [p for p in (d, 3 * d) if p < r] or None
        elif self.kind == "tabulated":
            points = [p for p in self.params["r"][1:-1] if p < r][:40] or None
        val, err, info = integrate.quad(integrand, 0.0, r, epsabs=1e-12 * scale,
                                        epsrel=1e-13, limit=400, points=points,
                                        full_output=1)[:3]
        if err > 1e-9 * scale:
            raise QuadratureError(
                f"ball quadrature did not converge on [0, {r}]",
                {"estimate": val, "abs_error": err, "scale": scale,
                 "neval": info.get("neval"), "kind": self.kind})
        return float(val)


def gaussian_ball_mean_exact(delta: float, n: int, R: float) -> float:
    """Closed form ``fbar`` for the gaussian family: ``P(n/2, pi R^2/delta^2) / |B_R|``."""
    return float(gammainc(n / 2, math.pi * R**2 / delta**2) / ball_volume(n, R))
