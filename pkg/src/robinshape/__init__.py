"""Numerical toolkit for the stability of the centred ball under Robin heat energies."""

from .sources import RadialSource, ball_volume, sphere_area
from .ball import (BallProblem, StabilityReport, stability_lhs, stability_report, classify,
                   beta_thresholds, mode_second_variation)

__all__ = ["RadialSource", "ball_volume", "sphere_area", "BallProblem", "StabilityReport",
           "stability_lhs", "stability_report", "classify", "beta_thresholds",
           "mode_second_variation"]

__version__ = "0.1.0"
