"""Discontinuous Galerkin solvers for tempered fractional advection-diffusion."""

from __future__ import annotations

from .errors import TemperedDGError
from .tempered_calc import TemperedParams, riesz_constants

__all__ = ["TemperedDGError", "TemperedParams", "riesz_constants"]
__version__ = "0.1.0"
