"""Steady vortex pairs in the half-plane as energy-impulse maximizers over
rearrangement classes, with transport experiments for their stability."""

from vortexpair.field import GridSpec, ScalarField, NormReport
from vortexpair.rearrange import RearrangementProfile

__version__ = "0.1.0"

__all__ = ["GridSpec", "ScalarField", "NormReport", "RearrangementProfile", "__version__"]
