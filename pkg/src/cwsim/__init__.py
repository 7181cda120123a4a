"""Coincidence wavefront sensing: simulate, estimate, reconstruct."""

from .core import ComplexField, LatticeSpec, PhysicalConstants
from .errors import CWSError
from .forward import CoincidenceHistogram, IntensitySet, MeasurementAxis, OpticalConfig

__version__ = "0.1.0"

__all__ = [
    "ComplexField", "LatticeSpec", "PhysicalConstants", "CWSError",
    "CoincidenceHistogram", "IntensitySet", "MeasurementAxis", "OpticalConfig", "__version__",
]
