"""Finite element lab for Lipschitz stability of electrical impedance tomography.

Modules
-------
geometry      disk meshes, pixel partitions, boundary parts, electrodes
fem           P1 assembly and gauged Neumann / electrode solves
continuum     Galerkin NtD matrices and their derivatives
cem           complete electrode model and its coupling to continuum currents
analysis      min-max quantities, stability constants, localized potentials
cli           experiment runner
"""
from .coefficients import Conductivity, PerturbationDirection
from .errors import (DegeneratePartitionError, GaugeError, NumericalError, ResourceError,
                     ValidationError)
from .geometry import (build_disk_mesh, build_pixel_partition, make_boundary_part,
                       make_electrodes)

__version__ = "0.1.0"

__all__ = [
    "Conductivity", "PerturbationDirection", "DegeneratePartitionError", "GaugeError",
    "NumericalError", "ResourceError", "ValidationError", "build_disk_mesh",
    "build_pixel_partition", "make_boundary_part", "make_electrodes", "__version__",
]
