"""Optimized Schwarz method lab for P1 Helmholtz problems in two dimensions.

The package assembles subdomain Helmholtz operators on a partitioned
triangular mesh, builds impedance, exchange and scattering operators on the
multi-trace space, solves the skeleton equation ``(Id + Pi S) q = g`` and
evaluates the constants of the associated convergence theory.
"""
from .fem import ConstantSource, MediumSpec, PlaneWaveSource
from .impedance import ImpedanceOperator, ImpedanceSpec, build_impedance
from .mesh import (
    Mesh,
    Partition,
    box_partition,
    build_partition,
    extract_topology,
    load_mesh,
    load_partition,
    structured_square_mesh,
)
from .traces import TraceSpaces

__version__ = "0.1.0"
