"""Numerical construction of stacked-plane self-shrinkers.

Modules
-------
specfun   Kummer and Tricomi confluent hypergeometric functions.
rld       Rotationally invariant solutions, distinguished radii, profiles.
ld        Linearised doubling solutions, mismatches, obstruction functions.
balance   Matching parameters and their Newton solve.
geometry  Gaussian metric, Fermi map, catenoidal bridges, residuals.
mesh      Triangulated initial surface, topology, symmetry, export.
checks    Invariant suite used by the command line.
cli       Command line interface.
"""

__version__ = "0.1.0"

from . import balance, geometry, ld, mesh, rld, specfun  # noqa: E402
from .balance import NewtonResult, ParamVector, newton_solve  # noqa: E402
from .geometry import prepare_surface  # noqa: E402
from .mesh import SurfaceMesh, build_initial_surface  # noqa: E402
from .rld import find_roots  # noqa: E402

__all__ = [
    "__version__",
    "balance",
    "geometry",
    "ld",
    "mesh",
    "rld",
    "specfun",
    "NewtonResult",
    "ParamVector",
    "newton_solve",
    "prepare_surface",
    "SurfaceMesh",
    "build_initial_surface",
    "find_roots",
]
