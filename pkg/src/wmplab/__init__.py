"""Finite-element laboratory for weak maximum principles of heat equations.

Modules: `mesh` (polygons, triangulations, regions), `fem` (Lagrange spaces
and operators), `stepper` (BDF-k, dG(0), semi-discrete proxy), `symbol`
(generating functions and contour quadrature), `green` (discrete Green's
functions), `harness` and `acceptance` (experiments), `io` and `cli`.
"""

from .fem import FeSpace, build_space, construct_regularized_delta, discrete_delta, norm
from .mesh import Mesh, Polygon, build_polygon_mesh, domain_mesh, lshape, refine_uniform, unit_square
from .stepper import BoundaryData, TimeGrid, Trajectory, bdf_solve, dg0_solve, starting_values

__version__ = "0.1.0"

__all__ = [
    "FeSpace",
    "build_space",
    "construct_regularized_delta",
    "discrete_delta",
    "norm",
    "Mesh",
    "Polygon",
    "build_polygon_mesh",
    "domain_mesh",
    "lshape",
    "refine_uniform",
    "unit_square",
    "BoundaryData",
    "TimeGrid",
    "Trajectory",
    "bdf_solve",
    "dg0_solve",
    "starting_values",
]
