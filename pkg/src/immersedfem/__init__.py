"""2D immersed finite-element workbench for the Poisson problem.

Cross-validates three small-cut-element treatments: Schwarz preconditioning,
ghost-penalty stabilization, and element aggregation.
"""

__version__ = "0.1.0"

from .geometry import (BackgroundMesh, Circle, Corner, Plane, Annulus,
                       classify_elements, ghost_faces, parse_geometry,
                       volume_fraction)
from .quadrature import QuadConfig, cut_quadrature, gauss_legendre
from .spaces import (aggregate, build_constraints, build_space, classify_dofs,
                     interpolate, shape_eval)
from .assembly import (ProblemSpec, StabilizationSpec, assemble,
                       manufactured_solution, nitsche_parameter_local, norms)
from .solvers import (build_schwarz, condition_number, jacobi_scale, pcg,
                      select_blocks)
from .studies import StudyConfig, StudyRow, emit, run_study

__all__ = [
    "BackgroundMesh", "Circle", "Corner", "Plane", "Annulus",
    "classify_elements", "ghost_faces", "parse_geometry", "volume_fraction",
    "QuadConfig", "cut_quadrature", "gauss_legendre",
    "aggregate", "build_constraints", "build_space", "classify_dofs",
    "interpolate", "shape_eval",
    "ProblemSpec", "StabilizationSpec", "assemble", "manufactured_solution",
    "nitsche_parameter_local", "norms",
    "build_schwarz", "condition_number", "jacobi_scale", "pcg", "select_blocks",
    "StudyConfig", "StudyRow", "emit", "run_study",
]
