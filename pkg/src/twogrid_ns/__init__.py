"""Two-grid mixed finite element solver for transient incompressible Navier-Stokes."""

from .mesh import Mesh, build_structured_mesh, locate_point, locate_points
from .space import DofMap, FeFunction, QuadratureRule, build_dof_map, evaluate, interpolate, p2_basis, quadrature_rule
from .assembly import (
    AssembledForms,
    TrilinearOperator,
    apply_dirichlet,
    assemble_load,
    assemble_static,
    assemble_trilinear_matrices,
    trilinear_vector,
)
from .linalg import Factorization, SaddleSystem, SingularMatrixError, factorize, saddle_solve
from .mms import ErrorReport, ManufacturedCase, error_norms, exact_fields, forcing, get_case, rate
from .twogrid import NewtonDivergence, SimulationConfig, StepFailure, TimeStepState, initial_projection, run

__version__ = "0.1.0"
