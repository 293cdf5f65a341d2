"""Mixed finite element solvers for 2D time-harmonic elasticity.

The stress is sought in H(div) (conforming BDM elements, ``scheme="cg"``)
or in the broken space P_k^{2x2} with interior-penalty face terms
(``scheme="dg"``); symmetry is imposed weakly through a rotation
multiplier.
"""
from .analysis import ErrorReport, RateTable, compute_errors, convergence_rates, error_dg, error_hdiv, error_rotation
from .assembly import SparseSystem, assemble, assemble_cg, assemble_dg, discrete_trace_ratio, eval_jump_average
from .linsolve import DiscreteSolution, SolveReport, SolverError, solve
from .mesh import Mesh, build_structured_mesh, cell_geometry
from .model import LameParams, ManufacturedSolution, compliance_apply, exact_fields, lame_from_poisson
from .quadrature import edge_rule, triangle_rule
from .spaces import bdm_interpolate, build_bdm_element, build_dofmap, l2_project_rotation, l2_project_scalar

__version__ = "0.1.0"

__all__ = [
    "DiscreteSolution", "ErrorReport", "LameParams", "ManufacturedSolution", "Mesh", "RateTable",
    "SolveReport", "SolverError", "SparseSystem", "assemble", "assemble_cg", "assemble_dg",
    "bdm_interpolate", "build_bdm_element", "build_dofmap", "build_structured_mesh", "cell_geometry",
    "compliance_apply", "compute_errors", "convergence_rates", "discrete_trace_ratio", "edge_rule",
    "error_dg", "error_hdiv", "error_rotation", "eval_jump_average", "exact_fields", "l2_project_rotation",
    "l2_project_scalar", "lame_from_poisson", "solve", "triangle_rule",
]
