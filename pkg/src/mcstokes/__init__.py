"""2D mass-conserving mixed-stress Stokes solver with static condensation
and auxiliary-space preconditioned Krylov solution."""

from .mesh import (BoundaryRegions, Mesh, build_structured, classify_boundary,
                   from_arrays, refine_uniform)
from .dofmap import FeSystem, build_dof_maps
from .condensation import CondensedSystem, condense_sigma_omega, double_schur
from .driver import RunRecord, SolveResult, SolverOptions, run_solve, run_spectrum
from .krylov import KrylovReport, cg, gmres, lanczos_spectrum
from .problems import make_problem

__all__ = [
    "BoundaryRegions", "Mesh", "build_structured", "classify_boundary",
    "from_arrays", "refine_uniform", "FeSystem", "build_dof_maps",
    "CondensedSystem", "condense_sigma_omega", "double_schur",
    "RunRecord", "SolveResult", "SolverOptions", "run_solve", "run_spectrum",
    "KrylovReport", "cg", "gmres", "lanczos_spectrum", "make_problem",
]

__version__ = "0.1.0"
