"""Periodic homogenization of a 2-D scalar contact problem with Q1 finite elements."""

from .assembly import Laminate, MicrostructureSpec, assemble_stiffness, sample_coefficient
from .cell import CorrectorSet, homogenized_tensor, solve_correctors
from .contact import (
    ContactProblemSpec,
    FixedPointError,
    SolvabilityError,
    fixed_point_solve,
    robin_solve,
    solve_fine,
    solve_homogenized,
)
from .linsolve import ConvergenceError, SolverConfig, cg_solve, cg_solve_projected
from .mesh import BoundaryPartition, StructuredMesh, build_cell_mesh, build_domain_mesh
from .metrics import ErrorReport, err0, err1, err2, error_report, estimate_rate
from .recon import reconstruct

__version__ = "0.1.0"

__all__ = [
    "BoundaryPartition",
    "ContactProblemSpec",
    "ConvergenceError",
    "ErrorReport",
    "CorrectorSet",
    "FixedPointError",
    "Laminate",
    "MicrostructureSpec",
    "SolvabilityError",
    "SolverConfig",
    "StructuredMesh",
    "assemble_stiffness",
    "build_cell_mesh",
    "build_domain_mesh",
    "cg_solve",
    "cg_solve_projected",
    "err0",
    "err1",
    "err2",
    "error_report",
    "estimate_rate",
    "fixed_point_solve",
    "homogenized_tensor",
    "reconstruct",
    "robin_solve",
    "sample_coefficient",
    "solve_correctors",
    "solve_fine",
    "solve_homogenized",
]
