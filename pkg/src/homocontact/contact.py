"""Fixed-point solver for the Robin / partial-Robin contact problem and the linear Robin problem.

Discrete contact problem on the free (non-Dirichlet) nodes::

    K u + alpha M' u + alpha M'' max(u, 0) = b

with ``M'`` and ``M''`` the boundary mass matrices of the Robin and
partial-Robin segments.  The positive part is taken nodewise.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np
import scipy.sparse as sp

from .assembly import (
    MicrostructureSpec,
    apply_dirichlet,
    assemble_boundary_mass,
    assemble_load,
    assemble_stiffness,
    boundary_integrals,
    sample_coefficient,
)
from .linsolve import CGResult, SolverConfig, cg_solve, make_preconditioner, pow2_scale
from .mesh import (
    DIRICHLET,
    NEUMANN,
    PARTIAL_ROBIN,
    ROBIN,
    BoundaryPartition,
    StructuredMesh,
    build_domain_mesh,
)

log = logging.getLogger(__name__)


class SolvabilityError(ValueError):
    """The coefficient does not dominate the boundary nonlinearity (kappa_min <= |alpha|)."""


class FixedPointError(RuntimeError):
    def __init__(self, message: str, report: FixedPointReport):
        super().__init__(message)
        self.report = report


@dataclass(frozen=True)
class ContactProblemSpec:
    """Constant data of the contact problem.

    ``semi_implicit`` keeps the linear Robin mass on the left-hand side of
    each fixed-point step instead of moving the whole boundary term right.
    """

    f: float = 1.0
    g: float = 1.0
    alpha: float = 0.5
    partition: BoundaryPartition = field(default_factory=BoundaryPartition.contact)
    semi_implicit: bool = False


@dataclass
class FixedPointReport:
    iterations: int = 0
    updates: list[float] = field(default_factory=list)
    ratios: list[float] = field(default_factory=list)
    cg_iterations: list[int] = field(default_factory=list)
    converged: bool = False
    final_update: float = float("inf")

    @property
    def asymptotic_ratio(self) -> float:
        tail = [r for r in self.ratios[-3:] if np.isfinite(r)]
        return float(np.mean(tail)) if tail else float("nan")


def effective_ellipticity(field: np.ndarray, tensor: np.ndarray | None = None) -> float:
    """Smallest eigenvalue of the active coefficient ``kappa_e * T`` over all elements."""
    lam = 1.0 if tensor is None else float(np.linalg.eigvalsh(0.5 * (tensor + tensor.T))[0])
    return float(np.min(field)) * lam


def check_solvability(field: np.ndarray, tensor: np.ndarray | None, alpha: float) -> None:
    # trace constant c_j <= 1 for the unit square with the top side clamped
    k = effective_ellipticity(field, tensor)
    if not k > abs(alpha):
        raise SolvabilityError(
            f"solvability gate fails: min eigenvalue {k:.6g} of the coefficient "
            f"must exceed |alpha| = {abs(alpha):.6g}"
        )


@dataclass(eq=False)
class ContactSystem:
    """Assembled discrete contact problem restricted to the free nodes."""

    mesh: StructuredMesh
    stiffness: sp.csr_matrix
    robin_mass: sp.csr_matrix
    partial_mass: sp.csr_matrix
    load: np.ndarray
    free: np.ndarray
    alpha: float
    semi_implicit: bool = False

    @property
    def n_free(self) -> int:
        return self.free.size

    def lhs(self) -> sp.csr_matrix:
        if self.semi_implicit:
            return (self.stiffness + self.alpha * (self.robin_mass + self.partial_mass)).tocsr()
        return self.stiffness

    def nonlinearity(self, u: np.ndarray) -> np.ndarray:
        """Boundary contribution ``r_h(u) = -alpha M' u - alpha M'' u^+``."""
        return boundary_nonlinearity(u, self.robin_mass, self.partial_mass, self.alpha)

    def residual(self, u: np.ndarray) -> np.ndarray:
        return self.stiffness @ u - self.load - self.nonlinearity(u)

    def step_rhs(self, u: np.ndarray) -> np.ndarray:
        if self.semi_implicit:
            return self.load + self.alpha * (self.partial_mass @ np.minimum(u, 0.0))
        return self.load + self.nonlinearity(u)

    def expand(self, u_free: np.ndarray) -> np.ndarray:
        u = np.zeros(self.mesh.n_nodes)
        u[self.free] = u_free
        return u


def boundary_nonlinearity(
    u: np.ndarray, robin_mass: sp.spmatrix, partial_mass: sp.spmatrix, alpha: float
) -> np.ndarray:
    """``-alpha int_{C'} u phi_i - alpha int_{C''} u^+ phi_i`` with ``u^+`` taken nodewise."""
    return -alpha * (robin_mass @ u + partial_mass @ np.maximum(u, 0.0))


def assemble_contact_system(
    mesh: StructuredMesh,
    field: np.ndarray,
    tensor: np.ndarray | None,
    spec: ContactProblemSpec,
) -> ContactSystem:
    K = assemble_stiffness(mesh, field, tensor)
    b = assemble_load(mesh, spec.f, spec.g, (NEUMANN,))
    red = apply_dirichlet(K, b, mesh.tagged_nodes(DIRICHLET))
    free = red.free
    m1 = assemble_boundary_mass(mesh, ROBIN)[free][:, free].tocsr()
    m2 = assemble_boundary_mass(mesh, PARTIAL_ROBIN)[free][:, free].tocsr()
    return ContactSystem(mesh, red.matrix, m1, m2, red.rhs, free, spec.alpha, spec.semi_implicit)


def fixed_point_solve(
    system: ContactSystem,
    tol: float = 1e-10,
    max_iter: int = 200,
    cfg: SolverConfig | None = None,
    u0: np.ndarray | None = None,
    on_iterate: Callable[[np.ndarray], None] | None = None,
    inner_reduction: float | None = 1e-3,
) -> tuple[np.ndarray, FixedPointReport]:
    """Iterate ``A_h u^{n+1} = b_h + r_h(u^n)`` until the relative update drops below ``tol``.

    The update is measured in the energy norm of the (fixed) left-hand side
    matrix.  Each linear solve is warm-started from the previous iterate and
    reuses one preconditioner.  ``cfg`` defaults to CG with relative
    tolerance ``tol / 100``.

    With ``inner_reduction`` set, a step's CG stops once its warm-start
    residual has shrunk by that factor (or reached the ``cfg`` tolerance,
    whichever is looser).  Inner errors then decay with the outer updates and
    the limit is unchanged; ``None`` solves every step to ``cfg`` tolerance.

    Returns the nodal solution on the full mesh (zeros on Gamma_D) and the
    iteration report.
    """
    cfg = cfg or SolverConfig(rel_tolerance=min(1e-10, tol * 1e-2))
    A = system.lhs()
    precond = make_preconditioner(A, cfg.preconditioner)
    report = FixedPointReport()

    def solve(rhs, x0):
        step_cfg = cfg
        if inner_reduction is not None:
            rnorm = np.linalg.norm(rhs)
            start = np.linalg.norm(rhs - A @ x0) / rnorm if rnorm > 0 else 0.0
            rel = min(max(cfg.rel_tolerance, inner_reduction * start), 0.5)
            step_cfg = replace(cfg, rel_tolerance=rel)
        res: CGResult = cg_solve(A, rhs, step_cfg, x0=x0, precond=precond)
        report.cg_iterations.append(res.iterations)
        return res.x

    # the problem is positively homogeneous: iterate on O(1) data, rescale at the end
    scale = pow2_scale(system.load)
    if scale != 1.0:
        system = replace(system, load=system.load / scale)
        if on_iterate is not None:
            user_cb = on_iterate

            def on_iterate(v):
                user_cb(scale * v)

    u = np.zeros(system.n_free) if u0 is None else np.asarray(u0, dtype=float)[system.free] / scale

    if system.alpha == 0.0:
        # r_h vanishes identically: a single linear solve is the exact fixed point
        res = cg_solve(A, system.load, cfg, x0=u, precond=precond)
        report.cg_iterations.append(res.iterations)
        u = res.x
        report.iterations, report.converged, report.final_update = 1, True, 0.0
        return system.expand(scale * u), report

    def enorm(v):
        return float(np.sqrt(max(v @ (A @ v), 0.0)))

    prev_update = None
    for n in range(1, max_iter + 1):
        u_new = solve(system.step_rhs(u), u)
        d = enorm(u_new - u)
        base = enorm(u)
        report.iterations = n
        report.updates.append(d)
        if prev_update is not None:
            report.ratios.append(d / prev_update if prev_update > 0 else 0.0)
        prev_update = d
        u = u_new
        if on_iterate is not None:
            on_iterate(system.expand(u))
        if base > 0:
            report.final_update = d / base
            if d < tol * base:
                report.converged = True
                break
        elif d == 0.0:
            report.final_update = 0.0
            report.converged = True
            break
    report.updates = [scale * d for d in report.updates]
    log.debug("fixed point: %d iterations, final update %.3e", report.iterations, report.final_update)
    if not report.converged:
        raise FixedPointError(
            f"fixed-point iteration did not converge in {max_iter} steps "
            f"(relative update {report.final_update:.3e})",
            report,
        )
    return system.expand(scale * u), report


def _isotropic(tensor: np.ndarray) -> float | None:
    t = np.asarray(tensor, dtype=float)
    if t[0, 1] == 0.0 and t[1, 0] == 0.0 and t[0, 0] == t[1, 1]:
        return float(t[0, 0])
    return None


def solve_fine(
    spec: ContactProblemSpec,
    micro: MicrostructureSpec,
    N: int,
    M: int,
    mesh: StructuredMesh | None = None,
    tol: float = 1e-10,
    max_iter: int = 200,
    cfg: SolverConfig | None = None,
) -> tuple[np.ndarray, FixedPointReport]:
    """Contact problem with the oscillating coefficient ``kappa(x N)`` on the ``NM`` grid."""
    mesh = mesh or build_domain_mesh(N, M, spec.partition, getattr(micro, "rho", None))
    field = sample_coefficient(micro, mesh, N)
    check_solvability(field, None, spec.alpha)
    system = assemble_contact_system(mesh, field, None, spec)
    return fixed_point_solve(system, tol, max_iter, cfg)


def solve_homogenized(
    spec: ContactProblemSpec,
    tensor: np.ndarray,
    N: int,
    M: int,
    mesh: StructuredMesh | None = None,
    tol: float = 1e-10,
    max_iter: int = 200,
    cfg: SolverConfig | None = None,
) -> tuple[np.ndarray, FixedPointReport]:
    """Contact problem with the constant tensor ``tensor`` on the same ``NM`` grid."""
    mesh = mesh or build_domain_mesh(N, M, spec.partition)
    field, tensor = _split_tensor(mesh, tensor)
    check_solvability(field, tensor, spec.alpha)
    system = assemble_contact_system(mesh, field, tensor, spec)
    return fixed_point_solve(system, tol, max_iter, cfg)


def _split_tensor(mesh: StructuredMesh, tensor: np.ndarray):
    # an isotropic tensor goes through the scalar-field path so results match
    # the oscillating solver exactly when the coefficient is constant
    t = np.asarray(tensor, dtype=float)
    iso = _isotropic(t)
    if iso is not None:
        return np.full(mesh.n_elements, iso), None
    return np.ones(mesh.n_elements), t


def robin_boundary_mass(mesh: StructuredMesh, alpha: float | Callable = 1.0) -> sp.csr_matrix:
    """``alpha``-weighted mass over the whole boundary, regardless of tags."""
    total = sp.csr_matrix((mesh.n_nodes, mesh.n_nodes))
    for tag in sorted(set(mesh.edge_tags)):
        total = total + assemble_boundary_mass(mesh, tag, alpha)
    return total.tocsr()


def robin_solve(
    mesh: StructuredMesh,
    field: np.ndarray | None,
    tensor: np.ndarray | None,
    alpha: float | Callable,
    f: float,
    g: float,
    cfg: SolverConfig | None = None,
) -> tuple[np.ndarray, CGResult]:
    """Solve ``int A grad u . grad v + int_Gamma alpha u v = int f v + int_Gamma g v``.

    Every boundary edge of ``mesh`` is treated as Robin, whatever its tag.
    ``alpha`` is a positive constant or a callable of boundary points
    (evaluated at edge midpoints).
    """
    mid = mesh.node_coords[mesh.boundary_edges].mean(axis=1)
    a = alpha(mid) if callable(alpha) else np.full(len(mid), float(alpha))
    if np.any(np.asarray(a) <= 0):
        raise ValueError("Robin coefficient must be positive on the whole boundary")
    if field is None and tensor is not None:
        field, tensor = _split_tensor(mesh, tensor)
    A = (assemble_stiffness(mesh, field, tensor) + robin_boundary_mass(mesh, alpha)).tocsr()
    b = assemble_load(mesh, f, 0.0)
    if g != 0.0:
        b += g * boundary_integrals(mesh, sorted(set(mesh.edge_tags)))
    res = cg_solve(A, b, cfg or SolverConfig())
    return res.x, res


def write_solution(mesh: StructuredMesh, u: np.ndarray, out, csv: bool = False) -> None:
    """Nodal field as ``x y u`` lines, or CSV with an ``x,y,u`` header."""
    sep = "," if csv else " "
    if csv:
        out.write("x,y,u\n")
    for (x, y), v in zip(mesh.node_coords, u):
        out.write(f"{x:.17g}{sep}{y:.17g}{sep}{v:.17g}\n")


__all__ = [
    "ContactProblemSpec",
    "ContactSystem",
    "FixedPointError",
    "FixedPointReport",
    "SolvabilityError",
    "assemble_contact_system",
    "boundary_nonlinearity",
    "check_solvability",
    "effective_ellipticity",
    "fixed_point_solve",
    "robin_boundary_mass",
    "robin_solve",
    "solve_fine",
    "solve_homogenized",
    "write_solution",
]
