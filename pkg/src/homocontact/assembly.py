"""Q1 finite element assembly on structured meshes.

All volume integrals use the 2x2 Gauss rule; the element coefficient is a
scalar ``kappa_e`` times an optional constant 2x2 tensor, which covers both
the oscillating problem (``kappa_e``, identity tensor) and the homogenized one
(unit field, full tensor).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
import scipy.sparse as sp

from .mesh import KNOWN_TAGS, NEUMANN, StructuredMesh, locate_cell

# Gauss points on the unit reference square, index q = a + 2 b.
_G = 0.5 / np.sqrt(3.0)
_G1 = np.array([0.5 - _G, 0.5 + _G])
GAUSS_POINTS = np.array([[_G1[a], _G1[b]] for b in range(2) for a in range(2)])
GAUSS_WEIGHTS = np.full(4, 0.25)

# Local node positions, counterclockwise from (0, 0).
_CORNERS = np.array([[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]])


def shape_values(xi: np.ndarray) -> np.ndarray:
    """Bilinear shape functions at reference points ``xi`` (..., 2) -> (..., 4)."""
    xi = np.asarray(xi, dtype=float)
    s, t = xi[..., 0:1], xi[..., 1:2]
    cx, cy = _CORNERS[:, 0], _CORNERS[:, 1]
    return (cx * s + (1 - cx) * (1 - s)) * (cy * t + (1 - cy) * (1 - t))


def shape_gradients(xi: np.ndarray) -> np.ndarray:
    """Reference gradients of the shape functions, shape (..., 4, 2)."""
    xi = np.asarray(xi, dtype=float)
    s, t = xi[..., 0:1], xi[..., 1:2]
    cx, cy = _CORNERS[:, 0], _CORNERS[:, 1]
    fx = cx * s + (1 - cx) * (1 - s)
    fy = cy * t + (1 - cy) * (1 - t)
    dfx = 2 * cx - 1
    dfy = 2 * cy - 1
    return np.stack([dfx * fy, fx * dfy], axis=-1)


SHAPE_AT_GAUSS = shape_values(GAUSS_POINTS)  # (q, a)
GRAD_AT_GAUSS = shape_gradients(GAUSS_POINTS)  # (q, a, d), reference coordinates


def physical_gradients(mesh: StructuredMesh) -> np.ndarray:
    """Shape gradients at the Gauss points of any element of ``mesh``, (q, a, d)."""
    return GRAD_AT_GAUSS / np.array([mesh.hx, mesh.hy])


def element_stiffness(hx: float, hy: float, tensor: np.ndarray | None = None) -> np.ndarray:
    """4x4 matrix of ``int_e T grad(phi_b) . grad(phi_a)`` on an ``hx`` x ``hy`` element."""
    T = np.eye(2) if tensor is None else np.asarray(tensor, dtype=float)
    G = GRAD_AT_GAUSS / np.array([hx, hy])
    return hx * hy * np.einsum("q,qai,ij,qbj->ab", GAUSS_WEIGHTS, G, T, G)


# ---------------------------------------------------------------------------
# coefficients


@dataclass(frozen=True)
class MicrostructureSpec:
    """Two-phase cell: ``kappa2`` on the square inclusion ``[rho, 1-rho]^2``, ``kappa1`` elsewhere."""

    kappa1: float = 1.0
    kappa2: float = 2.0
    rho: float = 0.25

    def __post_init__(self):
        if not (self.kappa1 > 0 and self.kappa2 > 0):
            raise ValueError("phase coefficients must be positive")
        if not 0.0 < self.rho < 0.5:
            raise ValueError(f"inclusion inset rho={self.rho} must lie in (0, 1/2)")

    kind = "inclusion"

    @property
    def bounds(self) -> tuple[float, float]:
        return min(self.kappa1, self.kappa2), max(self.kappa1, self.kappa2)

    def value_at(self, y: np.ndarray) -> np.ndarray:
        y = np.asarray(y, dtype=float)
        inside = np.all((y >= self.rho) & (y <= 1.0 - self.rho), axis=-1)
        return np.where(inside, self.kappa2, self.kappa1)

    def volume_fraction(self) -> float:
        return (1.0 - 2.0 * self.rho) ** 2


@dataclass(frozen=True)
class Laminate:
    """Layered cell ``a(y1)``: ``kappa1`` for ``y1 < 1/2``, ``kappa2`` otherwise."""

    kappa1: float = 1.0
    kappa2: float = 2.0

    def __post_init__(self):
        if not (self.kappa1 > 0 and self.kappa2 > 0):
            raise ValueError("phase coefficients must be positive")

    kind = "laminate"

    @property
    def bounds(self) -> tuple[float, float]:
        return min(self.kappa1, self.kappa2), max(self.kappa1, self.kappa2)

    def value_at(self, y: np.ndarray) -> np.ndarray:
        y = np.asarray(y, dtype=float)
        return np.where(y[..., 0] < 0.5, self.kappa1, self.kappa2)

    def exact_tensor(self) -> np.ndarray:
        harmonic = 2.0 / (1.0 / self.kappa1 + 1.0 / self.kappa2)
        arithmetic = 0.5 * (self.kappa1 + self.kappa2)
        return np.diag([harmonic, arithmetic])


def sample_coefficient(spec, mesh: StructuredMesh, N: int) -> np.ndarray:
    """Per-element coefficient, evaluated at the element centroid's cell coordinate."""
    if isinstance(spec, MicrostructureSpec) and not 0.0 < spec.rho < 0.5:
        raise ValueError("rho outside (0, 1/2)")
    _, y = locate_cell(mesh.centroids(), N)
    field = spec.value_at(y).astype(float)
    field.setflags(write=False)
    return field


# ---------------------------------------------------------------------------
# global matrices


def _index_dtype(mesh: StructuredMesh):
    return np.int32 if mesh.n_nodes < 2**31 - 1 else np.int64


def assemble_stiffness(
    mesh: StructuredMesh, field: np.ndarray | None = None, tensor: np.ndarray | None = None
) -> sp.csr_matrix:
    """Global stiffness ``K_ij = sum_e kappa_e int_e T grad(phi_j) . grad(phi_i)``.

    ``field`` defaults to ones and ``tensor`` to the identity.
    """
    n_el = mesh.n_elements
    if field is None:
        field = np.ones(n_el)
    field = np.asarray(field, dtype=float)
    if field.shape != (n_el,):
        raise ValueError(f"coefficient field has length {field.size}, mesh has {n_el} elements")

    ke = element_stiffness(mesh.hx, mesh.hy, tensor)
    conn = mesh.elements.astype(_index_dtype(mesh))
    rows = np.repeat(conn, 4, axis=1).ravel()
    cols = np.tile(conn, (1, 4)).ravel()
    data = (field[:, None] * ke.ravel()[None, :]).ravel()
    n = mesh.n_nodes
    K = sp.coo_matrix((data, (rows, cols)), shape=(n, n)).tocsr()
    K.sum_duplicates()
    return K


def assemble_boundary_mass(
    mesh: StructuredMesh, tag: str, weight: Callable | float | None = None
) -> sp.csr_matrix:
    """Boundary mass ``M_ij = int_{Gamma_tag} w phi_i phi_j`` with exact linear traces.

    ``weight`` may be a constant or a callable evaluated at edge midpoints
    (piecewise constant per edge); the default is 1.
    """
    if tag not in KNOWN_TAGS:
        raise ValueError(f"unknown boundary tag {tag!r}")
    n = mesh.n_nodes
    mask = mesh.edge_tags == tag
    edges = mesh.boundary_edges[mask]
    if len(edges) == 0:
        return sp.csr_matrix((n, n))
    length = mesh.edge_lengths()[mask]
    if callable(weight):
        mid = mesh.node_coords[edges].mean(axis=1)
        length = length * np.asarray(weight(mid), dtype=float)
    elif weight is not None:
        length = length * float(weight)
    local = np.array([[1 / 3, 1 / 6], [1 / 6, 1 / 3]])
    rows = np.repeat(edges, 2, axis=1).ravel()
    cols = np.tile(edges, (1, 2)).ravel()
    data = (length[:, None] * local.ravel()[None, :]).ravel()
    return sp.coo_matrix((data, (rows, cols)), shape=(n, n)).tocsr()


def boundary_integrals(mesh: StructuredMesh, tags) -> np.ndarray:
    """Vector of ``int_{Gamma} phi_i`` over the union of the given tags."""
    b = np.zeros(mesh.n_nodes)
    lengths = mesh.edge_lengths()
    for tag in tags:
        mask = mesh.edge_tags == tag
        e = mesh.boundary_edges[mask]
        np.add.at(b, e.ravel(), np.repeat(0.5 * lengths[mask], 2))
    return b


def assemble_load(
    mesh: StructuredMesh, f: float, g: float, neumann_tags=(NEUMANN,)
) -> np.ndarray:
    """Load ``b_i = f int_Omega phi_i + g int_{Gamma_N} phi_i`` for constant data."""
    b = np.zeros(mesh.n_nodes)
    if f != 0.0:
        np.add.at(b, mesh.elements.ravel(), f * 0.25 * mesh.element_area)
    if g != 0.0:
        b += g * boundary_integrals(mesh, neumann_tags)
    return b


@dataclass(frozen=True, eq=False)
class ReducedSystem:
    """Linear system with homogeneous Dirichlet rows and columns removed."""

    matrix: sp.csr_matrix
    rhs: np.ndarray
    free: np.ndarray
    n: int

    def expand(self, x_free: np.ndarray) -> np.ndarray:
        x = np.zeros(self.n)
        x[self.free] = x_free
        return x


def apply_dirichlet(matrix: sp.spmatrix, vector: np.ndarray, fixed: np.ndarray) -> ReducedSystem:
    """Eliminate the nodes ``fixed`` (prescribed value 0) symmetrically."""
    fixed = np.unique(np.asarray(fixed, dtype=np.int64))
    if fixed.size == 0:
        raise ValueError("no Dirichlet nodes: the contact problem needs a nonempty Gamma_D")
    n = matrix.shape[0]
    keep = np.ones(n, dtype=bool)
    keep[fixed] = False
    free = np.flatnonzero(keep)
    A = sp.csr_matrix(matrix)[free][:, free].tocsr()
    return ReducedSystem(A, np.asarray(vector, dtype=float)[free], free, n)


# ---------------------------------------------------------------------------
# Gauss-point evaluation of Q1 fields


def gauss_values(mesh: StructuredMesh, u: np.ndarray) -> np.ndarray:
    """Values of the Q1 interpolant at every element Gauss point, shape (E, 4)."""
    return np.asarray(u)[mesh.elements] @ SHAPE_AT_GAUSS.T


def gauss_gradients(mesh: StructuredMesh, u: np.ndarray) -> np.ndarray:
    """Gradients of the Q1 interpolant at every element Gauss point, shape (E, 4, 2)."""
    return np.einsum("ea,qad->eqd", np.asarray(u)[mesh.elements], physical_gradients(mesh))


def gauss_weights(mesh: StructuredMesh) -> np.ndarray:
    """Quadrature weights (including the element Jacobian) for each Gauss point."""
    return GAUSS_WEIGHTS * mesh.element_area


def energy(mesh: StructuredMesh, field: np.ndarray, u: np.ndarray) -> float:
    """``sum_e kappa_e int_e |grad u_h|^2`` evaluated by quadrature."""
    g = gauss_gradients(mesh, u)
    return float(np.einsum("e,q,eqd,eqd->", field, gauss_weights(mesh), g, g))


def write_coo(matrix: sp.spmatrix, out) -> None:
    """Dump a sparse matrix as ``row col value`` lines."""
    A = sp.coo_matrix(matrix)
    out.write(f"# {A.shape[0]} {A.shape[1]} {A.nnz}\n")
    for i, j, v in zip(A.row, A.col, A.data):
        out.write(f"{i} {j} {v:.17g}\n")
