"""Structured quadrilateral meshes of the unit square and the periodic unit cell.

Node ``(i, j)`` (column ``i`` along x, row ``j`` along y) has global index
``j * (nx + 1) + i`` and element ``(i, j)`` has index ``j * nx + i``.  Element
connectivity is counterclockwise starting from the lower-left corner.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import IO

import numpy as np
import scipy.sparse as sp

DIRICHLET = "dirichlet"
NEUMANN = "neumann"
ROBIN = "robin"
PARTIAL_ROBIN = "partial_robin"
PERIODIC = "periodic"

KNOWN_TAGS = (DIRICHLET, NEUMANN, ROBIN, PARTIAL_ROBIN, PERIODIC)


@dataclass(frozen=True)
class BoundaryPartition:
    """Tag assignment for the sides of the unit square.

    The bottom side is split at ``x = split`` into a left and a right part so
    that full Robin and partial Robin conditions can share it.
    """

    top: str = DIRICHLET
    left: str = NEUMANN
    right: str = NEUMANN
    bottom_left: str = ROBIN
    bottom_right: str = PARTIAL_ROBIN
    split: float = 0.5

    def __post_init__(self):
        for tag in (self.top, self.left, self.right, self.bottom_left, self.bottom_right):
            if tag not in KNOWN_TAGS:
                raise ValueError(f"unknown boundary tag {tag!r}")
        if not 0.0 < self.split < 1.0:
            raise ValueError("bottom split point must lie strictly inside (0, 1)")

    @classmethod
    def contact(cls) -> BoundaryPartition:
        """Top Dirichlet, left/right Neumann, bottom Robin | partial Robin."""
        return cls()

    @classmethod
    def robin(cls) -> BoundaryPartition:
        """Robin condition on the whole boundary."""
        return cls(top=ROBIN, left=ROBIN, right=ROBIN, bottom_left=ROBIN, bottom_right=ROBIN)

    @property
    def tags(self) -> frozenset[str]:
        return frozenset((self.top, self.left, self.right, self.bottom_left, self.bottom_right))

    @property
    def splits_bottom(self) -> bool:
        return self.bottom_left != self.bottom_right


@dataclass(frozen=True, eq=False)
class StructuredMesh:
    """Uniform ``nx`` x ``ny`` mesh of bilinear quadrilaterals on the unit square."""

    nx: int
    ny: int
    node_coords: np.ndarray
    elements: np.ndarray
    boundary_edges: np.ndarray
    edge_tags: np.ndarray

    @property
    def hx(self) -> float:
        return 1.0 / self.nx

    @property
    def hy(self) -> float:
        return 1.0 / self.ny

    @property
    def h(self) -> float:
        return max(self.hx, self.hy)

    @property
    def n_nodes(self) -> int:
        return (self.nx + 1) * (self.ny + 1)

    @property
    def n_elements(self) -> int:
        return self.nx * self.ny

    @property
    def element_area(self) -> float:
        return self.hx * self.hy

    def centroids(self) -> np.ndarray:
        return self.node_coords[self.elements].mean(axis=1)

    def edge_lengths(self) -> np.ndarray:
        p = self.node_coords[self.boundary_edges]
        return np.linalg.norm(p[:, 1] - p[:, 0], axis=1)

    def edges_with_tag(self, tag: str) -> np.ndarray:
        if tag not in KNOWN_TAGS:
            raise ValueError(f"unknown boundary tag {tag!r}")
        return self.boundary_edges[self.edge_tags == tag]

    def tagged_nodes(self, tag: str) -> np.ndarray:
        return np.unique(self.edges_with_tag(tag))

    def tag_length(self, tag: str) -> float:
        mask = self.edge_tags == tag
        return float(self.edge_lengths()[mask].sum())


def _grid(nx: int, ny: int):
    x = np.linspace(0.0, 1.0, nx + 1)
    y = np.linspace(0.0, 1.0, ny + 1)
    xx, yy = np.meshgrid(x, y)  # rows follow y, so ravel() runs x fastest
    coords = np.column_stack([xx.ravel(), yy.ravel()])

    idx = np.arange((nx + 1) * (ny + 1), dtype=np.int64).reshape(ny + 1, nx + 1)
    elements = np.stack(
        [idx[:-1, :-1], idx[:-1, 1:], idx[1:, 1:], idx[1:, :-1]], axis=-1
    ).reshape(-1, 4)
    return coords, elements, idx


def _boundary_edges(idx: np.ndarray) -> dict[str, np.ndarray]:
    """Edges of each side, oriented counterclockwise around the square."""
    bottom, top = idx[0, :], idx[-1, ::-1]
    right, left = idx[:, -1], idx[::-1, 0]
    return {
        "bottom": np.column_stack([bottom[:-1], bottom[1:]]),
        "right": np.column_stack([right[:-1], right[1:]]),
        "top": np.column_stack([top[:-1], top[1:]]),
        "left": np.column_stack([left[:-1], left[1:]]),
    }


def _freeze(*arrays: np.ndarray) -> None:
    for a in arrays:
        a.setflags(write=False)


def build_domain_mesh(
    N: int,
    M: int,
    partition: BoundaryPartition | None = None,
    rho: float | None = None,
) -> StructuredMesh:
    """Build the ``NM`` x ``NM`` fine grid of the unit square.

    Parameters
    ----------
    N : int
        Number of periodic cells per axis (``eps = 1/N``).
    M : int
        Elements per cell per axis.
    partition : BoundaryPartition, optional
        Side tags; defaults to the contact layout.
    rho : float, optional
        Inclusion inset of an attached two-phase microstructure.  When given,
        ``M * rho`` must be an integer so the inclusion faces fall on element
        faces (``M`` divisible by 4 for ``rho = 0.25``).
    """
    if N < 1 or M < 1:
        raise ValueError("N and M must be >= 1")
    partition = partition or BoundaryPartition.contact()
    n = N * M
    if partition.splits_bottom and not _is_integral(n * partition.split):
        raise ValueError(
            f"bottom split x={partition.split} is not a mesh node for N*M={n}"
        )
    if rho is not None and not _is_integral(M * rho):
        raise ValueError(f"M={M} does not align element faces with inclusion inset rho={rho}")

    coords, elements, idx = _grid(n, n)
    sides = _boundary_edges(idx)

    bottom = sides["bottom"]
    mid_x = 0.5 * (coords[bottom[:, 0], 0] + coords[bottom[:, 1], 0])
    bottom_tags = np.where(mid_x < partition.split, partition.bottom_left, partition.bottom_right)

    edges = np.concatenate([bottom, sides["right"], sides["top"], sides["left"]])
    tags = np.concatenate(
        [
            bottom_tags,
            np.full(n, partition.right),
            np.full(n, partition.top),
            np.full(n, partition.left),
        ]
    ).astype(object)
    _freeze(coords, elements, edges, tags)
    return StructuredMesh(n, n, coords, elements, edges, tags)


@dataclass(frozen=True, eq=False)
class PeriodicMap:
    """Identification of opposite faces of the cell mesh.

    ``leader[i]`` is the representative node of node ``i`` (the copy with both
    indices reduced mod ``M``); ``dof[i]`` numbers the representatives
    ``0 .. M**2 - 1``.
    """

    M: int
    leader: np.ndarray
    dof: np.ndarray
    pairs: np.ndarray = field(repr=False)

    @property
    def n_unique(self) -> int:
        return self.M * self.M

    def prolongation(self) -> sp.csr_matrix:
        """Sparse 0/1 matrix mapping periodic unknowns to all mesh nodes."""
        n = self.dof.size
        return sp.csr_matrix(
            (np.ones(n), (np.arange(n), self.dof)), shape=(n, self.n_unique)
        )

    def expand(self, values: np.ndarray) -> np.ndarray:
        return np.asarray(values)[..., self.dof]


def build_cell_mesh(M: int) -> tuple[StructuredMesh, PeriodicMap]:
    """``M`` x ``M`` mesh of the unit cell with periodic node identification."""
    if M < 2:
        raise ValueError("cell mesh needs M >= 2")
    coords, elements, idx = _grid(M, M)
    sides = _boundary_edges(idx)
    edges = np.concatenate([sides[s] for s in ("bottom", "right", "top", "left")])
    tags = np.full(len(edges), PERIODIC, dtype=object)

    j, i = np.divmod(np.arange((M + 1) ** 2), M + 1)
    dof = (j % M) * M + (i % M)
    leader = (j % M) * (M + 1) + (i % M)
    followers = np.flatnonzero(leader != np.arange(leader.size))
    pairs = np.column_stack([followers, leader[followers]])

    _freeze(coords, elements, edges, tags, dof, leader, pairs)
    mesh = StructuredMesh(M, M, coords, elements, edges, tags)
    return mesh, PeriodicMap(M, leader, dof, pairs)


def _is_integral(v: float, tol: float = 1e-9) -> bool:
    return abs(v - round(v)) < tol


def locate_cell(x, N: int):
    """Cell index and cell-local coordinate of point(s) ``x`` in the unit square.

    Points on an interior cell face belong to the cell above/right of it; the
    outer faces ``x = 1`` and ``y = 1`` stay in the last cell with local
    coordinate 1.
    """
    x = np.asarray(x, dtype=float)
    scaled = x * N
    cell = np.minimum(np.floor(scaled + 1e-12), N - 1).astype(np.int64)
    y = scaled - cell
    y = np.where(np.abs(y) < 1e-12, 0.0, y)
    return cell, y


def write_mesh(mesh: StructuredMesh, out: IO[str]) -> None:
    """Plain-text dump: one ``node``, ``elem`` or ``edge`` record per line."""
    out.write(f"# nx={mesh.nx} ny={mesh.ny}\n")
    for k, (x, y) in enumerate(mesh.node_coords):
        out.write(f"node {k} {x:.17g} {y:.17g}\n")
    for k, conn in enumerate(mesh.elements):
        out.write("elem {} {} {} {} {}\n".format(k, *conn))
    for (a, b), tag in zip(mesh.boundary_edges, mesh.edge_tags):
        out.write(f"edge {a} {b} {tag}\n")
