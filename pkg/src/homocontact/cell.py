"""Periodic corrector problems on the unit cell and the homogenized tensor."""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np

from .assembly import (
    GAUSS_WEIGHTS,
    Laminate,
    MicrostructureSpec,
    assemble_stiffness,
    gauss_gradients,
    gauss_values,
    physical_gradients,
    sample_coefficient,
    shape_gradients,
)
from .linsolve import SolverConfig, cg_solve_projected
from .mesh import StructuredMesh, build_cell_mesh


@dataclass(frozen=True, eq=False)
class CorrectorSet:
    """Discrete correctors ``N_1, N_2`` on an ``M`` x ``M`` periodic cell mesh.

    ``values[l]`` holds the nodal values of ``N_{l+1}`` on all ``(M+1)^2``
    mesh nodes (periodic copies included).  ``gradients[e, q, i, l]`` is
    ``d_i N_l`` at Gauss point ``q`` of cell element ``e``.
    """

    M: int
    coefficient: object
    values: np.ndarray
    gradients: np.ndarray
    tensor: np.ndarray
    field: np.ndarray = field(repr=False)
    iterations: tuple[int, int] = (0, 0)

    @cached_property
    def mesh(self) -> StructuredMesh:
        return build_cell_mesh(self.M)[0]

    def gradient_at(self, y) -> np.ndarray:
        return corrector_gradient_at(self, y)


def _rhs(mesh: StructuredMesh, field: np.ndarray, direction: int) -> np.ndarray:
    """Weak form of ``div(A e_l)``: ``-sum_e kappa_e int_e d_l phi_i``."""
    G = physical_gradients(mesh)  # (q, a, d)
    local = -mesh.element_area * np.einsum("q,qa->a", GAUSS_WEIGHTS, G[:, :, direction])
    b = np.zeros(mesh.n_nodes)
    np.add.at(b, mesh.elements.ravel(), (field[:, None] * local[None, :]).ravel())
    return b


def _tensor_from(mesh: StructuredMesh, field: np.ndarray, gradients: np.ndarray) -> np.ndarray:
    # A_il = int_Q kappa (delta_il + d_i N_l), |Q| = 1
    w = GAUSS_WEIGHTS * mesh.element_area
    flux = np.eye(2)[None, None] + gradients
    return np.einsum("e,q,eqil->il", field, w, flux)


def solve_correctors(coefficient, M: int, cfg: SolverConfig | None = None) -> CorrectorSet:
    """Solve ``-div(A grad N_l) = div(A e_l)`` with periodic, zero-mean ``N_l``.

    Parameters
    ----------
    coefficient : MicrostructureSpec or Laminate
        Anything with ``value_at(y)``; sampled once per element centroid.
    M : int
        Elements per cell side.  For the inclusion geometry ``M * rho`` must
        be an integer.
    cfg : SolverConfig, optional
        Settings for the projected CG solves.
    """
    if isinstance(coefficient, MicrostructureSpec) and abs(M * coefficient.rho - round(M * coefficient.rho)) > 1e-9:
        raise ValueError(f"M={M} does not align with inclusion inset rho={coefficient.rho}")
    mesh, pmap = build_cell_mesh(M)
    kappa = sample_coefficient(coefficient, mesh, 1)
    P = pmap.prolongation()
    K = (P.T @ assemble_stiffness(mesh, kappa) @ P).tocsr()

    values, iterations = [], []
    for l in range(2):
        res = cg_solve_projected(K, P.T @ _rhs(mesh, kappa, l), cfg)
        values.append(pmap.expand(res.x))
        iterations.append(res.iterations)
    values = np.array(values)
    grads = np.stack([gauss_gradients(mesh, v) for v in values], axis=-1)
    tensor = _tensor_from(mesh, kappa, grads)
    for a in (values, grads, tensor):
        a.setflags(write=False)
    return CorrectorSet(M, coefficient, values, grads, tensor, kappa, tuple(iterations))


def homogenized_tensor(corr: CorrectorSet, coefficient=None) -> np.ndarray:
    """Cell average of ``A (I + grad N)`` using the assembly quadrature rule."""
    mesh = corr.mesh
    if coefficient is None:
        coefficient = corr.coefficient
    elif coefficient != corr.coefficient:
        raise ValueError("correctors were computed for a different coefficient")
    kappa = sample_coefficient(coefficient, mesh, 1)
    if corr.gradients.shape[0] != mesh.n_elements:
        raise ValueError("corrector gradients do not match the cell mesh")
    return _tensor_from(mesh, kappa, corr.gradients)


def corrector_gradient_at(corr: CorrectorSet, y) -> np.ndarray:
    """``d_i N_l`` at cell coordinate(s) ``y``, wrapped periodically; shape (..., 2, 2)."""
    M = corr.M
    y = np.asarray(y, dtype=float)
    s = np.mod(y, 1.0) * M
    ij = np.minimum(np.floor(s), M - 1).astype(np.int64)
    local = s - ij
    el = ij[..., 1] * M + ij[..., 0]
    nodal = corr.values[:, corr.mesh.elements[el]]  # (l, ..., a)
    G = shape_gradients(local) * M  # (..., a, i)
    return np.einsum("l...a,...ai->...il", nodal, G)


def corrector_h1_norms(corr: CorrectorSet) -> np.ndarray:
    """Discrete ``||N_l||_{1,Q}`` for both correctors."""
    mesh = corr.mesh
    w = GAUSS_WEIGHTS * mesh.element_area
    out = []
    for l in range(2):
        v = gauss_values(mesh, corr.values[l])
        g = corr.gradients[..., l]
        out.append(np.sqrt(np.einsum("q,eq->", w, v * v) + np.einsum("q,eqi->", w, g * g)))
    return np.array(out)


# ---------------------------------------------------------------------------
# text cache


def write_correctors(corr: CorrectorSet, path) -> None:
    c = corr.coefficient
    A = corr.tensor
    lines = [
        f"# kind={c.kind}",
        f"# M={corr.M}",
        f"# kappa1={float(c.kappa1)!r}",
        f"# kappa2={float(c.kappa2)!r}",
        f"# rho={float(getattr(c, 'rho', 0.0))!r}",
        "# A=" + " ".join(repr(float(a)) for a in A.ravel()),
        f"# iterations={corr.iterations[0]} {corr.iterations[1]}",
        "# node y1 y2 N1 N2",
    ]
    mesh = corr.mesh
    rows = np.column_stack([mesh.node_coords, corr.values.T]).tolist()
    for k, (y1, y2, n1, n2) in enumerate(rows):
        lines.append(f"{k} {y1!r} {y2!r} {n1!r} {n2!r}")
    Path(path).write_text("\n".join(lines) + "\n")


def read_correctors(path) -> CorrectorSet:
    header: dict[str, str] = {}
    rows = []
    for line in Path(path).read_text().splitlines():
        if line.startswith("#"):
            key, _, val = line[1:].strip().partition("=")
            if val:
                header[key] = val
        elif line.strip():
            rows.append([float(t) for t in line.split()[3:]])
    M = int(header["M"])
    k1, k2 = float(header["kappa1"]), float(header["kappa2"])
    if header["kind"] == "laminate":
        coefficient = Laminate(k1, k2)
    else:
        coefficient = MicrostructureSpec(k1, k2, float(header["rho"]))
    values = np.array(rows).T
    if values.shape != (2, (M + 1) ** 2):
        raise ValueError(f"{path}: expected {(M + 1) ** 2} nodal rows")
    mesh, _ = build_cell_mesh(M)
    grads = np.stack([gauss_gradients(mesh, v) for v in values], axis=-1)
    tensor = np.array([float(t) for t in header["A"].split()]).reshape(2, 2)
    iters = tuple(int(t) for t in header.get("iterations", "0 0").split())
    kappa = sample_coefficient(coefficient, mesh, 1)
    for a in (values, grads, tensor):
        a.setflags(write=False)
    return CorrectorSet(M, coefficient, values, grads, tensor, kappa, iters)
