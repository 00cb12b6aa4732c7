"""First-order gradient reconstruction from the homogenized solution.

At every Gauss point of the fine mesh::

    (d_i u_eps)* = d_i u0h + (d_i N_l)(x / eps) d_l u0h

The corrector cell mesh is the fine mesh restricted to one period, so the
Gauss points of fine element ``(ix, iy)`` coincide with those of cell element
``(ix mod M, iy mod M)`` and no interpolation between meshes is needed.
"""

from __future__ import annotations

import numpy as np

from .assembly import gauss_gradients
from .cell import CorrectorSet
from .mesh import StructuredMesh


def _check_alignment(mesh: StructuredMesh, corr: CorrectorSet, N: int) -> None:
    if mesh.nx != N * corr.M or mesh.ny != N * corr.M:
        raise ValueError(
            f"fine mesh {mesh.nx}x{mesh.ny} is not N*M = {N}*{corr.M} elements per side; "
            "corrector and fine resolutions must match"
        )


def corrector_term(grad_u0: np.ndarray, corr: CorrectorSet, N: int) -> np.ndarray:
    """``(d_i N_l)(x/eps) d_l u0`` for Gauss-point gradients ``grad_u0`` of shape (E, 4, 2)."""
    M = corr.M
    g = grad_u0.reshape(N, M, N, M, 4, 2)  # (cell row, local row, cell col, local col, q, l)
    G = corr.gradients.reshape(M, M, 4, 2, 2)  # (local row, local col, q, i, l)
    out = np.einsum("bdqil,abcdql->abcdqi", G, g, optimize=True)
    return out.reshape(grad_u0.shape)


def reconstruct(u0h: np.ndarray, corr: CorrectorSet, mesh: StructuredMesh, N: int) -> np.ndarray:
    """Reconstructed fine-scale gradient at every Gauss point, shape (E, 4, 2)."""
    _check_alignment(mesh, corr, N)
    g = gauss_gradients(mesh, u0h)
    return g + corrector_term(g, corr, N)


def write_gradients(grad: np.ndarray, out) -> None:
    """Per-element CSV dump: ``element,gauss,dx,dy``."""
    out.write("element,gauss,dx,dy\n")
    E, Q, _ = grad.shape
    for e in range(E):
        for q in range(Q):
            out.write(f"{e},{q},{grad[e, q, 0]:.17g},{grad[e, q, 1]:.17g}\n")
