"""Relative error measures between fine-scale and homogenized solutions, and rate fits."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .assembly import gauss_gradients, gauss_values, gauss_weights
from .cell import CorrectorSet
from .mesh import StructuredMesh
from .recon import reconstruct


def _check(u_eps, u0, mesh: StructuredMesh):
    u_eps = np.asarray(u_eps, dtype=float)
    u0 = np.asarray(u0, dtype=float)
    if u_eps.shape != (mesh.n_nodes,) or u0.shape != (mesh.n_nodes,):
        raise ValueError(
            f"fields have {u_eps.size} and {u0.size} values, mesh has {mesh.n_nodes} nodes"
        )
    return u_eps, u0


def l2_norm(mesh: StructuredMesh, u: np.ndarray) -> float:
    v = gauss_values(mesh, u)
    return float(np.sqrt(np.einsum("q,eq->", gauss_weights(mesh), v * v)))


def gauss_l2_norm(mesh: StructuredMesh, vec: np.ndarray) -> float:
    """L2 norm of a vector field given at the Gauss points, shape (E, 4, 2)."""
    return float(np.sqrt(np.einsum("q,eqi->", gauss_weights(mesh), vec * vec)))


def h1_seminorm(mesh: StructuredMesh, u: np.ndarray) -> float:
    return gauss_l2_norm(mesh, gauss_gradients(mesh, u))


def _ratio(num: float, den: float) -> float:
    if den <= 0:
        raise ValueError("reference solution has zero norm")
    return num / den


def err0(u_eps, u0, mesh: StructuredMesh) -> float:
    """``||u_eps - u0||_0 / ||u0||_0``."""
    u_eps, u0 = _check(u_eps, u0, mesh)
    return _ratio(l2_norm(mesh, u_eps - u0), l2_norm(mesh, u0))


def err1(u_eps, u0, corr: CorrectorSet, mesh: StructuredMesh, N: int) -> float:
    """Gradient error of the first-order reconstruction, relative to ``|u0|_1``."""
    u_eps, u0 = _check(u_eps, u0, mesh)
    diff = gauss_gradients(mesh, u_eps) - reconstruct(u0, corr, mesh, N)
    return _ratio(gauss_l2_norm(mesh, diff), h1_seminorm(mesh, u0))


def err2(u_eps, u0, mesh: StructuredMesh) -> float:
    """``|u_eps - u0|_1 / |u0|_1``."""
    u_eps, u0 = _check(u_eps, u0, mesh)
    return _ratio(h1_seminorm(mesh, u_eps - u0), h1_seminorm(mesh, u0))


def estimate_rate(samples) -> float:
    """Least-squares slope of ``log(err)`` against ``log(eps)``.

    ``samples`` is a sequence of ``(eps, err)`` pairs with at least two
    distinct ``eps`` and every ``err > 0``.
    """
    data = np.asarray(samples, dtype=float)
    if data.ndim != 2 or data.shape[0] < 2:
        raise ValueError("need at least two (eps, err) samples")
    eps, err = data[:, 0], data[:, 1]
    if np.any(err <= 0) or np.any(eps <= 0):
        raise ValueError("errors and eps must be positive to fit a rate")
    if np.unique(eps).size < 2:
        raise ValueError("need two distinct eps values")
    return float(np.polyfit(np.log(eps), np.log(err), 1)[0])


def pairwise_rates(samples) -> list[float]:
    """``log(err_k / err_{k+1}) / log(eps_k / eps_{k+1})`` for consecutive samples."""
    data = np.asarray(samples, dtype=float)
    return [
        float(np.log(data[k, 1] / data[k + 1, 1]) / np.log(data[k, 0] / data[k + 1, 0]))
        for k in range(len(data) - 1)
    ]


@dataclass
class ErrorReport:
    N: int
    M: int
    err0: float
    err1: float
    err2: float
    l2_u0: float
    h1_u0: float
    fine_iters: int = 0
    homog_iters: int = 0
    wall_seconds: float = 0.0
    params: dict = field(default_factory=dict)

    @property
    def eps(self) -> float:
        return 1.0 / self.N


def error_report(u_eps, u0, corr: CorrectorSet, mesh: StructuredMesh, N: int, **extra) -> ErrorReport:
    u_eps, u0 = _check(u_eps, u0, mesh)
    return ErrorReport(
        N=N,
        M=corr.M,
        err0=err0(u_eps, u0, mesh),
        err1=err1(u_eps, u0, corr, mesh, N),
        err2=err2(u_eps, u0, mesh),
        l2_u0=l2_norm(mesh, u0),
        h1_u0=h1_seminorm(mesh, u0),
        **extra,
    )
