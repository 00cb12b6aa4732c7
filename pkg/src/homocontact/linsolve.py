"""Preconditioned conjugate gradients for the SPD and periodic (singular) systems."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, NamedTuple

import numpy as np
import scipy.sparse as sp

PRECONDITIONERS = ("none", "diagonal", "amg")


@dataclass(frozen=True)
class SolverConfig:
    rel_tolerance: float = 1e-10
    max_iterations: int | None = None  # None -> 10 * dimension
    preconditioner: str = "diagonal"

    def __post_init__(self):
        if not 0.0 < self.rel_tolerance < 1.0:
            raise ValueError("rel_tolerance must lie in (0, 1)")
        if self.max_iterations is not None and self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        if self.preconditioner not in PRECONDITIONERS:
            raise ValueError(f"preconditioner must be one of {PRECONDITIONERS}")

    def iteration_limit(self, n: int) -> int:
        return self.max_iterations if self.max_iterations is not None else 10 * n


class ConvergenceError(RuntimeError):
    """CG hit its iteration limit; ``history`` holds the relative residuals."""

    def __init__(self, message: str, history: list[float]):
        super().__init__(message)
        self.history = history


class CGResult(NamedTuple):
    x: np.ndarray
    iterations: int
    residual: float
    history: list[float]


def make_preconditioner(A: sp.spmatrix, kind: str) -> Callable[[np.ndarray], np.ndarray] | None:
    """Build ``r -> M^{-1} r`` once so it can be reused across solves with ``A``."""
    if kind == "none":
        return None
    if kind == "diagonal":
        d = np.asarray(A.diagonal(), dtype=float)
        if np.any(d <= 0):
            raise ValueError("Jacobi preconditioner needs a positive diagonal")
        inv = 1.0 / d
        return lambda r: inv * r
    if kind == "amg":
        import pyamg

        ml = pyamg.smoothed_aggregation_solver(sp.csr_matrix(A), symmetry="symmetric")
        M = ml.aspreconditioner(cycle="V")
        return M.matvec
    raise ValueError(f"unknown preconditioner {kind!r}")


def pow2_scale(v: np.ndarray) -> float:
    """Power of two near ``max|v|``; dividing by it is exact and brings ``v`` to O(1)."""
    m = float(np.max(np.abs(v))) if np.size(v) else 0.0
    if m == 0.0 or not np.isfinite(m):
        return 1.0
    return float(np.ldexp(1.0, int(np.frexp(m)[1])))


def safe_norm(v: np.ndarray) -> float:
    """Euclidean norm without intermediate under/overflow."""
    s = pow2_scale(v)
    return s * float(np.linalg.norm(np.asarray(v) / s))


def _pcg(A, b, x, tol_abs, maxiter, precond, project, callback):
    # iterate on O(1) data so tiny or huge inputs cannot under/overflow the inner products
    scale = pow2_scale(b)
    b, x, tol = b / scale, x / scale, tol_abs / scale
    r = b - A @ x
    if project is not None:
        r = r - r.mean()
    history = [float(np.linalg.norm(r))]
    if history[0] <= tol:
        return x * scale, 0, [h * scale for h in history]
    z = precond(r) if precond is not None else r.copy()
    if project is not None:
        z = project(z)
    p = z.copy()
    rz = r @ z
    for k in range(1, maxiter + 1):
        Ap = A @ p
        pAp = p @ Ap
        if not pAp > 0.0:
            break  # loss of positive curvature: not SPD, or round-off at the noise floor
        step = rz / pAp
        x = x + step * p
        r = r - step * Ap
        history.append(float(np.linalg.norm(r)))
        if callback is not None:
            callback(x * scale)
        if history[-1] <= tol:
            return x * scale, k, [h * scale for h in history]
        z = precond(r) if precond is not None else r.copy()
        if project is not None:
            z = project(z)
        rz_new = r @ z
        p = z + (rz_new / rz) * p
        rz = rz_new
    raise ConvergenceError(
        f"CG did not converge in {k} iterations "
        f"(relative residual {history[-1] / max(history[0], 1e-300):.3e})",
        [h * scale for h in history],
    )


def cg_solve(
    A: sp.spmatrix,
    b: np.ndarray,
    cfg: SolverConfig | None = None,
    x0: np.ndarray | None = None,
    precond: Callable | None = None,
    callback: Callable[[np.ndarray], None] | None = None,
) -> CGResult:
    """Solve ``A x = b`` for symmetric positive definite ``A``.

    Stops once ``||b - A x|| <= rel_tolerance * ||b||``.  A prebuilt
    ``precond`` (see :func:`make_preconditioner`) overrides the one named in
    ``cfg``; passing it avoids repeating the setup across many solves.
    """
    cfg = cfg or SolverConfig()
    b = np.asarray(b, dtype=float)
    bnorm = safe_norm(b)
    if bnorm == 0.0:
        return CGResult(np.zeros_like(b), 0, 0.0, [0.0])
    if precond is None:
        precond = make_preconditioner(A, cfg.preconditioner)
    x = np.zeros_like(b) if x0 is None else np.array(x0, dtype=float)
    try:
        x, its, hist = _pcg(
            A, b, x, cfg.rel_tolerance * bnorm, cfg.iteration_limit(b.size), precond, None, callback
        )
    except ConvergenceError as exc:
        exc.history = [h / bnorm for h in exc.history]
        raise
    rel = [h / bnorm for h in hist]
    return CGResult(x, its, rel[-1], rel)


def cg_solve_projected(
    A: sp.spmatrix,
    b: np.ndarray,
    cfg: SolverConfig | None = None,
    weights: np.ndarray | None = None,
    precond: Callable | None = None,
) -> CGResult:
    """Solve a singular system whose kernel is the constants, returning the zero-mean solution.

    ``b`` must be orthogonal to the constant vector.  The result has zero
    mean with respect to ``weights`` (lumped mass; uniform by default).
    """
    cfg = cfg or SolverConfig()
    b = np.asarray(b, dtype=float)
    bnorm = safe_norm(b)
    if abs(b.mean()) > 1e-10 * bnorm:
        raise ValueError("right-hand side is not orthogonal to the constants")
    if bnorm == 0.0:
        return CGResult(np.zeros_like(b), 0, 0.0, [0.0])
    b = b - b.mean()
    w = np.ones_like(b) if weights is None else np.asarray(weights, dtype=float)
    w = w / w.sum()

    def project(v):
        return v - (w @ v)

    if precond is None:
        precond = make_preconditioner(A, cfg.preconditioner)
    try:
        x, its, hist = _pcg(
            A,
            b,
            np.zeros_like(b),
            cfg.rel_tolerance * bnorm,
            cfg.iteration_limit(b.size),
            precond,
            project,
            None,
        )
    except ConvergenceError as exc:
        exc.history = [h / bnorm for h in exc.history]
        raise
    x = project(x)
    rel = [h / bnorm for h in hist]
    return CGResult(x, its, rel[-1], rel)
