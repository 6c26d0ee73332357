"""Preconditioned conjugate gradients for the SPD subproblem matrices."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

_RESTARTS = 5


class SolverError(RuntimeError):
    """CG did not reach the requested residual, or produced non-finite values."""

    def __init__(self, message: str, residual: float = float("nan"), iterations: int = 0):
        super().__init__(message)
        self.residual = residual
        self.iterations = iterations


@dataclass(frozen=True)
class SolverConfig:
    rel_tol: float = 1e-12
    max_iter: int | None = None  # None means 10 * n
    preconditioner: str = "diagonal"

    def __post_init__(self):
        if not 0 < self.rel_tol < 1:
            raise ValueError(f"rel_tol must lie in (0, 1), got {self.rel_tol}")
        if self.max_iter is not None and self.max_iter < 1:
            raise ValueError(f"max_iter must be at least 1, got {self.max_iter}")
        if self.preconditioner not in ("none", "diagonal"):
            raise ValueError(f"unknown preconditioner {self.preconditioner!r}")


@dataclass(frozen=True)
class SolveResult:
    x: np.ndarray
    iterations: int
    residual: float  # ||b - A x|| / ||b||, recomputed after the solve


def spmv(A: sp.spmatrix, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.ndim != 1 or A.shape[1] != x.shape[0]:
        raise ValueError(f"dimension mismatch: matrix {A.shape} times vector {x.shape}")
    return A @ x


def relative_residual(A: sp.spmatrix, b: np.ndarray, x: np.ndarray) -> float:
    bnorm = np.linalg.norm(b)
    r = np.linalg.norm(b - spmv(A, x))
    return float(r / bnorm) if bnorm > 0 else float(r)


def cg_solve(A: sp.spmatrix, b: np.ndarray, x0: np.ndarray | None = None, cfg: SolverConfig = SolverConfig()) -> SolveResult:
    """Solve ``A x = b`` to ``||b - A x|| <= rel_tol * ||b||``.

    Raises :class:`SolverError` when the iteration cap is hit or a
    non-finite value appears.
    """
    b = np.asarray(b, dtype=float)
    n = b.shape[0]
    if A.shape != (n, n):
        raise ValueError(f"dimension mismatch: matrix {A.shape}, rhs {b.shape}")
    if not np.all(np.isfinite(b)):
        raise SolverError("non-finite right-hand side")
    if not np.any(b):
        return SolveResult(np.zeros(n), 0, 0.0)
    if x0 is None:
        x0 = np.zeros(n)
    maxiter = cfg.max_iter or 10 * n

    M = None
    if cfg.preconditioner == "diagonal":
        d = A.diagonal()
        if np.any(d <= 0):
            raise SolverError("diagonal preconditioner needs a positive diagonal")
        M = sp.diags(1.0 / d)

    count = 0

    def _tick(_xk):
        nonlocal count
        count += 1

    x = np.array(x0, dtype=float)
    res = relative_residual(A, b, x)
    # scipy stops on the recursive residual; restart until the true one passes
    for _ in range(_RESTARTS):
        if res <= cfg.rel_tol and count > 0:
            break
        x, info = spla.cg(A, b, x0=x, rtol=cfg.rel_tol, atol=0.0, maxiter=max(maxiter - count, 1), M=M, callback=_tick)
        if not np.all(np.isfinite(x)):
            raise SolverError("non-finite iterate", iterations=count)
        res = relative_residual(A, b, x)
        if info != 0 or count >= maxiter:
            break
    if not res <= cfg.rel_tol:
        raise SolverError(f"CG stopped at relative residual {res:.3e} after {count} iterations", res, count)
    return SolveResult(x, count, res)
