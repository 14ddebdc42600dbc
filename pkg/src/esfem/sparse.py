"""Compressed-row sparse operators and a BiCGStab solver.

Storage and the matrix-vector product are delegated to
:class:`scipy.sparse.csr_matrix`; the Krylov solver is implemented here.
Mesh operators share one sparsity pattern (connectivity never changes), so
:class:`SparsityPattern` precomputes where every element-local entry lands in
the CSR value array and assembly reduces to a single ``bincount``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

logger = logging.getLogger(__name__)

SparseMatrix = sp.csr_matrix


class SolverError(RuntimeError):
    """Base class for iterative solver failures."""

    def __init__(self, message: str, iterations: int = 0, residual: float = float("nan")):
        super().__init__(message)
        self.iterations = iterations
        self.residual = residual


class SolverBreakdown(SolverError):
    """A BiCGStab inner product vanished before convergence."""


class SolverNotConverged(SolverError):
    """Iteration limit reached without meeting the residual tolerance."""


class SparsityPattern:
    """CSR pattern of a P1 operator on a fixed triangle list."""

    def __init__(self, triangles: np.ndarray, n_vertices: int):
        t = np.asarray(triangles, dtype=np.int64)
        self.n = int(n_vertices)
        rows = np.repeat(t, 3, axis=1).ravel()
        cols = np.tile(t, (1, 3)).ravel()
        keys = rows * self.n + cols
        uniq, inv = np.unique(keys, return_inverse=True)
        self.rows = uniq // self.n
        self.cols = uniq % self.n
        self.indptr = np.searchsorted(self.rows, np.arange(self.n + 1)).astype(np.int64)
        # element-local entry (k, a, b) -> position in data
        self.scatter = inv.reshape(len(t), 3, 3)
        self.nnz = len(uniq)
        self._diag = None

    def assemble(self, local: np.ndarray) -> SparseMatrix:
        """Sum element matrices of shape ``(n_triangles, 3, 3)`` into CSR."""
        data = np.bincount(self.scatter.ravel(), weights=local.ravel(), minlength=self.nnz)
        return self.matrix(data)

    def matrix(self, data: np.ndarray) -> SparseMatrix:
        return sp.csr_matrix((data, self.cols, self.indptr), shape=(self.n, self.n), copy=False)

    @property
    def diagonal_positions(self) -> np.ndarray:
        if self._diag is None:
            self._diag = np.flatnonzero(self.rows == self.cols)
        return self._diag


def check_matrix(A: SparseMatrix) -> None:
    """Raise ``ValueError`` if ``A`` breaks the CSR invariants."""
    if not sp.isspmatrix_csr(A) and not isinstance(A, sp.csr_array):
        raise ValueError("expected a CSR matrix")
    if np.any(np.diff(A.indptr) < 0):
        raise ValueError("row offsets decrease")
    for i in range(A.shape[0]):
        idx = A.indices[A.indptr[i] : A.indptr[i + 1]]
        if np.any(np.diff(idx) <= 0):
            raise ValueError(f"column indices of row {i} not strictly increasing")
    if not np.all(np.isfinite(A.data)):
        raise ValueError("non-finite matrix entries")


def spmv(A: SparseMatrix, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x)
    if A.shape[1] != x.shape[0]:
        raise ValueError(f"dimension mismatch: matrix {A.shape}, vector {x.shape}")
    return A @ x


@dataclass(frozen=True)
class SolverOptions:
    rtol: float = 1e-10
    max_iter: int | None = None
    preconditioner: str = "jacobi"

    def __post_init__(self):
        if not self.rtol > 0:
            raise ValueError("rtol must be positive")
        if self.max_iter is not None and self.max_iter < 1:
            raise ValueError("max_iter must be >= 1")
        if self.preconditioner not in ("none", "jacobi"):
            raise ValueError(f"unknown preconditioner {self.preconditioner!r}")


@dataclass
class SolveStats:
    iterations: int
    residual: float
    relative_residual: float
    history: list[float] = field(default_factory=list, repr=False)


MAX_RESTARTS = 3


def bicgstab(
    A: SparseMatrix,
    b: np.ndarray,
    x0: np.ndarray | None = None,
    opts: SolverOptions = SolverOptions(),
) -> tuple[np.ndarray, SolveStats]:
    """Solve ``A x = b`` by right-preconditioned BiCGStab.

    Right preconditioning keeps the monitored residual equal to the true
    residual ``b - A x``. The recurrence residual can drift from the true one,
    so on apparent convergence the true residual is recomputed and the
    iteration restarted from the current iterate if it misses the target.
    Success therefore always means ``|b - A x| <= rtol * |b|``.
    """
    total = 0
    history: list[float] = []
    for _ in range(MAX_RESTARTS + 1):
        x, stats = _bicgstab_cycle(A, b, x0, opts)
        total += stats.iterations
        history += stats.history
        true_r = float(np.linalg.norm(b - A @ x))
        bnorm = float(np.linalg.norm(b))
        if true_r <= opts.rtol * bnorm:
            return x, SolveStats(total, true_r, true_r / bnorm if bnorm else 0.0, history)
        logger.debug("bicgstab restart: true residual %.3e", true_r)
        x0 = x
    raise SolverNotConverged(
        f"true residual {true_r:.3e} above target after {MAX_RESTARTS} restarts", total, true_r
    )


def _bicgstab_cycle(A, b, x0, opts):
    n = A.shape[0]
    if A.shape[1] != n:
        raise ValueError(f"matrix must be square, got {A.shape}")
    b = np.asarray(b, dtype=np.float64)
    if b.shape != (n,):
        raise ValueError(f"right-hand side has shape {b.shape}, expected ({n},)")
    x = np.zeros(n) if x0 is None else np.array(x0, dtype=np.float64)
    if x.shape != (n,):
        raise ValueError(f"initial guess has shape {x.shape}, expected ({n},)")
    max_iter = opts.max_iter if opts.max_iter is not None else 10 * n

    if opts.preconditioner == "jacobi":
        d = A.diagonal()
        if np.any(d == 0):
            raise ValueError("Jacobi preconditioner needs a zero-free diagonal")
        dinv = 1.0 / d

        def prec(v):
            return dinv * v
    else:

        def prec(v):
            return v

    bnorm = np.linalg.norm(b)
    if bnorm == 0.0:
        return np.zeros(n), SolveStats(0, 0.0, 0.0, [0.0])
    target = opts.rtol * bnorm

    r = b - A @ x
    rnorm = np.linalg.norm(r)
    history = [rnorm]
    if rnorm <= target:
        return x, SolveStats(0, rnorm, rnorm / bnorm, history)

    r_hat = r.copy()
    rho_old = alpha = omega = 1.0
    v = np.zeros(n)
    p = np.zeros(n)
    # inner products relative to the norms of their factors
    eps = 1e-30

    for it in range(1, max_iter + 1):
        rho = r_hat @ r
        if abs(rho) <= eps * np.linalg.norm(r_hat) * rnorm:
            raise SolverBreakdown("rho vanished", it, rnorm)
        beta = (rho / rho_old) * (alpha / omega)
        p = r + beta * (p - omega * v)
        p_hat = prec(p)
        v = A @ p_hat
        denom = r_hat @ v
        if abs(denom) <= eps * np.linalg.norm(r_hat) * np.linalg.norm(v):
            raise SolverBreakdown("<r_hat, A p> vanished", it, rnorm)
        alpha = rho / denom
        s = r - alpha * v
        snorm = np.linalg.norm(s)
        if snorm <= target:
            x += alpha * p_hat
            r = s
            rnorm = snorm
            history.append(rnorm)
            break
        s_hat = prec(s)
        t = A @ s_hat
        tt = t @ t
        if tt == 0.0:
            raise SolverBreakdown("A s vanished", it, snorm)
        omega = (t @ s) / tt
        if omega == 0.0:
            raise SolverBreakdown("omega vanished", it, snorm)
        x += alpha * p_hat + omega * s_hat
        r = s - omega * t
        rnorm = np.linalg.norm(r)
        history.append(rnorm)
        rho_old = rho
        if rnorm <= target:
            break
    else:
        raise SolverNotConverged(
            f"no convergence in {max_iter} iterations (residual {rnorm:.3e}, target {target:.3e})",
            max_iter,
            rnorm,
        )

    return x, SolveStats(it, rnorm, rnorm / bnorm, history)
