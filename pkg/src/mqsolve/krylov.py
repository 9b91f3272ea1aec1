"""Preconditioned conjugate gradients for symmetric positive (semi)definite systems.

The solver never regularizes: on a singular matrix it relies on the right-hand
side being consistent (in the range), in which case CG converges to one of the
solutions. Iteration counting is explicit because downstream benchmarks
compare iteration budgets: ``iterations`` is the number of operator
applications after the initial residual, and a start vector that already
meets the tolerance reports zero iterations without touching the operator
loop.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from enum import Enum

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import spsolve_triangular

from .sparse import CsrMatrix, as_vector

__all__ = [
    "Preconditioner",
    "PcgConfig",
    "SolveReport",
    "pcg_solve",
    "build_preconditioner",
    "JacobiPreconditioner",
    "IncompleteCholesky",
    "Ic0Breakdown",
    "IndefiniteOperatorError",
]

log = logging.getLogger(__name__)


class Preconditioner(str, Enum):
    NONE = "none"
    JACOBI = "jacobi"
    IC0 = "ic0"


class IndefiniteOperatorError(RuntimeError):
    """Raised when a CG search direction exposes an indefinite operator."""


class Ic0Breakdown(RuntimeError):
    """IC(0) hit a nonpositive pivot; callers may degrade to Jacobi."""

    def __init__(self, row: int):
        super().__init__(f"IC(0) pivot <= 0 at row {row}")
        self.row = row


@dataclass(frozen=True)
class PcgConfig:
    rel_tol: float = 1e-8
    abs_tol: float = 0.0
    max_iter: int = 5000
    preconditioner: Preconditioner = Preconditioner.NONE

    def __post_init__(self):
        if not (self.rel_tol > 0.0):
            raise ValueError("rel_tol must be positive")
        if self.abs_tol < 0.0:
            raise ValueError("abs_tol must be nonnegative")
        if self.max_iter < 1:
            raise ValueError("max_iter must be at least 1")
        object.__setattr__(self, "preconditioner",
                           Preconditioner(self.preconditioner))


@dataclass(frozen=True)
class SolveReport:
    iterations: int
    final_rel_residual: float
    converged: bool


class JacobiPreconditioner:
    """Diagonal scaling M^{-1} = diag(1/A_ii), unit action on zero entries.

    Zero diagonal entries occur on semidefinite rows; keeping the identity
    there preserves a positive definite preconditioner. Negative entries are
    rejected.
    """

    def __init__(self, diag):
        d = as_vector(diag, name="diagonal")
        if (d < 0).any():
            raise ValueError("Jacobi preconditioner requires a nonnegative diagonal")
        self._inv = np.where(d > 0, 1.0 / np.where(d > 0, d, 1.0), 1.0)

    def apply(self, r: np.ndarray) -> np.ndarray:
        return self._inv * r


class IncompleteCholesky:
    """Zero-fill incomplete Cholesky A ~ L L^T on the lower pattern of A."""

    def __init__(self, lower: sp.csr_matrix):
        self._lower = lower
        self._upper = lower.T.tocsr()

    @classmethod
    def factor(cls, a: CsrMatrix) -> "IncompleteCholesky":
        return cls(_ic0_lower(a))

    def apply(self, r: np.ndarray) -> np.ndarray:
        y = spsolve_triangular(self._lower, r, lower=True)
        return spsolve_triangular(self._upper, y, lower=False)


def _ic0_lower(a: CsrMatrix) -> sp.csr_matrix:
    """IC(0) factor on the lower-triangular pattern; raises Ic0Breakdown."""
    if a.nrows != a.ncols:
        raise ValueError("IC(0) requires a square matrix")
    lower = sp.tril(a.to_scipy(), format="csr")
    indptr, indices = lower.indptr, lower.indices
    data = lower.data.astype(np.float64, copy=True)
    n = a.nrows
    # position of each stored entry, per row, keyed by column
    rowpos: list[dict[int, int]] = [dict() for _ in range(n)]
    diag_pos = np.full(n, -1, dtype=np.int64)
    for i in range(n):
        li = rowpos[i]
        for p in range(indptr[i], indptr[i + 1]):
            j = int(indices[p])
            s = data[p]
            lj = rowpos[j]
            for k in li.keys() & lj.keys():
                if k < j:
                    s -= data[li[k]] * data[lj[k]]
            if j == i:
                if not (s > 0.0) or not np.isfinite(s):
                    raise Ic0Breakdown(i)
                data[p] = np.sqrt(s)
                diag_pos[i] = p
            else:
                if diag_pos[j] < 0:
                    raise Ic0Breakdown(j)
                data[p] = s / data[diag_pos[j]]
            li[j] = p
        if diag_pos[i] < 0:
            raise Ic0Breakdown(i)
    return sp.csr_matrix((data, indices, indptr), shape=(n, n))


def build_preconditioner(a: CsrMatrix, kind: Preconditioner):
    """Build the requested preconditioner for *a*; None for ``NONE``."""
    kind = Preconditioner(kind)
    if kind is Preconditioner.NONE:
        return None
    if kind is Preconditioner.JACOBI:
        return JacobiPreconditioner(a.diagonal())
    return IncompleteCholesky.factor(a)


def _as_operator(a):
    if isinstance(a, CsrMatrix):
        m = a.to_scipy()
        return lambda x: m @ x, a.nrows
    if isinstance(a, np.ndarray):
        if a.ndim != 2 or a.shape[0] != a.shape[1]:
            raise ValueError("dense operator must be square")
        return lambda x: a @ x, a.shape[0]
    if callable(a):
        return a, None
    raise TypeError(f"unsupported operator type {type(a).__name__}")


def pcg_solve(a, b, x0=None, config: PcgConfig | None = None,
              preconditioner=None) -> tuple[np.ndarray, SolveReport]:
    """Solve A x = b by preconditioned CG.

    Parameters
    ----------
    a : CsrMatrix, square ndarray, or callable x -> A x
        Symmetric positive (semi)definite operator. For a singular operator
        the right-hand side must be consistent.
    b : array_like
        Right-hand side.
    x0 : array_like, optional
        Start vector (zero when omitted). If it already satisfies the
        tolerance the solve returns immediately with zero iterations.
    config : PcgConfig
        Tolerances and iteration budget. Stopping rule:
        ||r||_2 <= max(rel_tol * ||b||_2, abs_tol) on the recurrence residual.
    preconditioner : object with ``apply``, optional
        Prebuilt preconditioner; when omitted and the config requests one,
        it is built from *a* (matrix operators only).

    Returns
    -------
    (x, SolveReport)
        ``converged=False`` with the last iterate when the budget is
        exhausted; indefiniteness raises :class:`IndefiniteOperatorError`.
    """
    config = config or PcgConfig()
    apply_a, n = _as_operator(a)
    b = as_vector(b, length=n, name="rhs")
    if preconditioner is None and config.preconditioner is not Preconditioner.NONE:
        if not isinstance(a, CsrMatrix):
            raise ValueError("automatic preconditioner construction needs a CsrMatrix")
        preconditioner = build_preconditioner(a, config.preconditioner)

    b_norm = float(np.linalg.norm(b))
    target = max(config.rel_tol * b_norm, config.abs_tol)

    if x0 is None:
        x = np.zeros_like(b)
        r = b.copy()
    else:
        x = as_vector(x0, length=b.size, name="start vector").copy()
        r = b - apply_a(x)
    r_norm = float(np.linalg.norm(r))

    def rel(res: float) -> float:
        if b_norm > 0.0:
            return res / b_norm
        return 0.0 if res == 0.0 else np.inf

    if r_norm <= target:
        return x, SolveReport(0, rel(r_norm), True)

    z = preconditioner.apply(r) if preconditioner is not None else r
    p = z.copy()
    rz = float(r @ z)
    for it in range(1, config.max_iter + 1):
        ap = apply_a(p)
        pap = float(p @ ap)
        if not np.isfinite(pap) or pap <= 0.0:
            raise IndefiniteOperatorError(
                f"nonpositive curvature p^T A p = {pap:.3e} at iteration {it}")
        alpha = rz / pap
        x = x + alpha * p
        r = r - alpha * ap
        r_norm = float(np.linalg.norm(r))
        if r_norm <= target:
            return x, SolveReport(it, rel(r_norm), True)
        z = preconditioner.apply(r) if preconditioner is not None else r
        rz_next = float(r @ z)
        if not np.isfinite(rz_next):
            raise IndefiniteOperatorError(
                f"non-finite preconditioned residual at iteration {it}")
        p = z + (rz_next / rz) * p
        rz = rz_next
    return x, SolveReport(config.max_iter, rel(r_norm), False)
