"""
Preconditioned Krylov solves with residual bookkeeping.

The symmetric pressure system uses conjugate gradients with a Jacobi
preconditioner, the transport system BiCGSTAB with an incomplete LU
factorization. When an iteration falls short of its tolerance a direct
factorization takes over on systems small enough for it; anything else
raises `SolverError` carrying the residual history.
"""

import logging
from typing import List, Tuple

import numpy as np
import scipy.linalg
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from stonet.errors import SolverError

logger = logging.getLogger(__name__)

DENSE_FALLBACK_DOFS = 2500
SPARSE_FALLBACK_DOFS = 200000


def _relative_residual(matrix, rhs, x, rhs_norm) -> float:
    return float(np.linalg.norm(rhs - matrix @ x) / rhs_norm)


def _fallback(matrix: sp.csr_matrix, rhs: np.ndarray, symmetric: bool) -> np.ndarray:
    n = matrix.shape[0]
    if n <= DENSE_FALLBACK_DOFS:
        return scipy.linalg.solve(matrix.toarray(), rhs, assume_a='pos' if symmetric else 'gen')
    return spla.spsolve(matrix.tocsc(), rhs)


def _solve(method, matrix, rhs, preconditioner, rtol, maxiter, symmetric, label) \
        -> Tuple[np.ndarray, float, List[float]]:
    rhs_norm = float(np.linalg.norm(rhs))
    if rhs_norm == 0.0:
        return np.zeros_like(rhs), 0.0, [0.0]

    history = []

    def callback(xk):
        history.append(_relative_residual(matrix, rhs, xk, rhs_norm))

    x, info = method(matrix, rhs, rtol=0.1 * rtol, atol=0.0, maxiter=maxiter,
                     M=preconditioner, callback=callback)
    achieved = _relative_residual(matrix, rhs, x, rhs_norm)
    if info == 0 and achieved <= rtol:
        return x, achieved, history

    if matrix.shape[0] > SPARSE_FALLBACK_DOFS:
        raise SolverError(f'{label} did not reach relative residual {rtol:.1e}', history)
    logger.warning('%s stalled at %.3e (info=%d), using a direct factorization',
                   label, achieved, info)
    x = _fallback(matrix, rhs, symmetric)
    achieved = _relative_residual(matrix, rhs, x, rhs_norm)
    if achieved > rtol:
        raise SolverError(f'{label} direct fallback left relative residual {achieved:.3e}', history)
    return x, achieved, history


def solve_symmetric(matrix: sp.csr_matrix, rhs: np.ndarray, rtol: float = 1e-10,
                    maxiter: int = 20000):
    """
    Jacobi-preconditioned conjugate gradients.

    :return: (solution, achieved relative residual, residual history)
    """
    preconditioner = sp.diags(1.0 / matrix.diagonal())
    return _solve(spla.cg, matrix, rhs, preconditioner, rtol, maxiter, True, 'conjugate gradient')


def solve_general(matrix: sp.csr_matrix, rhs: np.ndarray, rtol: float = 1e-13,
                  maxiter: int = 5000):
    """
    ILU-preconditioned BiCGSTAB.

    :return: (solution, achieved relative residual, residual history)
    """
    ilu = spla.spilu(matrix.tocsc(), drop_tol=1e-6, fill_factor=10)
    preconditioner = spla.LinearOperator(matrix.shape, ilu.solve)
    return _solve(spla.bicgstab, matrix, rhs, preconditioner, rtol, maxiter, False, 'bicgstab')
