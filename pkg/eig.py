"""
Dense symmetric-definite generalized eigensolver for the local spectral problems.
"""

import logging
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from errors import DomainError, FactorizationError

logger = logging.getLogger(__name__)

SYMMETRY_TOL = 1e-10


@dataclass(frozen=True, eq=False)
class EigPairs:
    """Ascending eigenvalues with S-orthonormal eigenvectors stored column-wise"""

    values: np.ndarray
    vectors: np.ndarray

    def __len__(self):
        return len(self.values)


def _dense(M, name):
    M = M.toarray() if hasattr(M, 'toarray') else np.asarray(M, dtype=float)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise DomainError(f"{name} must be square, got shape {M.shape}")
    scale = max(1.0, np.abs(M).max(initial=0.0))
    asymmetry = np.abs(M - M.T).max(initial=0.0)
    if asymmetry > SYMMETRY_TOL * scale:
        raise DomainError(f"{name} is not symmetric (max asymmetry {asymmetry:.3e})")
    return 0.5 * (M + M.T)


def fix_signs(vectors):
    """Make the first significant entry of every column positive"""
    vectors = np.array(vectors, dtype=float)
    for k in range(vectors.shape[1]):
        column = vectors[:, k]
        big = np.abs(column) > 1e-10 * np.abs(column).max(initial=0.0)
        if big.any() and column[np.argmax(big)] < 0.0:
            vectors[:, k] = -column
    return vectors


def sym_gen_eig(A, S, count=None):
    """
    Solve A v = lambda S v for symmetric A and SPD S.

    The pencil is reduced with the Cholesky factor S = L L^T to the
    standard problem L^-1 A L^-T y = lambda y, solved by LAPACK and
    back-transformed, so the vectors come out S-orthonormal.

    Args:
        A: symmetric matrix (dense or sparse).
        S: symmetric positive definite matrix of the same size.
        count: keep only the `count` smallest pairs (all when None).

    Raises:
        DomainError: on size mismatch or asymmetric input.
        FactorizationError: if S is not positive definite.
    """
    A = _dense(A, "A")
    S = _dense(S, "S")
    if A.shape != S.shape:
        raise DomainError(f"pencil size mismatch {A.shape} vs {S.shape}")
    n = A.shape[0]

    try:
        L = scipy.linalg.cholesky(S, lower=True)
    except np.linalg.LinAlgError as exc:
        raise FactorizationError(f"mass matrix of size {n} is not positive definite: {exc}") from exc

    B = scipy.linalg.solve_triangular(L, A, lower=True)
    C = scipy.linalg.solve_triangular(L, B.T, lower=True)
    C = 0.5 * (C + C.T)

    if count is not None and count < 1:
        raise DomainError(f"eigenpair count must be at least 1, got {count}")
    subset = None
    if count is not None and count < n:
        subset = [0, max(0, int(count)) - 1]
    values, Y = scipy.linalg.eigh(C, subset_by_index=subset)
    vectors = scipy.linalg.solve_triangular(L, Y, lower=True, trans='T')
    return EigPairs(values=values, vectors=fix_signs(vectors))
