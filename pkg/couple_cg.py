"""
Coarse Galerkin systems A_0 = R_0 A R_0^T, F_0 = R_0 F and their solution.

The basis is stored as the sparse matrix R_0^T (fine dofs x N_c); the
coarse matrix is dense.
"""

import logging
from dataclasses import dataclass

import numpy as np
import scipy.linalg
from scipy import sparse

from errors import DomainError, SolverError
from fem import solve_spd

logger = logging.getLogger(__name__)

COARSE_RTOL = 1e-12
SYMMETRY_TOL = 1e-12


@dataclass(frozen=True, eq=False)
class CoarseOperator:
    """Coarse system on the span of the basis columns"""

    basis: sparse.csr_matrix
    matrix: np.ndarray
    load: np.ndarray
    formulation: str = "cg"

    @property
    def n_coarse(self):
        return self.matrix.shape[0]

    def prolong(self, U):
        return self.basis @ U

    def residual(self, U, matrix=None):
        """Relative residual ||F_0 - A_0 U|| / ||F_0||, optionally for another A_0"""
        matrix = self.matrix if matrix is None else matrix
        norm = np.linalg.norm(self.load)
        if norm == 0.0:
            return float(np.linalg.norm(matrix @ U))
        return float(np.linalg.norm(self.load - matrix @ U) / norm)


def galerkin_matrix(basis, A):
    """Dense R_0 A R_0^T, symmetrised after a symmetry check"""
    basis = sparse.csr_matrix(basis)
    if basis.shape[0] != A.shape[0] or A.shape[0] != A.shape[1]:
        raise DomainError(f"basis with {basis.shape[0]} rows does not match operator of shape {A.shape}")
    A0 = (basis.T @ (A @ basis))
    A0 = A0.toarray() if sparse.issparse(A0) else np.asarray(A0)
    scale = np.abs(A0).max(initial=0.0)
    asymmetry = np.abs(A0 - A0.T).max(initial=0.0)
    if asymmetry > SYMMETRY_TOL * max(scale, 1e-300):
        logger.warning("coarse matrix asymmetry %.3e relative to %.3e", asymmetry, scale)
    return 0.5 * (A0 + A0.T)


def galerkin_project(basis, A, F, formulation):
    F = np.asarray(F, dtype=float)
    if len(F) != basis.shape[0]:
        raise DomainError(f"load of length {len(F)} does not match basis with {basis.shape[0]} rows")
    basis = sparse.csr_matrix(basis)
    return CoarseOperator(basis=basis, matrix=galerkin_matrix(basis, A),
                          load=np.asarray(basis.T @ F).ravel(), formulation=formulation)


def assemble_coarse_cg(basis, A, F):
    """
    Args:
        basis: sparse R_0^T with N_c columns over fine nodes.
        A: fine stiffness at the linearisation coefficient (Dirichlet rows
            need no elimination; the basis vanishes there).
        F: fine load vector.
    """
    return galerkin_project(basis, A, F, "cg")


def check_positive_definite(op, hint=""):
    """Raise SolverError naming the near-null basis combination if A_0 is not SPD"""
    try:
        scipy.linalg.cho_factor(op.matrix, lower=True)
    except np.linalg.LinAlgError:
        values, vectors = scipy.linalg.eigh(op.matrix, subset_by_index=[0, 0])
        column = int(np.argmax(np.abs(vectors[:, 0])))
        raise SolverError(
            f"{op.formulation} coarse matrix is not positive definite{hint}: "
            f"smallest eigenvalue {values[0]:.3e}, dominant basis column {column}",
            diagnostic={'smallest_eigenvalue': float(values[0]), 'column': column,
                        'n_coarse': op.n_coarse},
        )


def solve_coarse(op):
    """
    Solve A_0 U = F_0 and prolong to the fine dofs.

    Returns:
        (U, basis @ U)
    """
    hint = " (penalty too small)" if op.formulation == "dg" else ""
    check_positive_definite(op, hint)
    U = solve_spd(op.matrix, op.load, rtol=COARSE_RTOL)
    return U, op.prolong(U)
