"""
Fine-scale bilinear (Q1) finite elements on the uniform grid.

The coefficient is piecewise constant per fine element, so one midpoint
value times the exact reference integrals below is exact.
"""

import logging
from dataclasses import dataclass

import numpy as np
import scipy.linalg
from scipy import sparse
from scipy.sparse.linalg import splu

from errors import DomainError, SolverError

logger = logging.getLogger(__name__)

# Reference matrices for a square cell, nodes counterclockwise from the
# lower-left corner. Stiffness is scale-free in 2D; mass scales with h^2.
STIFFNESS_REF = np.array([
    [4.0, -1.0, -2.0, -1.0],
    [-1.0, 4.0, -1.0, -2.0],
    [-2.0, -1.0, 4.0, -1.0],
    [-1.0, -2.0, -1.0, 4.0],
]) / 6.0

MASS_REF = np.array([
    [4.0, 2.0, 1.0, 2.0],
    [2.0, 4.0, 2.0, 1.0],
    [1.0, 2.0, 4.0, 2.0],
    [2.0, 1.0, 2.0, 4.0],
]) / 36.0

# Gradient of a Q1 function at the cell midpoint, times h.
GRAD_X_REF = np.array([-1.0, 1.0, 1.0, -1.0]) / 2.0
GRAD_Y_REF = np.array([-1.0, -1.0, 1.0, 1.0]) / 2.0

HARD_RESIDUAL_LIMIT = 1e-6


def _check_positive(values, name):
    values = np.asarray(values, dtype=float)
    if not np.all(np.isfinite(values)):
        raise DomainError(f"{name} must be finite")
    if np.any(values <= 0.0):
        raise DomainError(f"{name} must be strictly positive (min {values.min():.3e})")
    return values


def assemble_elements(reference, weights, connectivity, n_dofs):
    """
    Sum weight_e * reference over elements into an n_dofs x n_dofs CSR matrix.

    COO duplicates are summed in a fixed order during the CSR conversion,
    so the result does not depend on anything but the inputs.
    """
    connectivity = np.asarray(connectivity)
    k = reference.shape[0]
    rows = np.repeat(connectivity, k, axis=1)
    cols = np.tile(connectivity, (1, k))
    values = np.asarray(weights, dtype=float)[:, None] * reference.ravel()[None, :]
    matrix = sparse.coo_matrix(
        (values.ravel(), (rows.ravel(), cols.ravel())), shape=(n_dofs, n_dofs)
    )
    return matrix.tocsr()


def _layout(fine, subdomain):
    if subdomain is None:
        return np.arange(fine.n_elements), fine.elements, fine.n_nodes
    return subdomain.elements, subdomain.local_elements, subdomain.n_nodes


def assemble_stiffness(fine, coef, subdomain=None):
    """
    Q1 stiffness with a per-element coefficient.

    Args:
        fine: FineGrid.
        coef: one positive value per fine element of the whole grid.
        subdomain: optional Subdomain; the matrix is then indexed by its
            local node numbering (Neumann on the subdomain boundary).
    """
    elements, connectivity, n = _layout(fine, subdomain)
    coef = _check_positive(np.asarray(coef, dtype=float)[elements], "coefficient")
    return assemble_elements(STIFFNESS_REF, coef, connectivity, n)


def assemble_weighted_mass(fine, weight, subdomain=None):
    elements, connectivity, n = _layout(fine, subdomain)
    weight = _check_positive(np.asarray(weight, dtype=float)[elements], "mass weight")
    return assemble_elements(MASS_REF * fine.h ** 2, weight, connectivity, n)


def element_load(fine, f, connectivity, n_dofs):
    """Constant source f integrated against each Q1 shape function"""
    share = np.full(connectivity.shape, float(f) * fine.h ** 2 / 4.0)
    return np.bincount(np.ravel(connectivity), weights=share.ravel(), minlength=n_dofs)


def assemble_load(fine, f, subdomain=None):
    """
    Load vector of the source term.

    A scalar f is a constant source. An array of fine nodal values is
    integrated exactly against the Q1 shape functions (consistent mass).
    """
    if np.ndim(f) == 0:
        if not np.isfinite(f):
            raise DomainError("source term must be finite")
        _, connectivity, n = _layout(fine, subdomain)
        return element_load(fine, f, connectivity, n)
    f = np.asarray(f, dtype=float)
    if not np.all(np.isfinite(f)):
        raise DomainError("source term must be finite")
    mass = assemble_weighted_mass(fine, np.ones(fine.n_elements), subdomain)
    return mass @ f


@dataclass
class DirichletSystem:
    """Reduced system after symmetric elimination of constrained rows/columns"""

    matrix: object
    rhs: np.ndarray
    free: np.ndarray
    fixed: np.ndarray
    values: np.ndarray
    n: int

    def expand(self, u_free):
        u_free = np.asarray(u_free)
        shape = (self.n,) + u_free.shape[1:]
        u = np.zeros(shape)
        u[self.free] = u_free
        u[self.fixed] = self.values
        return u


def apply_dirichlet(A, F, nodes, values=0.0):
    """
    Eliminate prescribed nodes symmetrically.

    The constrained columns are moved to the right-hand side, so the
    reduced matrix keeps the symmetry (and definiteness) of A.
    """
    A = sparse.csr_matrix(A)
    n = A.shape[0]
    fixed = np.unique(np.asarray(nodes, dtype=int))
    mask = np.ones(n, dtype=bool)
    mask[fixed] = False
    free = np.flatnonzero(mask)

    F = np.asarray(F, dtype=float)
    values = np.asarray(values, dtype=float)
    if values.ndim == 0:
        values = np.full((len(fixed),) + F.shape[1:], float(values))

    A_free = A[free][:, free]
    rhs = F[free] - A[free][:, fixed] @ values
    return DirichletSystem(matrix=A_free.tocsr(), rhs=rhs, free=free, fixed=fixed,
                           values=values, n=n)


def boundary_dirichlet(fine, A, F):
    """Homogeneous Dirichlet data on the whole of the domain boundary"""
    return apply_dirichlet(A, F, np.flatnonzero(fine.boundary), 0.0)


def _factorize(A):
    if sparse.issparse(A):
        # diagonal pivots on a symmetric ordering: all positive iff A is SPD
        try:
            lu = splu(sparse.csc_matrix(A), permc_spec="MMD_AT_PLUS_A", diag_pivot_thresh=0.0,
                      options={'SymmetricMode': True})
        except RuntimeError as exc:
            raise SolverError(f"sparse factorization failed: {exc}",
                              diagnostic={'size': A.shape[0]}) from exc
        pivots = lu.U.diagonal()
        if not np.all(pivots > 0.0):
            smallest = float(pivots.min())
            raise SolverError(f"matrix is not symmetric positive definite: pivot {smallest:.3e}",
                              diagnostic={'smallest_pivot': smallest, 'size': A.shape[0]})
        return lu.solve
    try:
        factor = scipy.linalg.cho_factor(np.asarray(A), lower=True)
    except np.linalg.LinAlgError as exc:
        raise SolverError(f"matrix is not symmetric positive definite: {exc}",
                          diagnostic={'size': np.shape(A)[0]}) from exc
    return lambda b: scipy.linalg.cho_solve(factor, b)


def solve_spd(A, F, rtol=1e-10):
    """
    Solve A u = F for SPD A (sparse or dense) with relative residual <= rtol.

    A direct factorization is followed by up to two steps of iterative
    refinement.
    """
    F = np.asarray(F, dtype=float)
    norm_F = np.linalg.norm(F)
    if norm_F == 0.0:
        return np.zeros_like(F)

    solve = _factorize(A)
    u = solve(F)
    residual = np.linalg.norm(F - A @ u) / norm_F
    for _ in range(2):
        if residual <= rtol:
            break
        u = u + solve(F - A @ u)
        residual = np.linalg.norm(F - A @ u) / norm_F

    if not np.all(np.isfinite(u)) or residual > HARD_RESIDUAL_LIMIT:
        raise SolverError(f"linear solve failed: relative residual {residual:.3e}",
                          diagnostic={'residual': residual, 'size': F.shape[0]})
    if residual > rtol:
        logger.warning("linear solve residual %.3e above contract %.1e", residual, rtol)
    return u


def element_mean(u, connectivity):
    """Arithmetic mean of the nodal values of each element"""
    return np.asarray(u)[connectivity].mean(axis=1)


def gradient_operators(fine, connectivity=None, n_dofs=None):
    """Sparse maps nodal values -> x and y gradients at element midpoints"""
    connectivity = fine.elements if connectivity is None else connectivity
    n_dofs = fine.n_nodes if n_dofs is None else n_dofs
    n_el = connectivity.shape[0]
    rows = np.repeat(np.arange(n_el), 4)
    ops = []
    for ref in (GRAD_X_REF, GRAD_Y_REF):
        values = np.tile(ref / fine.h, n_el)
        ops.append(sparse.csr_matrix((values, (rows, connectivity.ravel())),
                                     shape=(n_el, n_dofs)))
    return ops[0], ops[1]


def harmonic_extension(fine, subdomain, coef, boundary_values):
    """
    Extend boundary data into the subdomain by solving -div(coef grad u) = 0.

    Args:
        boundary_values: values on the subdomain boundary nodes (in the
            order of subdomain.nodes[subdomain.on_boundary]); a 2-D array
            extends several data sets with one factorization.

    Returns:
        Nodal values on subdomain.nodes.
    """
    A = assemble_stiffness(fine, coef, subdomain)
    boundary = np.flatnonzero(subdomain.on_boundary)
    boundary_values = np.asarray(boundary_values, dtype=float)
    F = np.zeros((subdomain.n_nodes,) + boundary_values.shape[1:])
    system = apply_dirichlet(A, F, boundary, boundary_values)
    if len(system.free) == 0:
        return system.expand(np.zeros((0,) + boundary_values.shape[1:]))
    return system.expand(solve_spd(system.matrix, system.rhs))
