"""
Symmetric interior penalty coupling across coarse edges.

The fine space is broken along coarse edges (grid.BrokenSpace). Inside each
coarse element the operator is the usual Q1 stiffness; every fine segment
of a coarse edge adds the consistency and penalty terms. The jump is
[u] = u(K-) - u(K+) with the normal pointing out of K-; on the domain
boundary the exterior trace is zero, which imposes the Dirichlet
condition weakly.

The penalty weight on a fine segment is kappa_E * (delta / h_E + fine_delta / h):
delta is the coarse coupling parameter on h_E = H, fine_delta a fine-level
penalty on the segment length h. Local spectral functions vary on the fine
scale along coarse edges, so their traces are only controlled by the
fine-level term.
"""

import logging
from dataclasses import dataclass

import numpy as np
from scipy import sparse

from couple_cg import galerkin_project, solve_coarse
from errors import DomainError
from fem import GRAD_X_REF, GRAD_Y_REF, STIFFNESS_REF, assemble_elements, element_load

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class EdgeData:
    """Per coarse edge: harmonic-mean coefficient on each fine segment and scales"""

    edge: object
    kappa: np.ndarray
    h_E: float
    l_E: int
    delta: float
    h: float
    fine_delta: float = 0.0

    @property
    def penalty_scale(self):
        """Penalty weight per unit coefficient on each fine segment"""
        return self.delta / self.h_E + self.fine_delta / self.h


@dataclass(frozen=True, eq=False)
class SipgOperator:
    """Broken-space operator split into volume, consistency and penalty parts"""

    volume: sparse.csr_matrix
    consistency: sparse.csr_matrix
    penalty: sparse.csr_matrix
    edges: tuple
    delta: float
    fine_delta: float = 0.0

    @property
    def matrix(self):
        return (self.volume + self.consistency + self.penalty).tocsr()

    def volume_form(self, u, v=None):
        v = u if v is None else v
        return float(v @ (self.volume @ u))

    def penalty_form(self, u, v=None):
        v = u if v is None else v
        return float(v @ (self.penalty @ u))

    def consistency_form(self, u, v=None):
        v = u if v is None else v
        return float(v @ (self.consistency @ u))


def harmonic_mean(a, b):
    return 2.0 * a * b / (a + b)


def edge_data(coarse, coef, delta, fine_delta=0.0):
    coef = np.asarray(coef, dtype=float)
    data = []
    for edge in coarse.edges:
        if edge.is_boundary:
            kappa = coef[edge.elem_minus]
        else:
            kappa = harmonic_mean(coef[edge.elem_minus], coef[edge.elem_plus])
        data.append(EdgeData(edge=edge, kappa=kappa, h_E=coarse.H, l_E=edge.l_E, delta=delta,
                             h=coarse.fine.h, fine_delta=fine_delta))
    return tuple(data)


def _segment_rows(broken, edges):
    """
    Stack jump and normal-flux functionals of every fine segment.

    Returns sparse Ja, Jb (jumps at the two segment ends), G (the normal
    derivative at the segment midpoint; a Q1 normal derivative is linear
    along the side) and the per-segment coefficient.
    """
    coarse = broken.coarse
    fine = coarse.fine
    n_dofs = broken.n_dofs
    ja_rows, ja_cols, ja_vals = [], [], []
    jb_rows, jb_cols, jb_vals = [], [], []
    g_rows, g_cols, g_vals = [], [], []
    kappa = []
    offset = 0

    for data in edges:
        edge = data.edge
        r = len(edge.segments)
        rows = offset + np.arange(r)
        nx_, ny_ = edge.normal
        flux_ref = (nx_ * GRAD_X_REF + ny_ * GRAD_Y_REF) / fine.h

        sides = [(edge.k_minus, edge.elem_minus, 1.0)]
        if not edge.is_boundary:
            sides.append((edge.k_plus, edge.elem_plus, -1.0))
        for K, elements, sign in sides:
            a = broken.dof(K, edge.segments[:, 0])
            b = broken.dof(K, edge.segments[:, 1])
            ja_rows.append(rows), ja_cols.append(a), ja_vals.append(np.full(r, sign))
            jb_rows.append(rows), jb_cols.append(b), jb_vals.append(np.full(r, sign))
            g_rows.append(np.repeat(rows, 4))
            g_cols.append(broken.element_dofs[elements].ravel())
            g_vals.append(np.tile(flux_ref / data.l_E, r))
        kappa.append(data.kappa)
        offset += r

    def build(rows, cols, vals):
        return sparse.csr_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
            shape=(offset, n_dofs),
        )

    return (build(ja_rows, ja_cols, ja_vals), build(jb_rows, jb_cols, jb_vals),
            build(g_rows, g_cols, g_vals), np.concatenate(kappa))


def broken_stiffness(broken, coef):
    return assemble_elements(STIFFNESS_REF, coef, broken.element_dofs, broken.n_dofs)


def broken_load(broken, f):
    return element_load(broken.coarse.fine, f, broken.element_dofs, broken.n_dofs)


def assemble_sipg(broken, coef, delta, fine_delta=0.0):
    """
    SIPG operator on the broken space for a per-fine-element coefficient.

    The penalty integral is exact for the linear jump on each fine segment.
    The normal derivative of a Q1 function is linear along a cell side, so
    the consistency integral uses midpoint quadrature on each segment.
    Each coarse edge uses h_E = H for the coarse penalty delta and the
    fine segment length h for fine_delta.

    Raises:
        DomainError: for a nonpositive penalty, a negative fine penalty or
            a nonpositive coefficient.
    """
    if not delta > 0.0:
        raise DomainError(f"penalty parameter must be positive, got {delta}")
    if not fine_delta >= 0.0:
        raise DomainError(f"fine penalty parameter must be nonnegative, got {fine_delta}")
    coef = np.asarray(coef, dtype=float)
    if not np.all(np.isfinite(coef)) or np.any(coef <= 0.0):
        raise DomainError("coefficient must be finite and strictly positive")

    coarse = broken.coarse
    h = coarse.fine.h
    edges = edge_data(coarse, coef, delta, fine_delta)
    Ja, Jb, G, kappa = _segment_rows(broken, edges)
    D = sparse.diags(kappa)

    jump_mean = Ja + Jb
    flux = G.T @ D @ jump_mean
    consistency = -(h / 2.0) * (flux + flux.T)

    scale = np.concatenate([np.full(len(data.edge.segments), data.penalty_scale) for data in edges])
    P = sparse.diags(kappa * scale)
    penalty = (Ja.T @ P @ Ja * 2.0 + Ja.T @ P @ Jb + Jb.T @ P @ Ja + Jb.T @ P @ Jb * 2.0) * (h / 6.0)

    logger.debug("assembled SIPG operator: %d broken dofs, %d segments, delta=%g, fine_delta=%g",
                 broken.n_dofs, len(kappa), delta, fine_delta)
    return SipgOperator(volume=broken_stiffness(broken, coef), consistency=consistency.tocsr(),
                        penalty=penalty.tocsr(), edges=edges, delta=delta, fine_delta=fine_delta)


def assemble_coarse_dg(basis, sipg, load):
    """Galerkin projection of the SIPG operator onto the broken basis"""
    return galerkin_project(basis, sipg.matrix, load, "dg")


def solve_coarse_dg(op):
    """Solve the coarse DG system; a failed SPD check reports the penalty as too small"""
    return solve_coarse(op)
