"""
Multiscale partition of unity, the spectral mass weight kappa-tilde, and the
snapshot -> offline -> online hierarchy of local spaces.

Local spaces live on subdomains: coarse neighborhoods for the continuous
coupling, single coarse elements for the discontinuous one. Their basis
columns are indexed by the subdomain's sorted fine nodes.
"""

import logging
from concurrent.futures import ThreadPoolExecutor, as_completed
from dataclasses import dataclass

import numpy as np
from scipy import sparse
from tqdm import tqdm

from coeff import CoefficientModel, eval_coefficient
from eig import sym_gen_eig
from errors import DomainError, InvalidConfigurationError
from fem import (
    assemble_stiffness,
    assemble_weighted_mass,
    gradient_operators,
    harmonic_extension,
)

logger = logging.getLogger(__name__)

# Eigenvalues below this fraction of the largest one solved are treated as
# null-space modes by the adaptive rule.
ZERO_EIGENVALUE_RATIO = 1e-8

# Largest |sum_i chi_i - 1| accepted silently from the extension solves.
POU_TOL = 1e-10


def run_parallel(task, items, workers=1, desc=None, show_progress=False):
    """Apply task to every item; results come back in item order"""
    items = list(items)
    results = [None] * len(items)
    if workers <= 1:
        for k, item in enumerate(tqdm(items, desc=desc, disable=not show_progress, leave=False)):
            results[k] = task(item)
        return results

    with ThreadPoolExecutor(max_workers=workers) as executor:
        futures = {executor.submit(task, item): k for k, item in enumerate(items)}
        for future in tqdm(as_completed(futures), total=len(futures), desc=desc,
                           disable=not show_progress, leave=False):
            results[futures[future]] = future.result()
    return results


# ---------------------------------------------------------------------------
# Partition of unity and kappa-tilde
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class PartitionOfUnity:
    """
    Multiscale hat functions chi_i, stored per coarse element.

    extensions[K] has one column per vertex of K (in coarse.elements[K]
    order) over the sorted fine nodes of K. energy holds
    H^2 * sum_i |grad chi_i|^2 at each fine element midpoint, NaN on
    elements of coarse elements that were not built.
    """

    coarse: object
    extensions: dict
    energy: np.ndarray

    @property
    def covered(self):
        return tuple(sorted(self.extensions))

    def chi(self, i, subdomain=None):
        """Values of chi_i on the subdomain's nodes (all fine nodes when None)"""
        fine = self.coarse.fine
        nodes = np.arange(fine.n_nodes) if subdomain is None else subdomain.nodes
        out = np.zeros(len(nodes))
        for K in self.coarse.neighborhood(i):
            if K not in self.extensions:
                raise DomainError(f"partition of unity was not built on coarse element {K}")
            vertex = list(self.coarse.elements[K]).index(i)
            element_nodes = self.coarse.element_subdomain(K).nodes
            out[np.searchsorted(nodes, element_nodes)] = self.extensions[K][:, vertex]
        return out

    def partition_sum(self):
        """sum_i chi_i at every fine node covered by the build"""
        total = np.full(self.coarse.fine.n_nodes, np.nan)
        for K, ext in self.extensions.items():
            total[self.coarse.element_subdomain(K).nodes] = ext.sum(axis=1)
        return total

    def dense(self):
        return np.vstack([self.chi(i) for i in range(self.coarse.n_nodes)])


def _hat_traces(coarse, K, subdomain):
    fine = coarse.fine
    xy = fine.coords[subdomain.nodes[subdomain.on_boundary]]
    corners = coarse.node_coords[coarse.elements[K]]
    distance = np.abs(xy[:, None, :] - corners[None, :, :]) / coarse.H
    return np.prod(np.clip(1.0 - distance, 0.0, 1.0), axis=2)


def _element_pou(coarse, coef, K):
    sub = coarse.element_subdomain(K)
    ext = harmonic_extension(coarse.fine, sub, coef, _hat_traces(coarse, K, sub))
    defect = float(np.abs(ext.sum(axis=1) - 1.0).max())
    if defect > POU_TOL:
        logger.warning("partition of unity on coarse element %d misses 1 by %.3e", K, defect)
    gx, gy = gradient_operators(coarse.fine, sub.local_elements, sub.n_nodes)
    energy = coarse.H ** 2 * ((gx @ ext) ** 2 + (gy @ ext) ** 2).sum(axis=1)
    return K, ext, energy


def build_pou(coarse, coef, elements=None, workers=1, show_progress=False):
    """
    Harmonic extension of the bilinear hat traces into every coarse element.

    Args:
        coarse: CoarseGrid.
        coef: positive per-fine-element coefficient.
        elements: coarse element ids to build (all when None).
    """
    elements = range(coarse.n_elements) if elements is None else elements
    results = run_parallel(lambda K: _element_pou(coarse, coef, K), elements,
                           workers=workers, desc="partition of unity", show_progress=show_progress)
    energy = np.full(coarse.fine.n_elements, np.nan)
    extensions = {}
    for K, ext, element_energy in results:
        extensions[K] = ext
        energy[coarse.element_subdomain(K).elements] = element_energy
    return PartitionOfUnity(coarse=coarse, extensions=extensions, energy=energy)


def kappa_tilde(coef, pou, elements=None):
    """
    Spectral mass weight coef * sum_i H^2 |grad chi_i|^2.

    Returns a full-length per-element array; entries outside the requested
    (or covered) elements are NaN.
    """
    coef = np.asarray(coef, dtype=float)
    if elements is None:
        elements = np.flatnonzero(np.isfinite(pou.energy))
    elements = np.asarray(elements)
    energy = pou.energy[elements]
    if not np.all(np.isfinite(energy)):
        raise DomainError("partition of unity does not cover the requested elements")
    weight = np.full(len(pou.energy), np.nan)
    weight[elements] = coef[elements] * energy
    if np.any(weight[elements] <= 0.0):
        raise DomainError("kappa-tilde vanished on some element; partition of unity is degenerate")
    return weight


def mass_weight(coarse, coef, subdomain, rule="kappa_tilde", pou=None):
    """Weight of the local mass matrix on a subdomain"""
    if rule == "kappa":
        return np.asarray(coef, dtype=float)
    if rule != "kappa_tilde":
        raise InvalidConfigurationError(f"unknown mass weight '{rule}'")
    if pou is None:
        pou = build_pou(coarse, coef, elements=subdomain.coarse_elements)
    return kappa_tilde(coef, pou, subdomain.elements)


# ---------------------------------------------------------------------------
# Solution range
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SolutionRangeGrid:
    """Equally spaced solution samples, optionally paired with blend parameters"""

    u_min: float
    u_max: float
    u_points: tuple
    mu_points: tuple = None

    @property
    def pairs(self):
        if self.mu_points is None:
            return [(u, None) for u in self.u_points]
        return [(u, mu) for u in self.u_points for mu in self.mu_points]

    @property
    def mean_u(self):
        return float(np.mean(self.u_points))

    @property
    def mean_mu(self):
        return None if self.mu_points is None else float(np.mean(self.mu_points))


def estimate_solution_range(fine, family, f_low=0.1, f_high=1.0, delta=1e-3, max_iters=25):
    """
    Bounds of the fine solutions for sources between f_low and f_high.

    u_min is the minimum of the f_low solve (zero by the boundary
    condition and the maximum principle), u_max the maximum of the f_high
    solve.
    """
    from picard import run_picard_fine

    if not f_low < f_high:
        raise DomainError(f"solution range needs f_low < f_high (got {f_low}, {f_high})")
    model = CoefficientModel(family.base)
    u_low, _ = run_picard_fine(fine, model, f_low, delta, max_iters)
    u_high, _ = run_picard_fine(fine, model, f_high, delta, max_iters)
    u_min = min(0.0, float(u_low.min()))
    u_max = float(u_high.max())
    logger.info("solution range [%.4e, %.4e]", u_min, u_max)
    return u_min, u_max


def sample_range(u_range, n_s, mu_samples=None):
    """n_s equally spaced points of [u_min, u_max], both ends included"""
    u_min, u_max = u_range
    if n_s < 2:
        raise InvalidConfigurationError(f"n_s must be at least 2, got {n_s}")
    if not u_min < u_max:
        raise DomainError(f"degenerate solution range [{u_min}, {u_max}]")
    points = tuple(float(u) for u in np.linspace(u_min, u_max, n_s))
    mu_points = None if mu_samples is None else tuple(float(mu) for mu in mu_samples)
    return SolutionRangeGrid(u_min=float(u_min), u_max=float(u_max), u_points=points, mu_points=mu_points)


# ---------------------------------------------------------------------------
# Local spaces
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SnapshotRule:
    """
    How many eigenfunctions each snapshot sample contributes.

    fixed: the first l_max. adaptive: cut at the largest ratio
    lambda_{l+1} / lambda_l for l <= l_cap, then add l_extra more.
    """

    kind: str = "fixed"
    l_max: int = 3
    l_cap: int = 6
    l_extra: int = 0

    def __post_init__(self):
        if self.kind not in ("fixed", "adaptive"):
            raise InvalidConfigurationError(f"unknown snapshot rule '{self.kind}'")
        if min(self.l_max, self.l_cap) < 1 or self.l_extra < 0:
            raise InvalidConfigurationError("snapshot rule counts must be positive")

    @property
    def solve_count(self):
        if self.kind == "fixed":
            return self.l_max
        return self.l_cap + 1 + self.l_extra

    def select(self, eigenvalues):
        n = len(eigenvalues)
        if self.kind == "fixed":
            return min(self.l_max, n)
        head = np.asarray(eigenvalues[:self.l_cap + 1])
        scale = abs(head[-1])
        best, best_ratio = min(self.l_cap, n), -np.inf
        for l in range(1, min(self.l_cap, len(head) - 1) + 1):
            lower, upper = head[l - 1], head[l]
            if lower <= ZERO_EIGENVALUE_RATIO * scale:
                continue
            if upper / lower > best_ratio:
                best, best_ratio = l, upper / lower
        return min(best + self.l_extra, n)


@dataclass(frozen=True, eq=False)
class LocalSpace:
    """
    One stage of the local space hierarchy on a subdomain.

    basis columns are nodal vectors over subdomain.nodes; eigenvalues are
    those of the stage's pencil in ascending order. lam_star is
    1 / lambda_{M+1}, None when nothing was discarded.
    """

    subdomain: object
    stage: str
    basis: np.ndarray
    eigenvalues: np.ndarray
    lam_star: float = None
    n_raw: int = None

    @property
    def index(self):
        return self.subdomain.index

    @property
    def size(self):
        return self.basis.shape[1]


def _local_pencil(coarse, subdomain, coef, weight, formulation):
    """Stiffness and weighted mass on the subdomain, reduced for DG boundary nodes"""
    fine = coarse.fine
    A = assemble_stiffness(fine, coef, subdomain)
    S = assemble_weighted_mass(fine, weight, subdomain)
    if formulation == "dg":
        keep = np.flatnonzero(~subdomain.on_global_boundary)
    else:
        keep = np.arange(subdomain.n_nodes)
    return A[keep][:, keep], S[keep][:, keep], keep


def _orthonormalize(columns, gram, tol):
    """Modified Gram-Schmidt (two passes) in the inner product of `gram`"""
    kept = []
    for column in columns.T:
        norm0 = np.sqrt(column @ (gram @ column))
        if norm0 == 0.0:
            continue
        residual = column.copy()
        for _ in range(2):
            for q in kept:
                residual -= (q @ (gram @ residual)) * q
        norm = np.sqrt(residual @ (gram @ residual))
        if norm < tol * norm0:
            continue
        kept.append(residual / norm)
    if not kept:
        raise DomainError("snapshot space is empty after deduplication")
    return np.column_stack(kept)


def build_snapshots(coarse, subdomain, family, range_grid, rule, formulation="cg",
                    weight_rule="kappa_tilde", dedup_tol=1e-10):
    """
    Local spectral snapshots on one subdomain.

    Every sample (u_j, mu_j) freezes the coefficient exp(kappa_mu * u_j) on
    the subdomain and contributes the leading eigenfunctions of the
    (stiffness, weighted mass) pencil: Neumann on the subdomain boundary,
    Dirichlet where a DG element touches the domain boundary. Near-parallel
    columns are dropped and the rest orthonormalised in the unit mass
    inner product.
    """
    fine = coarse.fine
    columns, eigenvalues = [], []
    for u, mu in range_grid.pairs:
        coef = eval_coefficient(CoefficientModel(family.at(mu)), u)
        weight = mass_weight(coarse, coef, subdomain, weight_rule)
        A, S, keep = _local_pencil(coarse, subdomain, coef, weight, formulation)
        pairs = sym_gen_eig(A, S, count=min(rule.solve_count, len(keep)))
        L = rule.select(pairs.values)
        block = np.zeros((subdomain.n_nodes, L))
        block[keep] = pairs.vectors[:, :L]
        columns.append(block)
        eigenvalues.extend(pairs.values[:L])

    raw = np.hstack(columns)
    unit_mass = assemble_weighted_mass(fine, np.ones(fine.n_elements), subdomain)
    basis = _orthonormalize(raw, unit_mass, dedup_tol)
    logger.debug("%s %d: %d snapshot columns (%d before deduplication)",
                 subdomain.kind, subdomain.index, basis.shape[1], raw.shape[1])
    return LocalSpace(subdomain=subdomain, stage="snapshot", basis=basis,
                      eigenvalues=np.asarray(eigenvalues), n_raw=raw.shape[1])


def _project(space, A, S, keep):
    R = space.basis[keep]
    return R.T @ (A @ R), R.T @ (S @ R)


def build_offline(snapshot, coarse, family, range_grid, m_off, formulation="cg",
                  weight_rule="kappa_tilde"):
    """
    Reduce the snapshot space with the pencil at the averaged parameter.

    Raises:
        InvalidConfigurationError: if m_off exceeds the snapshot size.
    """
    if not 1 <= m_off <= snapshot.size:
        raise InvalidConfigurationError(
            f"m_off={m_off} outside [1, {snapshot.size}] for {snapshot.subdomain.kind} {snapshot.index}")
    coef = eval_coefficient(CoefficientModel(family.at(range_grid.mean_mu)), range_grid.mean_u)
    weight = mass_weight(coarse, coef, snapshot.subdomain, weight_rule)
    A, S, keep = _local_pencil(coarse, snapshot.subdomain, coef, weight, formulation)
    A_off, S_off = _project(snapshot, A, S, keep)
    pairs = sym_gen_eig(A_off, S_off)
    basis = snapshot.basis @ pairs.vectors[:, :m_off]
    lam_star = _lam_star(pairs.values, m_off)
    return LocalSpace(subdomain=snapshot.subdomain, stage="offline", basis=basis,
                      eigenvalues=pairs.values, lam_star=lam_star, n_raw=snapshot.size)


def _lam_star(eigenvalues, kept):
    if kept >= len(eigenvalues):
        return None
    first_discarded = eigenvalues[kept]
    return float(1.0 / first_discarded) if first_discarded > 0.0 else float("inf")


def build_online(offline, coarse, coef, weight, m_on, formulation="cg"):
    """
    Online space at the current coefficient: the m_on leading eigenvectors
    of the pencil projected onto the offline space.

    Args:
        coef: per-element coefficient kappa(x; u_bar) for this subdomain.
        weight: per-element mass weight on (at least) the subdomain's elements.
    """
    if not 1 <= m_on <= offline.size:
        raise InvalidConfigurationError(
            f"m_on={m_on} outside [1, {offline.size}] for {offline.subdomain.kind} {offline.index}")
    A, S, keep = _local_pencil(coarse, offline.subdomain, coef, weight, formulation)
    A_on, S_on = _project(offline, A, S, keep)
    pairs = sym_gen_eig(A_on, S_on)
    return LocalSpace(subdomain=offline.subdomain, stage="online",
                      basis=offline.basis @ pairs.vectors[:, :m_on],
                      eigenvalues=pairs.values, lam_star=_lam_star(pairs.values, m_on),
                      n_raw=offline.size)


# ---------------------------------------------------------------------------
# Global basis matrices
# ---------------------------------------------------------------------------

def assemble_cg_basis(coarse, pou, online_spaces):
    """
    Conforming basis chi_i * psi_k as a sparse (fine nodes x N_c) matrix.

    Columns are node-major, eigenvalue-minor. Rows of domain-boundary fine
    nodes are zero, so every column satisfies the Dirichlet condition.
    """
    fine = coarse.fine
    rows, cols, values = [], [], []
    offset = 0
    for space in sorted(online_spaces, key=lambda s: s.index):
        sub = space.subdomain
        chi = pou.chi(space.index, sub)
        block = chi[:, None] * space.basis
        block[fine.boundary[sub.nodes]] = 0.0
        local, k = np.nonzero(block)
        rows.append(sub.nodes[local])
        cols.append(offset + k)
        values.append(block[local, k])
        offset += space.size
    return sparse.csr_matrix(
        (np.concatenate(values), (np.concatenate(rows), np.concatenate(cols))),
        shape=(fine.n_nodes, offset),
    )


def assemble_dg_basis(broken, online_spaces):
    """Block-diagonal broken basis as a sparse (broken dofs x N_c) matrix"""
    rows, cols, values = [], [], []
    offset = 0
    for space in sorted(online_spaces, key=lambda s: s.index):
        dofs = broken.block_dofs[space.index]
        local, k = np.nonzero(space.basis)
        rows.append(dofs[local])
        cols.append(offset + k)
        values.append(space.basis[local, k])
        offset += space.size
    return sparse.csr_matrix(
        (np.concatenate(values), (np.concatenate(rows), np.concatenate(cols))),
        shape=(broken.n_dofs, offset),
    )
