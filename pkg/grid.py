"""
Matched fine and coarse uniform Cartesian meshes on the unit square.

Fine nodes are numbered row by row, node (i, j) -> j * (nx + 1) + i, so
sorting node ids sorts them lexicographically by (y, x). Fine elements are
numbered the same way, element (i, j) -> j * nx + i, with their four nodes
listed counterclockwise from the lower-left corner.
"""

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy import sparse

from errors import InvalidConfigurationError

logger = logging.getLogger(__name__)


def _frozen(array):
    array = np.ascontiguousarray(array)
    array.flags.writeable = False
    return array


@dataclass(frozen=True, eq=False)
class FineGrid:
    """Uniform quadrilateral fine grid with nx cells per side"""

    nx: int
    coords: np.ndarray
    elements: np.ndarray
    boundary: np.ndarray
    _cache: dict = field(default_factory=dict, init=False, repr=False)

    @property
    def h(self):
        return 1.0 / self.nx

    @property
    def n_nodes(self):
        return (self.nx + 1) ** 2

    @property
    def n_elements(self):
        return self.nx ** 2

    def node_id(self, i, j):
        return np.asarray(j) * (self.nx + 1) + np.asarray(i)

    def node_indices(self, nodes):
        """Return the (i, j) lattice indices of fine node ids"""
        nodes = np.asarray(nodes)
        return nodes % (self.nx + 1), nodes // (self.nx + 1)

    def midpoints(self):
        if 'midpoints' not in self._cache:
            self._cache['midpoints'] = _frozen(self.coords[self.elements].mean(axis=1))
        return self._cache['midpoints']


@dataclass(frozen=True, eq=False)
class CoarseEdge:
    """
    One coarse edge E with the fine segments that tile it.

    k_minus is always a real coarse element and `normal` is its outward
    normal on E. k_plus is the element across E, or -1 when E lies on the
    domain boundary. Row s of `segments` holds the two fine node ids of the
    s-th fine segment; elem_minus[s] / elem_plus[s] are the fine elements
    touching that segment from either side.
    """

    index: int
    orientation: str
    k_minus: int
    k_plus: int
    normal: tuple
    segments: np.ndarray
    elem_minus: np.ndarray
    elem_plus: np.ndarray

    @property
    def is_boundary(self):
        return self.k_plus < 0

    @property
    def l_E(self):
        return 1 if self.is_boundary else 2


@dataclass(frozen=True, eq=False)
class Subdomain:
    """Fine-level view of a coarse neighborhood or a single coarse element"""

    kind: str
    index: int
    coarse_elements: tuple
    nodes: np.ndarray
    elements: np.ndarray
    local_elements: np.ndarray
    on_boundary: np.ndarray
    on_global_boundary: np.ndarray

    @property
    def n_nodes(self):
        return len(self.nodes)

    @property
    def interior(self):
        return np.flatnonzero(~self.on_boundary)


@dataclass(frozen=True, eq=False)
class CoarseGrid:
    """Uniform coarse grid of m x m elements, each made of (nx/m)^2 fine cells"""

    m: int
    fine: FineGrid
    node_coords: np.ndarray
    elements: np.ndarray
    element_fine: np.ndarray
    neighborhoods: tuple
    edges: tuple
    _subdomains: dict = field(default_factory=dict, init=False, repr=False)

    @property
    def ratio(self):
        return self.fine.nx // self.m

    @property
    def H(self):
        return 1.0 / self.m

    @property
    def n_nodes(self):
        return (self.m + 1) ** 2

    @property
    def n_elements(self):
        return self.m ** 2

    def neighborhood(self, i):
        """Coarse elements whose closure contains coarse node i"""
        if not 0 <= i < self.n_nodes:
            raise InvalidConfigurationError(f"coarse node {i} out of range")
        return self.neighborhoods[i]

    def fine_element_owner(self):
        owner = np.empty(self.fine.n_elements, dtype=int)
        for K, fine_ids in enumerate(self.element_fine):
            owner[fine_ids] = K
        return owner

    def subdomain_fine_nodes(self, coarse_elements, kind='element', index=-1):
        """
        Collect the fine nodes of a union of coarse elements.

        Args:
            coarse_elements: ids of the coarse elements forming the subdomain;
                their union must be a rectangle (a neighborhood or one element).
            kind: 'neighborhood' or 'element', kept for bookkeeping.
            index: coarse node id (neighborhood) or coarse element id.

        Returns:
            Subdomain with nodes sorted by id and a per-node flag for the
            subdomain boundary and for the global boundary.
        """
        coarse_elements = tuple(sorted(int(K) for K in coarse_elements))
        elements = np.sort(np.concatenate([self.element_fine[K] for K in coarse_elements]))
        element_nodes = self.fine.elements[elements]
        nodes = np.unique(element_nodes)
        local = np.searchsorted(nodes, element_nodes)

        i, j = self.fine.node_indices(nodes)
        on_boundary = (i == i.min()) | (i == i.max()) | (j == j.min()) | (j == j.max())
        return Subdomain(
            kind=kind,
            index=index,
            coarse_elements=coarse_elements,
            nodes=_frozen(nodes),
            elements=_frozen(elements),
            local_elements=_frozen(local),
            on_boundary=_frozen(on_boundary),
            on_global_boundary=_frozen(self.fine.boundary[nodes]),
        )

    def _cached_subdomain(self, kind, index, coarse_elements):
        key = (kind, int(index))
        if key not in self._subdomains:
            subdomain = self.subdomain_fine_nodes(coarse_elements, kind=kind, index=int(index))
            self._subdomains.setdefault(key, subdomain)
        return self._subdomains[key]

    def element_subdomain(self, K):
        return self._cached_subdomain('element', K, (K,))

    def neighborhood_subdomain(self, i):
        return self._cached_subdomain('neighborhood', i, self.neighborhood(i))

    def subdomains(self, formulation):
        """Neighborhoods for CG, coarse elements for DG"""
        if formulation == 'cg':
            return [self.neighborhood_subdomain(i) for i in range(self.n_nodes)]
        if formulation == 'dg':
            return [self.element_subdomain(K) for K in range(self.n_elements)]
        raise InvalidConfigurationError(f"unknown formulation '{formulation}'")


@dataclass(frozen=True, eq=False)
class BrokenSpace:
    """
    Fine Q1 space that is continuous inside each coarse element and
    duplicated across coarse edges. Coarse element K owns the dof block
    K * (r+1)^2 ... (K+1) * (r+1)^2 - 1, ordered like its sorted fine nodes.
    """

    coarse: CoarseGrid
    dof_nodes: np.ndarray
    element_dofs: np.ndarray
    block_dofs: np.ndarray

    @property
    def n_dofs(self):
        return len(self.dof_nodes)

    def dof(self, K, nodes):
        """Broken dof ids of fine nodes seen from coarse element K"""
        r = self.coarse.ratio
        I, J = K % self.coarse.m, K // self.coarse.m
        i, j = self.coarse.fine.node_indices(nodes)
        p, q = i - I * r, j - J * r
        if np.any((p < 0) | (p > r) | (q < 0) | (q > r)):
            raise InvalidConfigurationError(f"fine node outside coarse element {K}")
        return K * (r + 1) ** 2 + q * (r + 1) + p

    def inject(self, u_fine):
        return np.asarray(u_fine)[self.dof_nodes]

    def injection_matrix(self):
        n = self.n_dofs
        return sparse.csr_matrix(
            (np.ones(n), (np.arange(n), self.dof_nodes)),
            shape=(n, self.coarse.fine.n_nodes),
        )

    def to_nodal(self, u_broken):
        """Average duplicated values back onto the fine nodes (for display)"""
        n = self.coarse.fine.n_nodes
        totals = np.bincount(self.dof_nodes, weights=u_broken, minlength=n)
        counts = np.bincount(self.dof_nodes, minlength=n)
        return totals / counts


def _build_fine(nx):
    n1 = nx + 1
    j, i = np.divmod(np.arange(n1 * n1), n1)
    coords = np.column_stack([i, j]).astype(float) / nx

    ej, ei = np.divmod(np.arange(nx * nx), nx)
    n0 = ej * n1 + ei
    elements = np.column_stack([n0, n0 + 1, n0 + n1 + 1, n0 + n1])

    boundary = (i == 0) | (i == nx) | (j == 0) | (j == nx)
    return FineGrid(nx=nx, coords=_frozen(coords), elements=_frozen(elements),
                    boundary=_frozen(boundary))


def _build_edges(fine, m, r):
    nx = fine.nx

    def element(I, J):
        return J * m + I

    edges = []
    q = np.arange(r)
    # vertical edges x = I * H
    for J in range(m):
        for I in range(m + 1):
            x = I * r
            ys = J * r + q
            segments = np.column_stack([fine.node_id(x, ys), fine.node_id(x, ys + 1)])
            left = ys * nx + (x - 1)
            right = ys * nx + x
            none = np.full(r, -1)
            if I == 0:
                args = (element(0, J), -1, (-1.0, 0.0), right, none)
            elif I == m:
                args = (element(m - 1, J), -1, (1.0, 0.0), left, none)
            else:
                args = (element(I - 1, J), element(I, J), (1.0, 0.0), left, right)
            edges.append(CoarseEdge(len(edges), 'v', args[0], args[1], args[2],
                                    _frozen(segments), _frozen(args[3]), _frozen(args[4])))
    # horizontal edges y = J * H
    for J in range(m + 1):
        for I in range(m):
            y = J * r
            xs = I * r + q
            segments = np.column_stack([fine.node_id(xs, y), fine.node_id(xs + 1, y)])
            below = (y - 1) * nx + xs
            above = y * nx + xs
            none = np.full(r, -1)
            if J == 0:
                args = (element(I, 0), -1, (0.0, -1.0), above, none)
            elif J == m:
                args = (element(I, m - 1), -1, (0.0, 1.0), below, none)
            else:
                args = (element(I, J - 1), element(I, J), (0.0, 1.0), below, above)
            edges.append(CoarseEdge(len(edges), 'h', args[0], args[1], args[2],
                                    _frozen(segments), _frozen(args[3]), _frozen(args[4])))
    return tuple(edges)


def build_grids(nx, m):
    """
    Build the fine grid with nx cells per side and the coarse grid with m.

    Raises:
        InvalidConfigurationError: if m does not divide nx or nx < 2m.
    """
    if int(nx) != nx or int(m) != m or nx <= 0 or m <= 0:
        raise InvalidConfigurationError(f"nx and m must be positive integers (got nx={nx}, m={m})")
    nx, m = int(nx), int(m)
    if nx % m != 0:
        raise InvalidConfigurationError(f"m={m} does not divide nx={nx}")
    if nx < 2 * m:
        raise InvalidConfigurationError(f"nx={nx} must be at least 2*m={2 * m}")

    fine = _build_fine(nx)
    r = nx // m

    J, I = np.divmod(np.arange((m + 1) ** 2), m + 1)
    node_coords = np.column_stack([I, J]).astype(float) / m

    KJ, KI = np.divmod(np.arange(m * m), m)
    c0 = KJ * (m + 1) + KI
    elements = np.column_stack([c0, c0 + 1, c0 + m + 2, c0 + m + 1])

    element_fine = np.empty((m * m, r * r), dtype=int)
    local_j, local_i = np.divmod(np.arange(r * r), r)
    for K in range(m * m):
        element_fine[K] = (KJ[K] * r + local_j) * nx + (KI[K] * r + local_i)

    neighborhoods = []
    n_nodes = (m + 1) ** 2
    for node in range(n_nodes):
        Ni, Nj = node % (m + 1), node // (m + 1)
        patch = [b * m + a
                 for b in (Nj - 1, Nj) for a in (Ni - 1, Ni)
                 if 0 <= a < m and 0 <= b < m]
        neighborhoods.append(tuple(sorted(patch)))

    coarse = CoarseGrid(
        m=m,
        fine=fine,
        node_coords=_frozen(node_coords),
        elements=_frozen(elements),
        element_fine=_frozen(element_fine),
        neighborhoods=tuple(neighborhoods),
        edges=_build_edges(fine, m, r),
    )
    logger.debug("built grids nx=%d m=%d (%d coarse nodes)", nx, m, n_nodes)
    return fine, coarse


def build_broken_space(coarse):
    """Duplicate the fine nodes of every coarse element into its own dof block"""
    fine = coarse.fine
    r = coarse.ratio
    block = (r + 1) ** 2
    dof_nodes = np.empty(coarse.n_elements * block, dtype=int)
    block_dofs = np.arange(coarse.n_elements * block).reshape(coarse.n_elements, block)
    element_dofs = np.empty((fine.n_elements, 4), dtype=int)

    for K in range(coarse.n_elements):
        sub = coarse.element_subdomain(K)
        dof_nodes[block_dofs[K]] = sub.nodes
        element_dofs[sub.elements] = block_dofs[K][sub.local_elements]

    return BrokenSpace(coarse=coarse, dof_nodes=_frozen(dof_nodes),
                       element_dofs=_frozen(element_dofs), block_dofs=_frozen(block_dofs))
