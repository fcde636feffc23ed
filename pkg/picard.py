"""
Picard iteration for the fine reference problem and for the CG / DG
multiscale problems.

The coefficient is frozen at the previous iterate, exp(kappa(x) u^n), with
the element value taken from the mean of the element's nodal values.
"""

import logging
import threading
import time
from dataclasses import dataclass, field

import numpy as np

from coeff import CoefficientModel, eval_coefficient
from couple_cg import assemble_coarse_cg, galerkin_matrix, solve_coarse
from couple_dg import assemble_coarse_dg, assemble_sipg, broken_load, solve_coarse_dg
from errors import ConvergenceError, InvalidConfigurationError
from fem import (
    assemble_load,
    assemble_stiffness,
    boundary_dirichlet,
    element_mean,
    solve_spd,
)
from spaces import (
    SnapshotRule,
    assemble_cg_basis,
    assemble_dg_basis,
    build_offline,
    build_online,
    build_pou,
    build_snapshots,
    mass_weight,
    run_parallel,
)

logger = logging.getLogger(__name__)


class ThreadSafeCounter:
    """Invocation counter shared by worker threads (offline builds per process)"""

    def __init__(self):
        self._value = 0
        self._lock = threading.Lock()

    def increment(self):
        with self._lock:
            self._value += 1
            return self._value

    @property
    def value(self):
        with self._lock:
            return self._value


OFFLINE_BUILDS = ThreadSafeCounter()


@dataclass
class IterationRecord:
    index: int
    residual: float
    n_coarse: int
    u_bar_min: float
    u_bar_mean: float
    u_bar_max: float
    seconds: float

    def line(self):
        return f"{self.index} {self.residual:.6e} {self.n_coarse}"


@dataclass
class IterationTrace:
    """Per-iteration residuals of one Picard run"""

    records: list = field(default_factory=list)
    converged: bool = False

    def __len__(self):
        return len(self.records)

    def append(self, record):
        self.records.append(record)
        logger.info("picard iteration %d: residual %.3e (N_c=%d)",
                    record.index, record.residual, record.n_coarse)

    @property
    def residuals(self):
        return [record.residual for record in self.records]

    @property
    def iterations(self):
        return len(self.records)

    def lines(self):
        return [record.line() for record in self.records]


@dataclass(frozen=True, eq=False)
class MsSolution:
    """
    Converged multiscale solution.

    `fine` holds nodal values for CG and broken values for DG; `nodal` is
    always a fine nodal vector (DG traces averaged).
    """

    coarse_values: np.ndarray
    fine: np.ndarray
    nodal: np.ndarray
    formulation: str
    lam_stars: list
    n_coarse: int
    trace: IterationTrace
    online_eigenvalues: list = None

    @property
    def lam_star(self):
        values = [value for value in self.lam_stars if value is not None]
        return max(values) if values else None

    @property
    def iterations(self):
        return len(self.trace)


@dataclass(frozen=True, eq=False)
class MultiscaleProblem:
    """Grids, field and solver settings shared by every run of a study"""

    fine: object
    coarse: object
    broken: object
    family: object
    f: float = 0.1
    delta: float = 1e-3
    max_iters: int = 25
    penalty: float = 4.0
    fine_penalty: float = 10.0
    weight_rule: str = "kappa_tilde"
    workers: int = 1
    show_progress: bool = False

    @property
    def model(self):
        return CoefficientModel(self.family.base)


@dataclass(frozen=True, eq=False)
class OfflineStage:
    """Snapshot and offline spaces of every subdomain, built once per study"""

    formulation: str
    range_grid: object
    rule: SnapshotRule
    snapshots: list
    offline: list

    @property
    def subdomains(self):
        return [space.subdomain for space in self.offline]

    @property
    def m_off(self):
        return max(space.size for space in self.offline)


def region_average(fine, u, subdomain, connectivity=None):
    """
    Integral mean of u over the subdomain.

    Midpoint quadrature of the Q1 interpolant; every fine element has the
    same area, so this is the mean of the element means. `connectivity`
    maps fine element ids to dofs of u (fine.elements for nodal vectors).
    """
    connectivity = fine.elements if connectivity is None else connectivity
    return float(element_mean(u, connectivity[subdomain.elements]).mean())


def _fine_residual(fine, model, F, system, u):
    A = assemble_stiffness(fine, model.at_nodal(fine, u))
    residual = (F - A @ u)[system.free]
    norm = np.linalg.norm(F[system.free])
    return float(np.linalg.norm(residual) / norm) if norm > 0.0 else float(np.linalg.norm(residual))


def run_picard_fine(fine, model, f, delta=1e-3, max_iters=25):
    """
    Fine conforming Picard iteration from u^0 = 0.

    Stops when ||F - A(u^{n+1}) u^{n+1}|| <= delta ||F|| over the free nodes.

    Returns:
        (u, IterationTrace)

    Raises:
        ConvergenceError: after max_iters iterations without convergence.
    """
    if not delta > 0.0:
        raise InvalidConfigurationError(f"delta must be positive, got {delta}")
    F = assemble_load(fine, f)
    u = np.zeros(fine.n_nodes)
    trace = IterationTrace()
    for n in range(1, max_iters + 1):
        start = time.perf_counter()
        A = assemble_stiffness(fine, model.at_nodal(fine, u))
        system = boundary_dirichlet(fine, A, F)
        u = system.expand(solve_spd(system.matrix, system.rhs))
        residual = _fine_residual(fine, model, F, system, u)
        trace.append(IterationRecord(n, residual, fine.n_nodes, float(u.min()), float(u.mean()),
                                     float(u.max()), time.perf_counter() - start))
        if residual <= delta:
            trace.converged = True
            return u, trace
    raise ConvergenceError(f"fine Picard iteration did not converge in {max_iters} iterations "
                           f"(last residual {trace.residuals[-1]:.3e})", trace=trace)


def offline_pipeline(problem, range_grid, rule, m_off, formulation="cg", dedup_tol=1e-10):
    """
    Snapshot and offline spaces for every subdomain of the formulation.

    m_off is an upper bound: a subdomain whose snapshot space is smaller
    keeps all of it.
    """
    OFFLINE_BUILDS.increment()
    coarse = problem.coarse
    subdomains = coarse.subdomains(formulation)

    def build(subdomain):
        snapshot = build_snapshots(coarse, subdomain, problem.family, range_grid, rule,
                                   formulation, problem.weight_rule, dedup_tol)
        offline = build_offline(snapshot, coarse, problem.family, range_grid,
                                min(m_off, snapshot.size), formulation, problem.weight_rule)
        return snapshot, offline

    results = run_parallel(build, subdomains, workers=problem.workers,
                           desc=f"offline ({formulation})", show_progress=problem.show_progress)
    snapshots = [snapshot for snapshot, _ in results]
    offline = [space for _, space in results]
    logger.info("offline stage (%s): %d subdomains, snapshot sizes %d-%d, offline sizes %d-%d",
                formulation, len(offline),
                min(s.size for s in snapshots), max(s.size for s in snapshots),
                min(s.size for s in offline), max(s.size for s in offline))
    return OfflineStage(formulation=formulation, range_grid=range_grid, rule=rule,
                        snapshots=snapshots, offline=offline)


def _online_spaces(problem, offline, coef, state, connectivity, m_on, pou):
    coarse = problem.coarse
    model = problem.model

    def build(space):
        u_bar = region_average(coarse.fine, state, space.subdomain, connectivity)
        coef_tau = eval_coefficient(model, u_bar)
        weight = mass_weight(coarse, coef_tau, space.subdomain, problem.weight_rule, pou=pou)
        online = build_online(space, coarse, coef_tau, weight, min(m_on, space.size), offline.formulation)
        return online, u_bar

    results = run_parallel(build, offline.offline, workers=problem.workers,
                           desc="online spaces", show_progress=problem.show_progress)
    return [online for online, _ in results], np.array([u_bar for _, u_bar in results])


def run_picard_ms(problem, offline, m_on):
    """
    Multiscale Picard iteration with online spaces refreshed every step.

    Each iteration (a) averages the current iterate over every subdomain,
    (b) rebuilds the partition of unity at the pointwise coefficient and
    the online spaces at the averaged ones, (c) assembles the coarse
    system with the fine operator at the previous iterate, (d) solves it,
    and (e) stops when the coarse system reassembled at the new solution
    has relative residual <= delta.

    Raises:
        ConvergenceError: after max_iters iterations without convergence.
    """
    if m_on < 1:
        raise InvalidConfigurationError(f"m_on must be at least 1, got {m_on}")
    fine, coarse, broken = problem.fine, problem.coarse, problem.broken
    formulation = offline.formulation
    model = problem.model

    if formulation == "cg":
        connectivity = fine.elements
        state = np.zeros(fine.n_nodes)
        F = assemble_load(fine, problem.f)
    else:
        connectivity = broken.element_dofs
        state = np.zeros(broken.n_dofs)
        F = broken_load(broken, problem.f)

    def sipg_at(coef):
        return assemble_sipg(broken, coef, problem.penalty, problem.fine_penalty)

    def fine_operator(coef):
        if formulation == "cg":
            return assemble_stiffness(fine, coef)
        return sipg_at(coef).matrix

    trace = IterationTrace()
    for n in range(1, problem.max_iters + 1):
        start = time.perf_counter()
        coef = eval_coefficient(model, element_mean(state, connectivity))
        pou = None
        if formulation == "cg" or problem.weight_rule == "kappa_tilde":
            pou = build_pou(coarse, coef, workers=problem.workers)
        online, u_bars = _online_spaces(problem, offline, coef, state, connectivity, m_on, pou)

        if formulation == "cg":
            basis = assemble_cg_basis(coarse, pou, online)
            op = assemble_coarse_cg(basis, fine_operator(coef), F)
            U, state = solve_coarse(op)
        else:
            basis = assemble_dg_basis(broken, online)
            op = assemble_coarse_dg(basis, sipg_at(coef), F)
            U, state = solve_coarse_dg(op)

        new_coef = eval_coefficient(model, element_mean(state, connectivity))
        residual = op.residual(U, galerkin_matrix(op.basis, fine_operator(new_coef)))
        trace.append(IterationRecord(n, residual, op.n_coarse, float(u_bars.min()),
                                     float(u_bars.mean()), float(u_bars.max()),
                                     time.perf_counter() - start))
        if residual <= problem.delta:
            trace.converged = True
            nodal = state if formulation == "cg" else broken.to_nodal(state)
            return MsSolution(coarse_values=U, fine=state, nodal=nodal, formulation=formulation,
                              lam_stars=[space.lam_star for space in online], n_coarse=op.n_coarse,
                              trace=trace, online_eigenvalues=[space.eigenvalues for space in online])

    raise ConvergenceError(f"{formulation} multiscale Picard iteration did not converge in "
                           f"{problem.max_iters} iterations (last residual {trace.residuals[-1]:.3e})",
                           trace=trace)
