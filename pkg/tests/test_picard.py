import numpy as np
import pytest

from coeff import CoefficientModel, FieldFamily, constant_field, derive_kappa_max, gen_channelized
from errors import ConvergenceError, InvalidConfigurationError
from grid import build_broken_space, build_grids
from picard import (
    OFFLINE_BUILDS,
    IterationRecord,
    IterationTrace,
    MultiscaleProblem,
    ThreadSafeCounter,
    offline_pipeline,
    region_average,
    run_picard_fine,
    run_picard_ms,
)
from post import h1k_error
from spaces import SnapshotRule, sample_range


def _problem(family, nx=12, m=3, **kwargs):
    fine, coarse = build_grids(nx, m)
    return MultiscaleProblem(fine=fine, coarse=coarse, broken=build_broken_space(coarse),
                             family=family, **kwargs)


@pytest.fixture(scope="module")
def nonlinear_family():
    fine, _ = build_grids(12, 3)
    return FieldFamily.single(gen_channelized(12, derive_kappa_max(fine, 1e4, 1.0)))


def test_counter():
    counter = ThreadSafeCounter()
    assert counter.value == 0
    assert counter.increment() == 1
    assert counter.value == 1


def test_trace_lines():
    trace = IterationTrace()
    trace.append(IterationRecord(1, 0.5, 10, 0.0, 0.1, 0.2, 0.01))
    trace.append(IterationRecord(2, 1.25e-4, 10, 0.0, 0.1, 0.2, 0.01))
    assert len(trace) == 2
    assert trace.residuals == [0.5, 1.25e-4]
    assert trace.lines() == ["1 5.000000e-01 10", "2 1.250000e-04 10"]


def test_region_average(grids):
    fine, coarse = grids
    sub = coarse.element_subdomain(4)
    assert region_average(fine, np.full(fine.n_nodes, 2.5), sub) == pytest.approx(2.5)
    linear = fine.coords[:, 0] + fine.coords[:, 1]
    centre = fine.coords[sub.nodes].mean(axis=0).sum()
    assert region_average(fine, linear, sub) == pytest.approx(centre)


def test_region_average_broken(grids, broken):
    fine, coarse = grids
    u = np.zeros(broken.n_dofs)
    u[broken.block_dofs[4]] = 3.0
    assert region_average(fine, u, coarse.element_subdomain(4), broken.element_dofs) == pytest.approx(3.0)
    assert region_average(fine, u, coarse.element_subdomain(0), broken.element_dofs) == 0.0


def test_linear_fine_problem_needs_one_iteration(grids):
    fine, _ = grids
    model = CoefficientModel(constant_field(12, 0.0))
    u, trace = run_picard_fine(fine, model, 0.1)
    assert trace.iterations == 1 and trace.converged
    assert trace.residuals[0] <= 1e-10
    assert np.all(u[fine.boundary] == 0.0)
    assert u.min() >= 0.0


def test_nonlinear_fine_problem_converges(grids, nonlinear_family):
    fine, _ = grids
    u, trace = run_picard_fine(fine, CoefficientModel(nonlinear_family.base), 0.1)
    assert trace.converged
    assert 1 < trace.iterations <= 8
    assert trace.residuals[-1] <= 1e-3
    assert u.max() > 0.0


def test_fine_iteration_limit(grids, nonlinear_family):
    fine, _ = grids
    with pytest.raises(ConvergenceError) as info:
        run_picard_fine(fine, CoefficientModel(nonlinear_family.base), 1.0, delta=1e-14, max_iters=1)
    assert len(info.value.trace) == 1
    assert info.value.diagnostic['iterations'] == 1


def test_fine_rejects_bad_tolerance(grids, linear_family):
    fine, _ = grids
    with pytest.raises(InvalidConfigurationError):
        run_picard_fine(fine, CoefficientModel(linear_family.base), 0.1, delta=0.0)


RANGE = sample_range((0.0, 0.07), 3)


def test_offline_pipeline_builds_every_subdomain(linear_family):
    problem = _problem(linear_family)
    before = OFFLINE_BUILDS.value
    stage = offline_pipeline(problem, RANGE, SnapshotRule("fixed", l_max=2), 4, "cg")
    assert OFFLINE_BUILDS.value == before + 1
    assert len(stage.offline) == problem.coarse.n_nodes
    assert all(space.n_raw == 2 for space in stage.offline)
    assert all(snapshot.n_raw == 6 for snapshot in stage.snapshots)
    # the snapshots are all alike, so m_off is clamped to the snapshot size
    assert stage.m_off == 2


def test_offline_pipeline_parallel_matches_serial(nonlinear_family):
    rule = SnapshotRule("fixed", l_max=3)
    serial = offline_pipeline(_problem(nonlinear_family), RANGE, rule, 3, "cg")
    threaded = offline_pipeline(_problem(nonlinear_family, workers=3), RANGE, rule, 3, "cg")
    for a, b in zip(serial.offline, threaded.offline):
        assert a.index == b.index
        assert a.size == b.size
        assert np.allclose(a.eigenvalues, b.eigenvalues, rtol=1e-8, atol=1e-10)


@pytest.mark.parametrize("formulation", ["cg", "dg"])
def test_linear_multiscale_needs_one_iteration(linear_family, formulation):
    problem = _problem(linear_family, penalty=8.0)
    rule = SnapshotRule("fixed", l_max=3)
    stage = offline_pipeline(problem, RANGE, rule, 3, formulation)
    solution = run_picard_ms(problem, stage, 1)
    assert solution.iterations == 1
    assert solution.trace.residuals[0] <= 1e-8
    assert solution.formulation == formulation
    assert len(solution.nodal) == problem.fine.n_nodes


def test_cg_multiscale_converges(nonlinear_family):
    problem = _problem(nonlinear_family)
    stage = offline_pipeline(problem, RANGE, SnapshotRule("fixed", l_max=3), 4, "cg")
    solutions = [run_picard_ms(problem, stage, m) for m in (1, 2, 4)]
    for m, solution in zip((1, 2, 4), solutions):
        assert solution.trace.converged
        assert solution.n_coarse == sum(min(m, space.size) for space in stage.offline)
        assert np.all(solution.nodal[problem.fine.boundary] == 0.0)
    assert solutions[0].lam_star is not None

    u_ref, _ = run_picard_fine(problem.fine, problem.model, problem.f)
    coef = problem.model.at_nodal(problem.fine, u_ref)
    errors = [h1k_error(problem.fine, u_ref, s.nodal, coef) for s in solutions]
    assert errors[-1] < errors[0]


def test_dg_multiscale_converges(nonlinear_family):
    problem = _problem(nonlinear_family, penalty=8.0)
    stage = offline_pipeline(problem, RANGE, SnapshotRule("adaptive", l_cap=4), 4, "dg")
    solution = run_picard_ms(problem, stage, 2)
    assert solution.trace.converged
    assert len(solution.fine) == problem.broken.n_dofs
    assert len(solution.lam_stars) == problem.coarse.n_elements
    assert len(solution.online_eigenvalues) == problem.coarse.n_elements


def test_ms_iteration_limit(nonlinear_family):
    problem = _problem(nonlinear_family, f=1.0, delta=1e-14, max_iters=1)
    stage = offline_pipeline(problem, RANGE, SnapshotRule("fixed", l_max=2), 2, "cg")
    with pytest.raises(ConvergenceError):
        run_picard_ms(problem, stage, 1)
    with pytest.raises(InvalidConfigurationError):
        run_picard_ms(problem, stage, 0)
