"""
Orchestration of one configured run: field generation, the fine reference
solve, single multiscale solves and M_on enrichment studies.
"""

import json
import logging
from pathlib import Path

from tqdm import tqdm

from coeff import derive_kappa_max, field_family, save_field_matrix
from couple_dg import assemble_sipg
from errors import GmsfemError
from grid import build_broken_space, build_grids
from picard import MultiscaleProblem, offline_pipeline, run_picard_fine, run_picard_ms
from post import (
    StudyReport,
    StudyRow,
    dg_energy_errors,
    emit_eigenvalues,
    emit_field_image,
    emit_report,
    emit_trace,
    h1k_error,
    l2k_error,
    online_offline_errors,
)
from run_config import config_hash, emit_config
from spaces import build_pou, estimate_solution_range, kappa_tilde, sample_range

logger = logging.getLogger(__name__)

FAILED_MARKER = "FAILED"


class MultiscaleStudy:
    """Runs the commands of one RunConfig and writes their artifacts"""

    def __init__(self, config, show_progress=False):
        self.config = config
        self.output_dir = Path(config.output_dir)
        self.show_progress = show_progress
        self.fine = None
        self.coarse = None
        self.broken = None
        self.family = None
        self.problem = None
        self._reference = None
        self._range_grid = None
        self._offline = None
        self._error_context = None

    def initialize(self):
        """Build grids and the field; cheap compared to any solve"""
        config = self.config
        self.fine, self.coarse = build_grids(config.nx, config.m)
        self.broken = build_broken_space(self.coarse)

        kappa_max = config.kappa_max
        if kappa_max is None:
            if config.field == "constant":
                kappa_max = 0.0
            else:
                kappa_max = derive_kappa_max(self.fine, config.target_contrast, config.f_high)
        mu_p = config.online_mu_p if config.mu_p_samples is not None else None
        self.family = field_family(config.field, config.nx, kappa_max, config.seed,
                                   config.fill_fraction, mu_p)
        self.problem = MultiscaleProblem(
            fine=self.fine, coarse=self.coarse, broken=self.broken, family=self.family,
            f=config.f, delta=config.delta, max_iters=config.max_iters, penalty=config.penalty,
            fine_penalty=config.fine_penalty,
            weight_rule=config.weight_rule, workers=config.workers, show_progress=self.show_progress,
        )
        logger.info("initialized %s field on %dx%d grid, m=%d, kappa_max=%.4f",
                    config.field, config.nx, config.nx, config.m, kappa_max)

    # -- cached stages ----------------------------------------------------

    def reference_solution(self):
        if self._reference is None:
            self._reference = run_picard_fine(self.fine, self.problem.model, self.config.f,
                                              self.config.delta, self.config.max_iters)
        return self._reference

    def range_grid(self):
        if self._range_grid is None:
            config = self.config
            u_range = estimate_solution_range(self.fine, self.family, config.f_low, config.f_high,
                                              config.delta, config.max_iters)
            self._range_grid = sample_range(u_range, config.n_s, config.mu_p_samples)
        return self._range_grid

    def offline_stage(self):
        if self._offline is None:
            config = self.config
            self._offline = offline_pipeline(self.problem, self.range_grid(), config.rule(),
                                             config.m_off, config.formulation, config.dedup_tol)
        return self._offline

    def error_context(self):
        """Coefficient, kappa-tilde and SIPG operator at the fine reference solution"""
        if self._error_context is None:
            u_ref, _ = self.reference_solution()
            coef = self.problem.model.at_nodal(self.fine, u_ref)
            context = {'coef': coef}
            if self.config.formulation == "cg":
                context['weight'] = kappa_tilde(coef, build_pou(self.coarse, coef, workers=self.config.workers))
            else:
                context['sipg'] = assemble_sipg(self.broken, coef, self.config.penalty,
                                                self.config.fine_penalty)
            self._error_context = context
        return self._error_context

    def errors(self, solution, u_ref):
        """(err1, err2) of `solution` against the fine reference solution"""
        context = self.error_context()
        if self.config.formulation == "cg":
            return (l2k_error(self.fine, u_ref, solution.nodal, context['weight']),
                    h1k_error(self.fine, u_ref, solution.nodal, context['coef']))
        return dg_energy_errors(u_ref, solution.fine, context['sipg'], self.broken)

    def online_offline(self, solution, full):
        """(oo_err1, oo_err2) of `solution` against the full offline-space solution"""
        if solution is full:
            return 0.0, 0.0
        context = self.error_context()
        return online_offline_errors(solution.fine, full.fine, self.config.formulation, fine=self.fine,
                                     weight=context.get('weight'), coef=context['coef'],
                                     sipg=context.get('sipg'))

    # -- commands ---------------------------------------------------------

    def _prepare_output(self):
        self.output_dir.mkdir(parents=True, exist_ok=True)
        marker = self.output_dir / FAILED_MARKER
        if marker.exists():
            marker.unlink()
        emit_config(self.config, self.output_dir / "config.json")

    def genfield(self):
        field = self.family.base
        artifacts = [save_field_matrix(field, self.output_dir / "field.txt"),
                     emit_field_image(field.flat, self.output_dir / "field.pgm", log_scale=True)]
        if self.family.parameterized:
            for name, component in (("k1", self.family.k1), ("k2", self.family.k2)):
                artifacts.append(save_field_matrix(component, self.output_dir / f"field_{name}.txt"))
        return {'success': True, 'error': None, 'artifacts': [str(path) for path in artifacts]}

    def solvefine(self):
        u, trace = self.reference_solution()
        artifacts = [emit_field_image(u, self.output_dir / "fine_solution.pgm"),
                     emit_trace(trace, self.output_dir / "fine_trace.txt")]
        return {'success': True, 'error': None, 'iterations': trace.iterations,
                'artifacts': [str(path) for path in artifacts]}

    def _run(self, m_on):
        return run_picard_ms(self.problem, self.offline_stage(), m_on)

    def _row(self, solution, full, u_ref):
        err1, err2 = self.errors(solution, u_ref)
        oo1, oo2 = self.online_offline(solution, full)
        return StudyRow(dim=solution.n_coarse, lam_star=solution.lam_star, err1=err1, err2=err2,
                        oo_err1=oo1, oo_err2=oo2, iters=solution.iterations)

    def _write_solution(self, solution, m_on):
        emit_trace(solution.trace, self.output_dir / f"trace_m{m_on}.txt")
        emit_eigenvalues(solution.online_eigenvalues, self.output_dir / f"eigenvalues_m{m_on}.txt")

    def _report(self, solutions, full):
        u_ref, _ = self.reference_solution()
        report = StudyReport(metadata={
            'field': self.family.base.generator,
            'formulation': self.config.formulation,
            'config_hash': config_hash(self.config),
        })
        for solution in solutions:
            report.add(self._row(solution, full, u_ref))
        emit_report(report, self.output_dir / "report.csv")
        (self.output_dir / "metadata.json").write_text(json.dumps(report.metadata, sort_keys=True, indent=2) + "\n")
        return report

    def solve(self):
        """One multiscale solve at the largest configured M_on (plus the full space for reference)"""
        m_on = max(self.config.m_on)
        full = self._run(self.config.m_off)
        solution = full if m_on == self.config.m_off else self._run(m_on)
        self._write_solution(solution, m_on)
        emit_field_image(solution.nodal, self.output_dir / f"ms_solution_m{m_on}.pgm")
        report = StudyReport()
        u_ref, _ = self.reference_solution()
        report.add(self._row(solution, full, u_ref))
        emit_report(report, self.output_dir / "report.csv")
        return {'success': True, 'error': None, 'report': report,
                'iterations': solution.iterations}

    def study(self):
        """Sweep M_on over the shared offline stage; the M_off run is the full-space row"""
        config = self.config
        sweep = sorted(set(config.m_on) - {config.m_off})
        full = self._run(config.m_off)
        self._write_solution(full, config.m_off)

        solutions = []
        for m_on in tqdm(sweep, desc="M_on sweep", disable=not self.show_progress):
            solution = self._run(m_on)
            self._write_solution(solution, m_on)
            solutions.append(solution)
            logger.info("M_on=%d done: N_c=%d, %d iterations", m_on, solution.n_coarse, solution.iterations)
        solutions.append(full)

        u_ref, _ = self.reference_solution()
        emit_field_image(self.family.base.flat, self.output_dir / "field.pgm", log_scale=True)
        emit_field_image(u_ref, self.output_dir / "fine_solution.pgm")
        emit_field_image(solutions[0].nodal, self.output_dir / f"ms_solution_m{min(config.m_on)}.pgm")
        emit_field_image(full.nodal, self.output_dir / f"ms_solution_m{config.m_off}.pgm")

        report = self._report(solutions, full)
        return {'success': True, 'error': None, 'report': report,
                'iterations': [row.iters for row in report.rows]}

    def _mark_failed(self, command, error):
        try:
            self.output_dir.mkdir(parents=True, exist_ok=True)
            (self.output_dir / FAILED_MARKER).write_text(f"{command}: {type(error).__name__}: {error}\n")
        except OSError as e:
            logger.error("could not write %s marker in %s: %s", FAILED_MARKER, self.output_dir, e)

    COMMANDS = ("genfield", "solvefine", "solve", "study")

    def run_command(self, command):
        """
        Run one command and return a result dict. Library and file system
        errors are caught here; the output directory then holds a FAILED
        marker when it can be written.
        """
        if command not in self.COMMANDS:
            return {'success': False, 'error': f"unknown command '{command}'"}
        try:
            self._prepare_output()
            if self.problem is None:
                self.initialize()
            return getattr(self, command)()
        except (GmsfemError, OSError) as e:
            logger.error("%s failed: %s", command, e)
            self._mark_failed(command, e)
            return {'success': False, 'error': f"{type(e).__name__}: {e}"}
