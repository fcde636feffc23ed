"""
Relative error norms, study reports and the plain-text / image artifacts.
"""

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from errors import DomainError
from fem import assemble_stiffness, element_mean

logger = logging.getLogger(__name__)

REPORT_HEADER = ["dim", "lambda_star", "err1", "err2", "oo_err1", "oo_err2", "iters"]


def _ratio(numerator_sq, denominator_sq, what):
    if not denominator_sq > 0.0:
        raise DomainError(f"reference {what} norm is zero")
    return 100.0 * np.sqrt(max(numerator_sq, 0.0)) / np.sqrt(denominator_sq)


def l2k_error(fine, u, u_ms, weight):
    """
    100 * ||u - u_ms|| / ||u|| in L2 weighted by the per-element `weight`
    (kappa-tilde), using midpoint quadrature.
    """
    weight = np.asarray(weight, dtype=float)
    e_mid = element_mean(np.asarray(u) - np.asarray(u_ms), fine.elements)
    u_mid = element_mean(u, fine.elements)
    area = fine.h ** 2
    return _ratio(area * np.sum(weight * e_mid ** 2), area * np.sum(weight * u_mid ** 2), "weighted L2")


def h1k_error(fine, u, u_ms, coef):
    """100 * |u - u_ms| / |u| in the energy seminorm int coef |grad .|^2"""
    A = assemble_stiffness(fine, coef)
    e = np.asarray(u) - np.asarray(u_ms)
    return _ratio(e @ (A @ e), u @ (A @ u), "energy")


def dg_energy_errors(u_ref, u_ms, sipg, broken=None):
    """
    Interior and jump energy errors of a broken solution.

    A conforming reference (fine nodal vector) is injected into the broken
    space first. E_int compares the element-wise energy; E_bnd compares
    the penalty part against the full reference energy.

    Returns:
        (E_int %, E_bnd %)
    """
    u_ref = np.asarray(u_ref, dtype=float)
    if broken is not None and len(u_ref) == broken.coarse.fine.n_nodes:
        u_ref = broken.inject(u_ref)
    e = u_ref - np.asarray(u_ms)
    ref_volume = sipg.volume_form(u_ref)
    e_int = _ratio(sipg.volume_form(e), ref_volume, "interior energy")
    e_bnd = _ratio(sipg.penalty_form(e), ref_volume + sipg.penalty_form(u_ref), "DG energy")
    return e_int, e_bnd


def online_offline_errors(u_online, u_offline, formulation, fine=None, weight=None, coef=None,
                          sipg=None):
    """Errors of an online solution measured against the full offline solution"""
    if formulation == "cg":
        return l2k_error(fine, u_offline, u_online, weight), h1k_error(fine, u_offline, u_online, coef)
    return dg_energy_errors(u_offline, u_online, sipg)


@dataclass
class StudyRow:
    dim: int
    lam_star: float
    err1: float
    err2: float
    oo_err1: float
    oo_err2: float
    iters: int

    def cells(self):
        lam = "" if self.lam_star is None else f"{self.lam_star:.6e}"
        return [str(self.dim), lam, f"{self.err1:.4f}", f"{self.err2:.4f}",
                f"{self.oo_err1:.4f}", f"{self.oo_err2:.4f}", str(self.iters)]


@dataclass
class StudyReport:
    rows: list = field(default_factory=list)
    metadata: dict = field(default_factory=dict)

    def add(self, row):
        self.rows.append(row)
        self.rows.sort(key=lambda r: r.dim)


def emit_report(report, path):
    """Comma-separated table with the fixed header; lambda_star empty for the full row"""
    if not report.rows:
        raise DomainError("cannot emit an empty report")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(REPORT_HEADER)
        for row in sorted(report.rows, key=lambda r: r.dim):
            writer.writerow(row.cells())
    logger.info("wrote report with %d rows to %s", len(report.rows), path)
    return path


def parse_report(path):
    with open(path, newline="") as handle:
        reader = csv.reader(handle)
        header = next(reader)
        if header != REPORT_HEADER:
            raise DomainError(f"unexpected report header {header}")
        rows = [StudyRow(dim=int(cells[0]),
                         lam_star=float(cells[1]) if cells[1] else None,
                         err1=float(cells[2]), err2=float(cells[3]),
                         oo_err1=float(cells[4]), oo_err2=float(cells[5]),
                         iters=int(cells[6]))
                for cells in reader if cells]
    return StudyReport(rows=rows)


def emit_field_image(values, path, log_scale=False):
    """
    8-bit PGM of per-node or per-element values on the square grid.

    Row 0 of the image is the top of the domain. The minimum maps to 0 and
    the maximum to 255; a constant field gives a uniform black image.
    """
    values = np.asarray(values, dtype=float)
    side = int(round(np.sqrt(values.size)))
    if side * side != values.size:
        raise DomainError(f"{values.size} values do not form a square grid")
    grid = values.reshape(side, side)
    if log_scale:
        grid = np.log10(np.maximum(grid, np.finfo(float).tiny))
    low, high = grid.min(), grid.max()
    if high > low:
        scaled = np.round(255.0 * (grid - low) / (high - low))
    else:
        scaled = np.zeros_like(grid)
    pixels = np.flipud(scaled).astype(np.uint8)

    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(pixels).save(path, format="PPM")
    return path


def emit_trace(trace, path):
    """One line per iteration: index, residual, N_c"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("".join(line + "\n" for line in trace.lines()))
    return path


def emit_eigenvalues(eigenvalues, path):
    """One line per subdomain: subdomain index followed by its eigenvalues"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as handle:
        for index, values in enumerate(eigenvalues):
            handle.write(" ".join([str(index)] + [f"{value:.10e}" for value in values]) + "\n")
    return path
