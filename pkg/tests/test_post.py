from pathlib import Path

import numpy as np
import pytest
from PIL import Image

from couple_dg import assemble_sipg
from errors import DomainError
from picard import IterationRecord, IterationTrace
from post import (
    REPORT_HEADER,
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
    parse_report,
)


@pytest.fixture
def solution(grids, rng):
    fine, _ = grids
    u = np.sin(np.pi * fine.coords[:, 0]) * np.sin(np.pi * fine.coords[:, 1])
    noise = rng.standard_normal(fine.n_nodes)
    noise[fine.boundary] = 0.0
    return u, noise


def test_weighted_l2_error(grids, contrast_coef, solution):
    fine, _ = grids
    u, noise = solution
    assert l2k_error(fine, u, u, contrast_coef) == 0.0
    assert l2k_error(fine, u, np.zeros_like(u), contrast_coef) == pytest.approx(100.0)
    e1 = l2k_error(fine, u, u - 0.01 * noise, contrast_coef)
    e2 = l2k_error(fine, u, u - 0.02 * noise, contrast_coef)
    assert e2 == pytest.approx(2.0 * e1)


def test_energy_error(grids, contrast_coef, solution):
    fine, _ = grids
    u, noise = solution
    assert h1k_error(fine, u, u, contrast_coef) == 0.0
    assert h1k_error(fine, u, np.zeros_like(u), contrast_coef) == pytest.approx(100.0)
    e1 = h1k_error(fine, u, u + 0.01 * noise, contrast_coef)
    assert h1k_error(fine, u, u - 0.03 * noise, contrast_coef) == pytest.approx(3.0 * e1)
    with pytest.raises(DomainError):
        h1k_error(fine, np.zeros_like(u), u, contrast_coef)


def test_dg_errors(grids, broken, contrast_coef, solution):
    fine, _ = grids
    u, noise = solution
    sipg = assemble_sipg(broken, contrast_coef, 4.0)
    assert dg_energy_errors(u, broken.inject(u), sipg, broken) == (0.0, 0.0)

    e_int, e_bnd = dg_energy_errors(u, broken.inject(u + 0.1 * noise), sipg, broken)
    assert e_int > 0.0
    assert e_bnd == pytest.approx(0.0, abs=1e-4)

    jumpy = broken.inject(u).copy()
    jumpy[broken.block_dofs[4]] += 0.05
    _, e_bnd = dg_energy_errors(u, jumpy, sipg, broken)
    assert e_bnd > 0.0


def test_online_offline_errors(grids, contrast_coef, solution):
    fine, _ = grids
    u, _ = solution
    assert online_offline_errors(u, u, "cg", fine=fine, weight=contrast_coef,
                                 coef=contrast_coef) == (0.0, 0.0)


def _report():
    report = StudyReport()
    report.add(StudyRow(dim=1210, lam_star=None, err1=0.0123, err2=1.5, oo_err1=0.0,
                        oo_err2=0.0, iters=4))
    report.add(StudyRow(dim=121, lam_star=2.5e-3, err1=12.345678, err2=40.0, oo_err1=11.9,
                        oo_err2=38.2, iters=5))
    return report


def test_report_file(tmp_path):
    path = emit_report(_report(), tmp_path / "report.csv")
    lines = path.read_text().splitlines()
    assert lines[0] == ",".join(REPORT_HEADER)
    assert lines[1] == "121,2.500000e-03,12.3457,40.0000,11.9000,38.2000,5"
    assert lines[2] == "1210,,0.0123,1.5000,0.0000,0.0000,4"
    assert all(len(line.split(",")) == 7 for line in lines)

    parsed = parse_report(path)
    assert [row.dim for row in parsed.rows] == [121, 1210]
    assert parsed.rows[1].lam_star is None
    assert parsed.rows[0].err1 == pytest.approx(12.3457)


def test_report_matches_golden_file(tmp_path):
    report = StudyReport(metadata={'formulation': "cg"})
    for row in [
        StudyRow(dim=144, lam_star=None, err1=2.71828, err2=11.5, oo_err1=0.0, oo_err2=0.0, iters=4),
        StudyRow(dim=72, lam_star=0.35, err1=12.0, err2=29.99999, oo_err1=5.55556, oo_err2=10.1, iters=5),
        StudyRow(dim=36, lam_star=1.2345671, err1=45.67891, err2=60.123449, oo_err1=40.5,
                 oo_err2=38.25, iters=6),
        StudyRow(dim=108, lam_star=9.876e-3, err1=3.14159, err2=15.0, oo_err1=0.75, oo_err2=2.0,
                 iters=5),
    ]:
        report.add(row)
    path = emit_report(report, tmp_path / "nested" / "report.csv")
    golden = Path(__file__).parent / "data" / "study_report.csv"
    assert path.read_bytes() == golden.read_bytes()

def test_empty_report_rejected(tmp_path):
    with pytest.raises(DomainError):
        emit_report(StudyReport(), tmp_path / "report.csv")


def test_bad_header_rejected(tmp_path):
    path = tmp_path / "report.csv"
    path.write_text("a,b\n1,2\n")
    with pytest.raises(DomainError):
        parse_report(path)


def test_field_image_orientation(tmp_path, grids):
    fine, _ = grids
    path = emit_field_image(fine.coords[:, 1], tmp_path / "u.pgm")
    with Image.open(path) as image:
        pixels = np.asarray(image)
    assert pixels.shape == (fine.nx + 1, fine.nx + 1)
    assert np.all(pixels[0] == 255)
    assert np.all(pixels[-1] == 0)


def test_field_image_constant_and_log(tmp_path):
    with Image.open(emit_field_image(np.full(16, 3.0), tmp_path / "c.pgm")) as image:
        assert np.all(np.asarray(image) == 0)
    values = np.array([1.0, 10.0, 100.0, 1000.0])
    with Image.open(emit_field_image(values, tmp_path / "k.pgm", log_scale=True)) as image:
        pixels = np.asarray(image)
    # bottom row first in the data, top row first in the image
    assert pixels.tolist() == [[170, 255], [0, 85]]
    with pytest.raises(DomainError):
        emit_field_image(np.ones(5), tmp_path / "bad.pgm")


def test_trace_and_eigenvalue_files(tmp_path):
    trace = IterationTrace()
    trace.append(IterationRecord(1, 0.25, 42, 0.0, 0.0, 0.0, 0.0))
    path = emit_trace(trace, tmp_path / "trace.txt")
    assert path.read_text() == "1 2.500000e-01 42\n"

    path = emit_eigenvalues([np.array([0.0, 2.0]), np.array([1.5])], tmp_path / "eig.txt")
    lines = path.read_text().splitlines()
    assert lines[0].split() == ["0", "0.0000000000e+00", "2.0000000000e+00"]
    assert lines[1].split()[0] == "1"
