import numpy as np
import pytest

from eig import fix_signs, sym_gen_eig
from errors import DomainError, FactorizationError
from fem import assemble_stiffness, assemble_weighted_mass
from grid import build_grids


def _random_pencil(rng, n):
    X = rng.standard_normal((n, n))
    Y = rng.standard_normal((n, n))
    A = X + X.T
    S = Y @ Y.T + n * np.eye(n)
    return A, S


def test_diagonal_pencil():
    pairs = sym_gen_eig(np.diag([1.0, 2.0]), np.eye(2))
    assert np.allclose(pairs.values, [1.0, 2.0])
    assert np.allclose(pairs.vectors, np.eye(2))


def test_random_pencils(rng):
    for _ in range(200):
        n = int(rng.integers(1, 101))
        A, S = _random_pencil(rng, n)
        pairs = sym_gen_eig(A, S)
        V, lam = pairs.vectors, pairs.values
        assert np.all(np.diff(lam) >= 0.0)
        scale = np.abs(A).max() + np.abs(lam).max() * np.abs(S).max()
        assert np.abs(A @ V - S @ V * lam).max() <= 1e-8 * scale
        assert np.allclose(V.T @ S @ V, np.eye(n), atol=1e-8)


def test_trace_identity(rng):
    A, S = _random_pencil(rng, 30)
    pairs = sym_gen_eig(A, S)
    assert pairs.values.sum() == pytest.approx(np.trace(np.linalg.solve(S, A)), rel=1e-8, abs=1e-8)


def test_subset_is_prefix(rng):
    A, S = _random_pencil(rng, 25)
    full = sym_gen_eig(A, S)
    head = sym_gen_eig(A, S, count=4)
    assert len(head) == 4
    assert np.allclose(head.values, full.values[:4])
    assert np.allclose(head.vectors, full.vectors[:, :4], atol=1e-8)


def test_neumann_pencil_constant_mode(rng):
    fine, coarse = build_grids(12, 3)
    sub = coarse.neighborhood_subdomain(5)
    coef = np.exp(rng.uniform(0.0, 4.0, fine.n_elements))
    A = assemble_stiffness(fine, coef, sub)
    S = assemble_weighted_mass(fine, coef, sub)
    pairs = sym_gen_eig(A, S, count=3)
    assert abs(pairs.values[0]) < 1e-10
    first = pairs.vectors[:, 0]
    assert np.all(first > 0.0)
    assert np.ptp(first) < 1e-8 * first.mean()
    assert pairs.values[1] > 1e-3


def test_asymmetric_input_rejected():
    A = np.array([[1.0, 2.0], [0.0, 1.0]])
    with pytest.raises(DomainError):
        sym_gen_eig(A, np.eye(2))


def test_indefinite_mass_rejected():
    with pytest.raises(FactorizationError):
        sym_gen_eig(np.eye(2), np.diag([1.0, -1.0]))


def test_bad_count_rejected():
    with pytest.raises(DomainError):
        sym_gen_eig(np.eye(3), np.eye(3), count=0)


def test_fix_signs():
    vectors = np.array([[0.0, -1.0], [-2.0, 3.0]])
    fixed = fix_signs(vectors)
    assert np.array_equal(fixed, [[0.0, 1.0], [2.0, -3.0]])
