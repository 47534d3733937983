#!/usr/bin/env python3
"""
Tests for the dense symmetric linear algebra kernel
"""

import sys
from pathlib import Path
import logging

import numpy as np
import pytest
import scipy.linalg

# Add project root to path
project_root = Path(__file__).parent
sys.path.append(str(project_root))

from lsh.exceptions import DimensionError, NoUniqueSolutionError, NotPositiveDefiniteError
from lsh.numlin import (as_matrix, as_symmetric, is_positive_definite, min_gen_eig, psd_factor,
                        solve_lyapunov, solve_sylvester, spd_sqrt, sym_eig)

# Configure logging
logging.basicConfig(
    level=logging.INFO,
    format='%(asctime)s - %(name)s - %(levelname)s - %(message)s'
)
logger = logging.getLogger(__name__)


def random_spd(rng, n, floor=0.5):
    G = rng.standard_normal((n, n))
    return G @ G.T + floor * np.eye(n)


def test_sym_eig_reconstructs():
    """Eigenvalues come out ascending and V diag(w) V^T gives the matrix back"""
    rng = np.random.default_rng(11)
    for n in range(1, 7):
        G = rng.standard_normal((n, n))
        S = G + G.T
        spectrum = sym_eig(S)
        assert np.all(np.diff(spectrum.eigenvalues) >= 0)
        assert np.allclose(spectrum.reconstruct(), S, atol=1e-12)
        assert np.allclose(spectrum.eigenvectors.T @ spectrum.eigenvectors, np.eye(n), atol=1e-12)
        assert np.sum(spectrum.eigenvalues) == pytest.approx(np.trace(S), rel=1e-10, abs=1e-12)


def test_positive_definite_tolerance():
    assert is_positive_definite(np.eye(3))
    assert not is_positive_definite(np.diag([1.0, 1e-14]))
    assert not is_positive_definite(np.array([[1.0, 2.0], [2.0, 1.0]]))
    assert is_positive_definite(np.diag([1.0, 1e-6]), tol=1e-8)
    with pytest.raises(ValueError):
        is_positive_definite(np.eye(2), tol=-1.0)


def test_spd_sqrt():
    rng = np.random.default_rng(5)
    S = random_spd(rng, 4)
    root, inv_root = spd_sqrt(S)
    assert np.allclose(root @ root, S, atol=1e-10)
    assert np.allclose(root @ inv_root, np.eye(4), atol=1e-10)
    assert np.allclose(root, root.T)

    with pytest.raises(NotPositiveDefiniteError):
        spd_sqrt(np.diag([1.0, -1.0]))


def test_psd_factor_of_singular_matrix():
    v = np.array([[1.0], [2.0], [-1.0]])
    S = v @ v.T
    L = psd_factor(S)
    assert np.allclose(L @ L.T, S, atol=1e-12)


def test_lyapunov_matches_scipy():
    rng = np.random.default_rng(3)
    for n in (1, 2, 4, 6):
        # shift the spectrum into the left half plane
        A = rng.standard_normal((n, n))
        A -= (np.max(np.linalg.eigvals(A).real) + 1.0) * np.eye(n)
        V = random_spd(rng, n)
        X = solve_lyapunov(A, V)
        reference = scipy.linalg.solve_continuous_lyapunov(A, -V)
        assert np.allclose(X, reference, atol=1e-9)
        assert np.linalg.norm(A @ X + X @ A.T + V) <= 1e-10 * (1.0 + np.linalg.norm(V))


def test_lyapunov_singular_for_undamped_oscillator():
    A = np.array([[0.0, 1.0], [-1.0, 0.0]])
    with pytest.raises(NoUniqueSolutionError):
        solve_lyapunov(A, np.eye(2))


def test_sylvester_rectangular():
    rng = np.random.default_rng(8)
    A = -np.diag([1.0, 2.0, 3.0])
    B = -np.diag([0.5, 4.0])
    C = rng.standard_normal((3, 2))
    X = solve_sylvester(A, B, C)
    assert np.allclose(A @ X + X @ B + C, 0.0, atol=1e-12)

    with pytest.raises(DimensionError):
        solve_sylvester(A, B, rng.standard_normal((2, 3)))


def test_min_gen_eig():
    assert min_gen_eig(np.diag([2.0, 3.0]), np.diag([1.0, 2.0])) == pytest.approx(1.5, abs=1e-14)

    rng = np.random.default_rng(21)
    S, Q = random_spd(rng, 3), random_spd(rng, 3)
    expected = np.min(np.linalg.eigvals(S @ np.linalg.inv(Q)).real)
    assert min_gen_eig(S, Q) == pytest.approx(expected, rel=1e-10)

    with pytest.raises(NotPositiveDefiniteError):
        min_gen_eig(np.eye(2), np.diag([1.0, -1.0]))


def test_min_gen_eig_congruence_invariant():
    """lambda_min of the pencil is unchanged by S, Q -> T^T S T, T^T Q T"""
    rng = np.random.default_rng(22)
    for _ in range(200):
        G = rng.standard_normal((4, 4))
        S, Q = G + G.T, random_spd(rng, 4)
        T = rng.standard_normal((4, 4)) + 3.0 * np.eye(4)
        assert min_gen_eig(T.T @ S @ T, T.T @ Q @ T) == pytest.approx(min_gen_eig(S, Q), rel=1e-9, abs=1e-9)


def test_input_coercion():
    assert as_matrix(2.0).shape == (1, 1)
    assert as_matrix([1.0, 2.0]).shape == (1, 2)
    assert np.array_equal(as_symmetric([[1.0, 2.0], [0.0, 1.0]]), [[1.0, 1.0], [1.0, 1.0]])
    with pytest.raises(DimensionError):
        as_symmetric([[1.0, 2.0, 3.0]])
    with pytest.raises(ValueError):
        as_matrix([[np.nan]])


def main():
    """Run all tests"""
    logger.info("=" * 60)
    logger.info("RUNNING LINEAR ALGEBRA TESTS")
    logger.info("=" * 60)
    sys.exit(pytest.main([__file__, '-v']))


if __name__ == "__main__":
    main()
