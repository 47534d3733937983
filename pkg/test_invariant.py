#!/usr/bin/env python3
"""
Tests for the invariant Gaussian measure, its block equations and the virial theorem
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

from lsh.exceptions import ConditionsNotMet
from lsh.invariant import (controllability_bound, covariance_with_errors, gramian_integral, invariant_covariance,
                           sylvester_residuals, virial_check, virial_empirical)
from lsh.model import LshSystem, realize

# Configure logging
logging.basicConfig(
    level=logging.INFO,
    format='%(asctime)s - %(name)s - %(levelname)s - %(message)s'
)
logger = logging.getLogger(__name__)

CANONICAL = LshSystem(1.0, 1.0, 1.0, 1.0, name="canonical")


def random_system(rng, n, m):
    G, H, L = (rng.standard_normal((n, n)) for _ in range(3))
    return LshSystem(K=G @ G.T + 0.5 * np.eye(n), M=H @ H.T + 0.5 * np.eye(n),
                     F=L @ L.T + 0.5 * np.eye(n), N=rng.standard_normal((m, n)))


def test_canonical_measure():
    meas = invariant_covariance(CANONICAL)
    assert np.allclose(meas.Pi, 0.5 * np.eye(2), atol=1e-10)

    report = virial_check(CANONICAL, meas)
    assert report.mean_kinetic == pytest.approx(0.25, abs=1e-10)
    assert report.virial_rhs == pytest.approx(0.25, abs=1e-10)
    assert abs(report.trace_pi12) <= 1e-10


def test_ale_and_block_equations_on_random_systems():
    rng = np.random.default_rng(1234)
    for trial in range(100):
        n, m = int(rng.integers(1, 6)), int(rng.integers(1, 4))
        sys_ = random_system(rng, n, m)
        ss = realize(sys_)
        meas = invariant_covariance(sys_)
        BBt = ss.B @ ss.B.T
        residual = np.linalg.norm(ss.A @ meas.Pi + meas.Pi @ ss.A.T + BBt)
        assert residual <= 1e-10 * (1.0 + np.linalg.norm(BBt)), f"trial {trial}"

        blocks = sylvester_residuals(sys_, meas)
        assert max(blocks) <= 1e-9, f"trial {trial}: {blocks}"

        report = virial_check(sys_, meas)
        assert abs(report.trace_pi12) <= 1e-9 * (1.0 + np.linalg.norm(meas.Pi))
        assert abs(report.defect) <= 1e-9 * (1.0 + report.mean_kinetic)
        assert meas.xi_defect <= 1e-9 * (1.0 + np.linalg.norm(meas.Pi))


def test_measure_against_independent_solvers():
    rng = np.random.default_rng(77)
    sys_ = random_system(rng, 2, 2)
    ss = realize(sys_)
    meas = invariant_covariance(sys_)
    reference = scipy.linalg.solve_continuous_lyapunov(ss.A, -ss.B @ ss.B.T)
    assert np.allclose(meas.Pi, reference, atol=1e-10)

    gramian = gramian_integral(ss.A, ss.B)
    assert np.allclose(gramian, meas.Pi, rtol=1e-5, atol=1e-7)


def test_no_measure_without_damping():
    with pytest.raises(ConditionsNotMet, match="no invariant measure"):
        invariant_covariance(LshSystem(1.0, 1.0, 0.0, 1.0))


def test_controllability_bound():
    rng = np.random.default_rng(31)
    full = random_system(rng, 3, 3)
    bound = controllability_bound(full)
    assert bound.full_rank_coupling
    assert bound.min_eig > 0

    # fewer channels than degrees of freedom: N^T N is singular
    narrow = random_system(rng, 3, 1)
    assert not controllability_bound(narrow).full_rank_coupling
    meas = invariant_covariance(narrow)
    assert not meas.full_rank_coupling
    assert max(sylvester_residuals(narrow, meas)) <= 1e-9


def test_virial_from_samples():
    """Exact draws from N(0, Pi): empirical E T and -E(q^T f)/2 within five standard errors of 0.25"""
    meas = invariant_covariance(CANONICAL)
    rng = np.random.default_rng(2)
    samples = rng.multivariate_normal(np.zeros(2), meas.Pi, size=20000)
    table = virial_empirical(CANONICAL, samples)
    for column in ('kinetic', 'virial'):
        assert abs(table.loc['mean', column] - 0.25) <= 5.0 * table.loc['sem', column]
    assert abs(table.loc['mean', 'difference']) <= 5.0 * table.loc['sem', 'difference']

    cov, sem = covariance_with_errors(samples)
    assert np.all(np.abs(cov - meas.Pi) <= 5.0 * sem)


def main():
    """Run all tests"""
    logger.info("=" * 60)
    logger.info("RUNNING INVARIANT MEASURE TESTS")
    logger.info("=" * 60)
    sys.exit(pytest.main([__file__, '-v']))


if __name__ == "__main__":
    main()
