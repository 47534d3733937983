#!/usr/bin/env python3
"""
Tests for force models, counter-based streams and sampled force increments
"""

import sys
from pathlib import Path
import logging

import numpy as np
import pytest

# Add project root to path
project_root = Path(__file__).parent
sys.path.append(str(project_root))

from lsh.exceptions import DimensionError, GridError, InadmissibleClassError
from lsh.forces import (INITIAL_CHANNEL, PathStreams, affine_uncertain, bounded_drift, bounded_drift_class_params,
                        check_grid, diffusion_matrix, quadratic_variation, sample_increments, standard_wiener)
from lsh.model import LshSystem, normalize_mass
from lsh.robust import gamma_matrix
from lsh.stability import default_eps, eps_bounds

# Configure logging
logging.basicConfig(
    level=logging.INFO,
    format='%(asctime)s - %(name)s - %(levelname)s - %(message)s'
)
logger = logging.getLogger(__name__)


def test_streams_are_keyed_by_path():
    streams = PathStreams(99)
    first = streams.normals(3, (10, 2))
    assert np.array_equal(first, PathStreams(99).normals(3, (10, 2)))
    assert not np.array_equal(first, streams.normals(4, (10, 2)))
    assert not np.array_equal(first, streams.normals(3, (10, 2), channel=INITIAL_CHANNEL))
    assert not np.array_equal(first, PathStreams(100).normals(3, (10, 2)))

    batch = streams.batch([4, 3], (10, 2))
    assert np.array_equal(batch[1], first)


def test_stream_moments():
    draws = PathStreams(5).normals(0, 200000)
    assert abs(draws.mean()) < 5.0 / np.sqrt(draws.size)
    assert abs(draws.var() - 1.0) < 5.0 * np.sqrt(2.0 / draws.size)
    assert np.all(np.isfinite(draws))


def test_standard_wiener_quadratic_variation():
    """Realised sum |dW|^2 over [0, 10] against the predicted T m"""
    model = standard_wiener(2)
    assert model.is_constant and model.is_standard
    grid = np.linspace(0.0, 10.0, 10001)
    path = sample_increments(model, grid, seed=8)
    assert path.increments.shape == (1, 10000, 2)
    realized, predicted = quadratic_variation(path)
    assert predicted[0] == pytest.approx(20.0)
    spread = 1e-3 * np.sqrt(2.0 * 20000)
    assert abs(realized[0] - predicted[0]) < 5.0 * spread


def test_affine_uncertain_models():
    constant = affine_uncertain([0.5], [[2.0]])
    assert constant.is_constant
    grid = np.linspace(0.0, 1.0, 11)
    path = sample_increments(constant, grid, seed=1)
    assert np.allclose(path.increments[0] - path.noise[0], 0.05)
    assert np.allclose(path.sigma_full(), 4.0)

    feedback = affine_uncertain([0.0], [[1.0]], drift_gain=[[1.0, 0.0]])
    assert not feedback.is_constant
    with pytest.raises(ValueError):
        sample_increments(feedback, grid, seed=1)
    states = np.tile([2.0, 0.0], (11, 1))
    path = sample_increments(feedback, grid, state_feed=states, seed=1)
    assert np.allclose(path.alpha_full(), 2.0)

    with pytest.raises(DimensionError):
        affine_uncertain([0.0, 0.0], [[1.0]])


def test_bounded_drift_saturates():
    model = bounded_drift(a=0.5, sigma_max=0.25, feedback=[[3.0, -1.0]])
    rng = np.random.default_rng(0)
    x = 10.0 * rng.standard_normal((100, 2))
    alpha = model.drift_at(0.0, x)
    assert np.all(np.linalg.norm(alpha, axis=1) <= 0.5 + 1e-12)
    assert np.allclose(diffusion_matrix(model, 0.0, x), 0.25)


def test_bounded_drift_class_parameters():
    sys_ = LshSystem(1.0, 1.0, 1.0, 1.0)
    eps = default_eps(eps_bounds(sys_))
    uc = bounded_drift_class_params(sys_, eps, a=0.5, delta=0.1, sigma_max=0.25)
    Ntil = normalize_mass(sys_).Ntil
    expected = np.trace(Ntil @ Ntil.T) * 0.25 + 0.25 * np.sum(gamma_matrix(sys_, eps) ** 2) / 0.1
    assert uc.gamma == pytest.approx(expected)
    assert np.allclose(uc.Delta, 0.1 * np.eye(2))

    with pytest.raises(InadmissibleClassError):
        bounded_drift_class_params(sys_, eps, a=0.5, delta=0.0, sigma_max=0.25)


def test_grid_validation():
    with pytest.raises(GridError):
        check_grid([0.0, 1.0, 1.0])
    with pytest.raises(GridError):
        check_grid([0.0])
    assert check_grid([0.0, 0.5, 2.0]).dtype == float


def main():
    """Run all tests"""
    logger.info("=" * 60)
    logger.info("RUNNING FORCE MODEL TESTS")
    logger.info("=" * 60)
    sys.exit(pytest.main([__file__, '-v']))


if __name__ == "__main__":
    main()
