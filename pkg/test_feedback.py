#!/usr/bin/env python3
"""
Tests for feedback interconnection and the small-gain condition
"""

import sys
from pathlib import Path
import logging

import numpy as np
import pytest

# Add project root to path
project_root = Path(__file__).parent
sys.path.append(str(project_root))

from lsh.exceptions import ConditionsNotMet, DimensionError
from lsh.feedback import closed_loop_stability, compose, small_gain_check, stacked_force
from lsh.forces import bounded_drift, standard_wiener
from lsh.model import LshSystem, realize, static_gain
from lsh.numlin import is_positive_definite
from lsh.robust import UncertaintyClass
from lsh.simulation import simulate
from lsh.stability import is_hurwitz

# Configure logging
logging.basicConfig(
    level=logging.INFO,
    format='%(asctime)s - %(name)s - %(levelname)s - %(message)s'
)
logger = logging.getLogger(__name__)

PLANT = LshSystem(1.0, 1.0, 1.0, 1.0, name="plant")
CONTROLLER = LshSystem(1.0, 1.0, 1.0, 0.5, name="controller")


def random_system(rng, n, m, name):
    G, H, L = (rng.standard_normal((n, n)) for _ in range(3))
    return LshSystem(K=G @ G.T + 0.5 * np.eye(n), M=H @ H.T + 0.5 * np.eye(n),
                     F=L @ L.T + 0.5 * np.eye(n), N=0.5 * rng.standard_normal((m, n)), name=name)


def test_compose_scalar_pair():
    closed = compose(PLANT, CONTROLLER)
    loop = closed.loop
    assert loop.name == "plant*controller"
    assert np.allclose(loop.K, [[1.0, -0.5], [-0.5, 1.0]])
    assert np.allclose(loop.M, np.eye(2))
    assert np.allclose(loop.N, np.diag([1.0, 0.5]))
    assert closed.subsystems == (PLANT, CONTROLLER)

    report = small_gain_check(PLANT, CONTROLLER)
    assert report.norm == pytest.approx(0.5)
    assert report.definite
    assert report.gain_identity == pytest.approx(0.25)
    assert report.sufficient_gain_product == pytest.approx(0.25)
    assert is_hurwitz(realize(loop).A)


def test_small_gain_violated():
    strong = LshSystem(1.0, 1.0, 1.0, 1.5, name="strong")
    report = small_gain_check(PLANT, strong)
    assert report.norm == pytest.approx(1.5)
    assert not report.definite
    assert not is_positive_definite(compose(PLANT, strong).loop.K)


def test_disconnected_controller():
    silent = LshSystem(1.0, 1.0, 1.0, 0.0, name="silent")
    report = small_gain_check(PLANT, silent)
    assert report.norm == 0.0
    assert report.definite
    loop = compose(PLANT, silent).loop
    assert np.allclose(loop.K, np.eye(2))


def test_random_pairs():
    rng = np.random.default_rng(99)
    for trial in range(100):
        n, m = int(rng.integers(1, 4)), int(rng.integers(1, 4))
        s1, s2 = random_system(rng, n, m, "s1"), random_system(rng, n, m, "s2")
        report = small_gain_check(s1, s2)
        loop = compose(s1, s2).loop
        if abs(report.norm - 1.0) > 1e-6:
            assert report.definite == is_positive_definite(loop.K), f"trial {trial}"
        assert report.gain_identity == pytest.approx(report.norm ** 2, rel=1e-8, abs=1e-10)
        if report.definite:
            assert is_hurwitz(realize(loop).A), f"trial {trial}"
        assert np.allclose(loop.K, loop.K.T)
        assert small_gain_check(s2, s1).norm == pytest.approx(report.norm)
        swapped = compose(s2, s1).loop
        swap = np.block([[np.zeros((n, n)), np.eye(n)], [np.eye(n), np.zeros((n, n))]])
        assert np.allclose(swap @ loop.K @ swap.T, swapped.K, atol=1e-12)
        assert np.allclose(np.linalg.eigvalsh(loop.K), np.linalg.eigvalsh(swapped.K), atol=1e-10)

        gains = static_gain(s1), static_gain(s2)
        assert np.max(np.abs(np.linalg.eigvals(gains[0] @ gains[1]))) == pytest.approx(report.gain_identity,
                                                                                        rel=1e-7, abs=1e-10)


def test_closed_loop_stability_report():
    uc = UncertaintyClass(gamma=0.5, Delta=np.zeros((4, 4)))
    report = closed_loop_stability(PLANT, CONTROLLER, uc=uc)
    assert report['certificate_applicable']
    assert report['hurwitz']
    assert report['certificate']['valid']
    assert report['robust']['asymptotic_bound'] > 0
    assert report['failing'] == {}

    undamped = LshSystem(1.0, 1.0, 0.0, 0.5, name="undamped")
    report = closed_loop_stability(PLANT, undamped)
    assert not report['certificate_applicable']
    assert 'F2' in report['failing']
    assert report['message'].startswith("stability certificate inapplicable")

    strong = LshSystem(1.0, 1.0, 1.0, 1.5, name="strong")
    report = closed_loop_stability(PLANT, strong)
    assert not report['certificate_applicable']
    assert 'K' in report['failing']
    assert report['small_gain']['norm'] == pytest.approx(1.5)


def test_indefinite_stiffness():
    soft = LshSystem(-1.0, 1.0, 1.0, 1.0, name="soft")
    with pytest.raises(ConditionsNotMet) as excinfo:
        small_gain_check(soft, CONTROLLER)
    assert 'K1' in excinfo.value.failing

    report = closed_loop_stability(soft, CONTROLLER)
    assert 'K1' in report['failing']


def test_dimension_mismatch():
    wide = LshSystem(np.eye(2), np.eye(2), np.eye(2), np.eye(2), name="wide")
    with pytest.raises(DimensionError):
        compose(PLANT, wide)


def test_stacked_force():
    both = stacked_force(standard_wiener(1), standard_wiener(1), n=1)
    assert both.is_constant and both.is_standard
    assert np.allclose(both.beta0, np.eye(2))
    assert np.allclose(both.alpha0, 0.0)

    mixed = stacked_force(bounded_drift(a=0.5, sigma_max=0.25, feedback=[[1.0, 0.0]]), standard_wiener(1), n=1)
    assert not mixed.is_constant
    assert mixed.kind == 'stacked'
    # loop state (q1, q2, p1, p2): subsystem one sees (q1, p1) = (0.2, 0.0)
    x = np.array([[0.2, 5.0, 0.0, 7.0]])
    assert np.allclose(mixed.drift_at(0.0, x), [[0.1, 0.0]])
    assert np.allclose(mixed.factor_at(0.0, x)[0], np.diag([0.5, 1.0]))

    loop = compose(PLANT, CONTROLLER).loop
    traj = simulate(loop, mixed, np.zeros(4), np.linspace(0.0, 1.0, 101), seed=3, paths=2)
    assert np.all(np.isfinite(traj.states))


def main():
    """Run all tests"""
    logger.info("=" * 60)
    logger.info("RUNNING FEEDBACK TESTS")
    logger.info("=" * 60)
    sys.exit(pytest.main([__file__, '-v']))


if __name__ == "__main__":
    main()
