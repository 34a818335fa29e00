import numpy as np
import pytest

from mixedfem.oracles import polar_factors, procrustes_objective
from mixedfem.rotation import axis_angle, polar_rotation, random_rotations


def test_identity():
    assert np.allclose(polar_rotation(np.eye(3)), np.eye(3))


def test_known_factors(rng):
    R0 = random_rotations(1, rng)[0]
    assert np.allclose(polar_rotation(R0 @ np.diag([3.0, 2.0, 1.0])), R0, atol=1e-12)


def test_matches_scipy_polar_for_positive_det(rng):
    M = rng.normal(size=(3, 3))
    if np.linalg.det(M) < 0:
        M[:, 0] *= -1
    assert np.allclose(polar_rotation(M), polar_factors(M)[0], atol=1e-12)


@pytest.mark.parametrize("negative", [False, True])
def test_maximality(negative, rng):
    samples = random_rotations(10_000, rng)
    for _ in range(20):
        M = rng.normal(size=(3, 3))
        if (np.linalg.det(M) > 0) == negative:
            M[:, 0] *= -1
        R = polar_rotation(M)
        assert np.linalg.det(R) == pytest.approx(1.0)
        assert procrustes_objective(R, M) >= np.max(np.einsum("kij,ij->k", samples, M)) - 1e-9


def test_rank_deficient_input():
    M = np.outer([1.0, 0, 0], [0, 1.0, 0])
    R = polar_rotation(M)
    assert np.allclose(R @ R.T, np.eye(3)) and np.linalg.det(R) == pytest.approx(1.0)
    assert procrustes_objective(R, M) == pytest.approx(1.0)


def test_equivariance(rng):
    M = rng.normal(size=(20, 3, 3))
    R0 = random_rotations(20, rng)
    assert np.allclose(polar_rotation(R0 @ M), R0 @ polar_rotation(M), atol=1e-10)


def test_random_rotations_proper(rng):
    R = random_rotations(100, rng)
    assert np.allclose(R @ np.swapaxes(R, 1, 2), np.eye(3), atol=1e-12)
    assert np.allclose(np.linalg.det(R), 1.0)


def test_axis_angle_quarter_turn():
    assert np.allclose(axis_angle([0, 0, 1], np.pi / 2) @ [1, 0, 0], [0, 1, 0])
