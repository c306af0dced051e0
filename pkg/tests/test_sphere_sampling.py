import math

import numpy as np
import pytest
from scipy.spatial import SphericalVoronoi
from scipy.stats import kstest

from conicvp.geometry import angular_distance, pairwise_angles
from conicvp.sphere_sampling import (SphericalCap, covering_angle, fibonacci_cap_angles,
                                     fibonacci_cap_sample, label_candidates, orthonormal_basis,
                                     sample_cap_uniform, sample_hemisphere_uniform,
                                     sample_training_candidates)

# Exact covering radius of the N=64 hemisphere lattice, from the spherical Voronoi
# diagram of the lattice and its antipodes (see voronoi_covering below).
COVERING_N64_HEMISPHERE = 0.2577830498161176


def voronoi_covering(samples):
    """Covering radius of a hemisphere lattice: the farthest point of the
    sphere from ``samples ∪ -samples`` is a Voronoi vertex."""
    pts = np.concatenate([samples, -samples])
    sv = SphericalVoronoi(pts)
    best = 0.0
    for region, v in zip(sv.regions, pts):
        ang = np.arccos(np.clip(sv.vertices[region] @ v, -1, 1))
        best = max(best, ang.max())
    return best


def test_cap_validation():
    with pytest.raises(ValueError):
        SphericalCap(np.array([0, 0, 1.0]), 0.0)
    with pytest.raises(ValueError):
        SphericalCap(np.array([0, 0, 1.0]), 1.6)
    assert SphericalCap(np.array([0, 0, 1.0]), math.pi / 2).area == pytest.approx(2 * math.pi)


@pytest.mark.parametrize("n", [[0, 0, 1.0], [1.0, 0, 0], [0.3, -0.5, 0.8], [0, 1.0, 1e-9]])
def test_orthonormal_basis(n):
    a, b = orthonormal_basis(n)
    n = np.asarray(n) / np.linalg.norm(n)
    m = np.stack([a, b, n])
    assert np.allclose(m @ m.T, np.eye(3), atol=1e-12)
    assert np.linalg.det(m) == pytest.approx(1.0)


def test_fibonacci_angles_formula():
    phi, theta = fibonacci_cap_angles(8, math.pi / 3)
    n = np.arange(8)
    assert np.allclose(np.cos(phi), 1 - 0.5 * n / 8)
    assert np.allclose(theta, (1 + math.sqrt(5)) * math.pi * n)
    with pytest.raises(ValueError):
        fibonacci_cap_angles(0, 1.0)


@pytest.mark.parametrize("center", [[0, 0, 1.0], [0.6, 0, 0.8], [1.0, 0, 0], [0.2, 0.9, 0.1]])
@pytest.mark.parametrize("gamma", [math.pi / 2, 0.3, 1e-3])
def test_lattice_center_and_containment(center, gamma):
    cap = SphericalCap(np.array(center), gamma)
    pts = fibonacci_cap_sample(cap, 64)
    assert np.array_equal(pts[0], cap.center)
    assert (pairwise_angles(pts, cap.center[None])[:, 0] <= gamma + 1e-12).all()
    assert (pts[:, 2] >= 0).all()
    assert np.allclose(np.linalg.norm(pts, axis=1), 1)


def test_lattice_is_area_uniform():
    cap = SphericalCap(np.array([0, 0, 1.0]), 1.0)
    pts = fibonacci_cap_sample(cap, 4000)
    u = (1 - pts[:, 2]) / (1 - math.cos(1.0))
    assert kstest(u, "uniform").statistic < 2e-3


@pytest.mark.parametrize("gamma", [math.pi / 2, 0.4, 0.02])
def test_uniform_cap_draws_ks(gamma):
    rng = np.random.default_rng(7)
    c = np.array([0.5, -0.3, 0.8])
    c /= np.linalg.norm(c)
    pts = sample_cap_uniform(c, 0.0, gamma, 100_000, rng)
    ang = angular_distance(pts, c)
    u = (1 - np.cos(ang)) / (1 - math.cos(gamma))
    assert (ang <= gamma + 1e-9).all()
    assert kstest(u, "uniform").statistic < 0.01
    # azimuth around the center is uniform too
    a, b = orthonormal_basis(c)
    signed = pts * np.sign(pts @ c)[:, None]
    az = (np.arctan2(signed @ b, signed @ a) + math.pi) / (2 * math.pi)
    assert kstest(az, "uniform").statistic < 0.01


def test_annulus_draws():
    rng = np.random.default_rng(3)
    c = np.array([0, 0, 1.0])
    ang = angular_distance(sample_cap_uniform(c, 0.1, 0.2, 5000, rng), c)
    assert ang.min() > 0.1 - 1e-12 and ang.max() < 0.2 + 1e-12
    assert sample_cap_uniform(c, 0, 1, 0, rng).shape == (0, 3)


def test_hemisphere_draws_canonical():
    pts = sample_hemisphere_uniform(10_000, np.random.default_rng(0))
    assert (pts[:, 2] >= 0).all()
    assert kstest(pts[:, 2], "uniform").statistic < 0.02


def test_voronoi_oracle_agrees_with_dense_grid():
    # independent check of the oracle itself: dense random points, N=16
    pts = fibonacci_cap_sample(SphericalCap(np.array([0, 0, 1.0]), math.pi / 2), 16)
    exact = voronoi_covering(pts)
    probe = sample_hemisphere_uniform(400_000, np.random.default_rng(1))
    dense = np.arccos(np.abs(probe @ pts.T).max(axis=1)).max()
    assert dense <= exact + 1e-12
    assert exact - dense < 5e-3


def test_frozen_covering_constant_matches_oracle():
    pts = fibonacci_cap_sample(SphericalCap(np.array([0, 0, 1.0]), math.pi / 2), 64)
    assert voronoi_covering(pts) == pytest.approx(COVERING_N64_HEMISPHERE, abs=1e-12)


@pytest.mark.parametrize("N", [16, 32, 64])
def test_covering_angle_matches_voronoi(N):
    cap = SphericalCap(np.array([0, 0, 1.0]), math.pi / 2)
    pts = fibonacci_cap_sample(cap, N)
    assert covering_angle(pts, cap) == pytest.approx(voronoi_covering(pts), abs=1e-3)


def test_covering_angle_single_sample_at_center():
    cap = SphericalCap(np.array([0.3, 0.4, 0.866]), 0.2)
    assert covering_angle(cap.center[None], cap, M=64) == pytest.approx(0.2, abs=1e-4)


def test_covering_shrinks_with_more_samples():
    cap = SphericalCap(np.array([0, 0, 1.0]), 0.5)
    vals = [covering_angle(fibonacci_cap_sample(cap, n), cap, M=64) for n in (8, 32, 128)]
    assert vals[0] > vals[1] > vals[2]
    # roughly proportional to the cap radius for a fixed count
    small = SphericalCap(np.array([0, 0, 1.0]), 0.05)
    ratio = covering_angle(fibonacci_cap_sample(small, 32), small, M=64) / vals[1]
    assert ratio == pytest.approx(0.1, rel=0.05)


def test_label_candidates():
    gts = [np.array([0, 0, 1.0])]
    d = np.array([[0, math.sin(0.05), math.cos(0.05)], [0, math.sin(0.5), math.cos(0.5)]])
    lab = label_candidates(d, gts, [0.1, 0.01])
    assert lab.tolist() == [[True, False], [False, False]]
    assert label_candidates(d, [], [0.1]).tolist() == [[False], [False]]


def test_training_candidates_layout():
    rng = np.random.default_rng(0)
    gts = [np.array([0, 0, 1.0]), np.array([1.0, 0, 0])]
    th = [0.3, 0.08, 0.02]
    cands = sample_training_candidates(gts, 0.08, 2, 1, 3, rng, th)
    assert len(cands) == 2 * 3 + 3
    for c in cands[:2]:
        assert c.labels[1]
    assert not cands[2].labels[1]
    assert cands[2].labels[0]
    with pytest.raises(ValueError):
        sample_training_candidates(gts, 1.0, 1, 1, 1, rng, th)
    with pytest.raises(ValueError):
        sample_training_candidates(gts, 0.1, -1, 1, 1, rng, th)


def test_training_candidates_deterministic():
    a = sample_training_candidates([np.array([0, 0, 1.0])], 0.1, 1, 1, 3, 5, [0.1])
    b = sample_training_candidates([np.array([0, 0, 1.0])], 0.1, 1, 1, 3, 5, [0.1])
    assert all(np.array_equal(x.direction, y.direction) for x, y in zip(a, b))
