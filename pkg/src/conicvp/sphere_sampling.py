"""Point sets on spherical caps.

Deterministic Fibonacci lattices drive the coarse-to-fine search; seeded
area-uniform draws produce positive/negative training candidates.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .geometry import angular_distance, canonicalize, pairwise_angles

GOLDEN_TURN = (1.0 + math.sqrt(5.0)) * math.pi


@dataclass(frozen=True)
class SphericalCap:
    center: np.ndarray
    polar_angle: float

    def __post_init__(self):
        if not 0.0 < self.polar_angle <= math.pi / 2 + 1e-12:
            raise ValueError(f"polar angle must lie in (0, pi/2], got {self.polar_angle}")
        object.__setattr__(self, "center", canonicalize(self.center))

    @property
    def area(self) -> float:
        return 2.0 * math.pi * (1.0 - math.cos(self.polar_angle))


@dataclass
class CandidateLabel:
    """A training candidate and its binary label for every threshold."""

    direction: np.ndarray
    labels: np.ndarray = field(repr=False)


def orthonormal_basis(n) -> tuple[np.ndarray, np.ndarray]:
    """Two unit vectors completing ``n`` to a right-handed orthonormal frame."""
    n = np.asarray(n, dtype=np.float64)
    n = n / np.linalg.norm(n)
    # cross with the axis least aligned with n to stay well conditioned
    e = np.zeros(3)
    e[np.argmin(np.abs(n))] = 1.0
    a = np.cross(n, e)
    a /= np.linalg.norm(a)
    b = np.cross(n, a)
    return a, b / np.linalg.norm(b)


def fibonacci_cap_angles(N: int, polar_angle: float) -> tuple[np.ndarray, np.ndarray]:
    """Polar and azimuthal angles ``(phi_n, theta_n)`` of the cap lattice, n = 0..N-1."""
    if N < 1:
        raise ValueError("N must be >= 1")
    n = np.arange(N, dtype=np.float64)
    phi = np.arccos(1.0 - (1.0 - math.cos(polar_angle)) * n / N)
    theta = GOLDEN_TURN * n
    return phi, theta


def _cap_points(center, polar_angle, N) -> np.ndarray:
    a, b = orthonormal_basis(center)
    phi, theta = fibonacci_cap_angles(N, polar_angle)
    c = np.asarray(center, dtype=np.float64)
    s = np.sin(phi)[:, None]
    return (np.cos(phi)[:, None] * c
            + s * (np.cos(theta)[:, None] * a + np.sin(theta)[:, None] * b))


def fibonacci_cap_sample(cap: SphericalCap, N: int) -> np.ndarray:
    """``N`` canonical directions on ``cap``; sample 0 is the cap center."""
    pts = _cap_points(cap.center, cap.polar_angle, N)
    pts[0] = cap.center
    return canonicalize(pts)


def _nearest_angle(points: np.ndarray, samples: np.ndarray, chunk: int = 16384) -> np.ndarray:
    out = np.empty(len(points))
    for i in range(0, len(points), chunk):
        dots = np.abs(points[i:i + chunk] @ samples.T).max(axis=1)
        out[i:i + chunk] = np.arccos(np.clip(dots, 0.0, 1.0))
    return out


def _suppress(points: np.ndarray, scores: np.ndarray, radius: float, limit: int) -> np.ndarray:
    """Greedy non-maximum suppression; returns kept points, best first."""
    order = np.argsort(-scores, kind="stable")[:16 * limit]
    kept = []
    for i in order:
        p = points[i]
        if kept and np.min(pairwise_angles(p, np.array(kept))) < radius:
            continue
        kept.append(p)
        if len(kept) >= limit:
            break
    return np.array(kept)


def covering_angle(samples, cap: SphericalCap, M: int = 256, refine: int = 7) -> float:
    """Largest distance from any point of ``cap`` to its nearest sample.

    Brute force over a Fibonacci grid of ``M * len(samples)`` cap points,
    followed by ``refine`` rounds of local grids around the best grid points.
    The nearest-sample distance is 1-Lipschitz, so every round only has to
    look within two grid spacings of points that score within one spacing of
    the running maximum.
    """
    samples = np.atleast_2d(np.asarray(samples, dtype=np.float64))
    if len(samples) == 0:
        raise ValueError("need at least one sample")
    npts = M * len(samples)
    grid = _cap_points(cap.center, cap.polar_angle, npts)
    score = _nearest_angle(grid, samples)
    best = float(score.max())
    # conservative covering radius of the grid itself
    spacing = 1.2 * math.sqrt(cap.area / npts)
    cos_lim = math.cos(cap.polar_angle) - 1e-12
    k = 8
    for _ in range(refine):
        band = score >= best - spacing
        seeds = _suppress(grid[band], score[band], spacing, limit=1024)
        step = 2.0 * spacing / k
        offs = np.arange(-k, k + 1) * step
        local = []
        for s in seeds:
            a, b = orthonormal_basis(s)
            pts = s + offs[:, None, None] * a + offs[None, :, None] * b
            local.append(pts.reshape(-1, 3))
        grid = np.concatenate(local)
        grid /= np.linalg.norm(grid, axis=1, keepdims=True)
        grid = grid[grid @ cap.center >= cos_lim]
        score = _nearest_angle(grid, samples)
        best = max(best, float(score.max()))
        spacing = step / math.sqrt(2.0) * 1.05
    return best


def sample_cap_uniform(center, lo: float, hi: float, n: int, rng: np.random.Generator) -> np.ndarray:
    """``n`` area-uniform canonical directions with polar angle in ``(lo, hi)`` around ``center``."""
    if n == 0:
        return np.zeros((0, 3))
    a, b = orthonormal_basis(center)
    cz = rng.uniform(math.cos(hi), math.cos(lo), size=n)
    theta = rng.uniform(0.0, 2.0 * math.pi, size=n)
    s = np.sqrt(np.clip(1.0 - cz * cz, 0.0, None))[:, None]
    pts = (cz[:, None] * np.asarray(center, dtype=np.float64)
           + s * (np.cos(theta)[:, None] * a + np.sin(theta)[:, None] * b))
    return canonicalize(pts)


def sample_hemisphere_uniform(n: int, rng: np.random.Generator) -> np.ndarray:
    return sample_cap_uniform(np.array([0.0, 0.0, 1.0]), 0.0, math.pi / 2, n, rng)


def label_candidates(directions, gts, thresholds) -> np.ndarray:
    """Boolean ``(len(directions), len(thresholds))``: nearest ground truth closer than each threshold."""
    directions = np.atleast_2d(directions)
    thresholds = np.asarray(thresholds, dtype=np.float64)
    if len(gts) == 0:
        return np.zeros((len(directions), len(thresholds)), dtype=bool)
    nearest = pairwise_angles(directions, np.asarray(gts)).min(axis=1)
    return nearest[:, None] < thresholds[None, :]


def sample_training_candidates(gts, gamma: float, n_pos: int, n_neg: int, n_rand: int,
                               rng, thresholds) -> list[CandidateLabel]:
    """Positive, negative and random candidates for one image.

    For every ground truth: ``n_pos`` draws inside the cap of angle ``gamma``
    and ``n_neg`` draws in the ``(gamma, 2 gamma)`` annulus. Then ``n_rand``
    draws over the whole hemisphere. Each candidate is labeled against every
    threshold using the nearest ground truth.
    """
    if not 0.0 < gamma <= math.pi / 4 + 1e-12:
        raise ValueError(f"gamma must lie in (0, pi/4], got {gamma}")
    if min(n_pos, n_neg, n_rand) < 0:
        raise ValueError("candidate counts must be non-negative")
    rng = np.random.default_rng(rng) if not isinstance(rng, np.random.Generator) else rng
    gts = [canonicalize(g) for g in gts]
    parts = []
    for d in gts:
        parts.append(sample_cap_uniform(d, 0.0, gamma, n_pos, rng))
        parts.append(sample_cap_uniform(d, gamma, 2.0 * gamma, n_neg, rng))
    parts.append(sample_hemisphere_uniform(n_rand, rng))
    dirs = np.concatenate(parts) if parts else np.zeros((0, 3))
    labels = label_candidates(dirs, gts, thresholds)
    return [CandidateLabel(d, l) for d, l in zip(dirs, labels)]


__all__ = [
    "SphericalCap", "CandidateLabel", "orthonormal_basis", "fibonacci_cap_angles",
    "fibonacci_cap_sample", "covering_angle", "sample_cap_uniform",
    "sample_hemisphere_uniform", "label_candidates", "sample_training_candidates",
    "angular_distance",
]
