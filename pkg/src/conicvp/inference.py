"""Coarse-to-fine search for vanishing directions on the Gaussian sphere.

Round 1 scores a Fibonacci lattice over the whole hemisphere. Every later
round samples a smaller cap centered on the previous round's best direction.
Cap angles follow ``gamma_{r+1} = rho * covering_angle(round-r lattice)``, and
round ``r`` ranks its samples with the classifier output for threshold
``gamma_{r+1}``.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .geometry import CameraIntrinsics, pairwise_angles
from .sphere_sampling import SphericalCap, covering_angle, fibonacci_cap_sample

Z_AXIS = np.array([0.0, 0.0, 1.0])


@dataclass(frozen=True)
class SearchConfig:
    R: int = 4
    N_d: int = 64
    rho: float = 1.2
    K: int = 1
    covering_grid: int = 256

    def __post_init__(self):
        if self.R < 1 or self.N_d < 2 or self.rho < 1 or self.K < 1:
            raise ValueError(f"invalid search config {self}")

    @property
    def thresholds(self) -> list[float]:
        return derive_threshold_schedule(self)[0]

    @property
    def cap_angles(self) -> list[float]:
        return derive_threshold_schedule(self)[1]


@lru_cache(maxsize=64)
def _schedule(R, N_d, rho, M):
    caps = [math.pi / 2]
    for _ in range(R):
        cap = SphericalCap(Z_AXIS, caps[-1])
        nxt = rho * covering_angle(fibonacci_cap_sample(cap, N_d), cap, M=M)
        if nxt >= caps[-1]:
            raise ValueError(f"cap schedule does not shrink (N_d={N_d} too small for rho={rho})")
        caps.append(nxt)
    return tuple(caps[1:]), tuple(caps)


def derive_threshold_schedule(cfg: SearchConfig) -> tuple[list[float], list[float]]:
    """``(thresholds, cap_angles)``: ``gamma_2..gamma_{R+1}`` and ``gamma_1..gamma_{R+1}``."""
    thr, caps = _schedule(cfg.R, cfg.N_d, float(cfg.rho), cfg.covering_grid)
    return list(thr), list(caps)


def select_topk_separated(scores, directions, K: int, min_sep: float):
    """Greedy best-first choice of up to ``K`` directions at least ``min_sep`` apart.

    Ties go to the lower index. Returns ``(indices, complete)`` where
    ``complete`` is False when fewer than ``K`` directions could be chosen.
    """
    scores = np.asarray(scores, dtype=np.float64)
    directions = np.atleast_2d(directions)
    order = np.argsort(-scores, kind="stable")
    chosen = []
    for i in order:
        if len(chosen) == K:
            break
        if chosen and pairwise_angles(directions[i], directions[chosen]).min() < min_sep:
            continue
        chosen.append(int(i))
    complete = len(chosen) == K
    if not complete:
        warnings.warn(f"only {len(chosen)} of {K} separated seeds found", RuntimeWarning, stacklevel=2)
    return chosen, complete


@dataclass
class SearchResult:
    directions: np.ndarray
    scores: np.ndarray
    evaluations: int
    trajectory: list  # per seed, the chosen center after every round


def coarse_to_fine(score_fn, cfg: SearchConfig, min_sep: float | None = None) -> SearchResult:
    """Run the round loop with ``score_fn(directions (n, 3), round_index) -> scores (n,)``.

    ``round_index`` is 0-based and selects the threshold ``gamma_{r+1}``.
    """
    thresholds, caps = derive_threshold_schedule(cfg)
    evaluations = 0
    samples = fibonacci_cap_sample(SphericalCap(Z_AXIS, caps[0]), cfg.N_d)
    scores = np.asarray(score_fn(samples, 0), dtype=np.float64)
    evaluations += len(samples)
    if min_sep is None:
        min_sep = 2.0 * thresholds[0]
    seeds, _ = select_topk_separated(scores, samples, cfg.K, min_sep)
    dirs, finals, traj = [], [], []
    for i in seeds:
        center, best = samples[i], scores[i]
        path = [center]
        for r in range(1, cfg.R):
            pts = fibonacci_cap_sample(SphericalCap(center, caps[r]), cfg.N_d)
            sc = np.asarray(score_fn(pts, r), dtype=np.float64)
            evaluations += len(pts)
            j = int(np.argmax(sc))
            center, best = pts[j], sc[j]
            path.append(center)
        dirs.append(center)
        finals.append(best)
        traj.append(path)
    return SearchResult(np.array(dirs).reshape(-1, 3), np.array(finals), evaluations, traj)


def detect(model, image, K: CameraIntrinsics, cfg: SearchConfig) -> SearchResult:
    """Vanishing directions in ``image (C, S, S)``; the backbone runs once."""
    if model.cfg.R != cfg.R:
        raise ValueError(f"model predicts {model.cfg.R} thresholds but search uses R={cfg.R}")
    feats = model.backbone_forward(np.asarray(image)[None], train=False)

    def score(dirs, r):
        return model.head_forward(feats, dirs, K, train=False)[:, r]

    return coarse_to_fine(score, cfg)
