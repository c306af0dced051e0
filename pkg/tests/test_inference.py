import math
import warnings

import numpy as np
import pytest

from _helpers import cap_covering_oracle
from conicvp.geometry import angular_distance, canonicalize, pairwise_angles
from conicvp.inference import SearchConfig, coarse_to_fine, derive_threshold_schedule, detect, select_topk_separated
from conicvp.network import ModelConfig, VpsModel
from conicvp.geometry import CameraIntrinsics
from conicvp.sphere_sampling import SphericalCap, fibonacci_cap_sample

# gamma_1..gamma_6 for N_d=64, rho=1.2 from the Voronoi/boundary covering oracle
# (see test_frozen_schedule_matches_oracle)
FROZEN_CAPS = [math.pi / 2, 0.30933965977934114, 0.08218497778364493, 0.021917645230691972,
               0.005846740445489494, 0.0015597060211628938]


def test_schedule_basics():
    thr, caps = derive_threshold_schedule(SearchConfig())
    assert caps[0] == math.pi / 2
    assert len(thr) == 4 and len(caps) == 5
    assert thr == caps[1:]
    assert all(a > b for a, b in zip(caps, caps[1:]))


def test_schedule_matches_frozen_constants():
    caps = SearchConfig(R=5).cap_angles
    assert np.allclose(caps, FROZEN_CAPS, rtol=1e-5, atol=0)


def test_frozen_schedule_matches_oracle():
    z = np.array([0, 0, 1.0])
    g = [math.pi / 2]
    for _ in range(3):
        cap = SphericalCap(z, g[-1])
        g.append(1.2 * cap_covering_oracle(fibonacci_cap_sample(cap, 64), z, g[-1], ring=4_000_000))
    assert np.allclose(g, FROZEN_CAPS[:4], rtol=1e-5)


def test_schedule_rejects_non_shrinking():
    with pytest.raises(ValueError):
        derive_threshold_schedule(SearchConfig(N_d=2, rho=2.0))
    for bad in (dict(R=0), dict(N_d=1), dict(rho=0.5), dict(K=0)):
        with pytest.raises(ValueError):
            SearchConfig(**bad)


def oracle_scorer(gts):
    gts = np.atleast_2d(gts)
    calls = []

    def score(dirs, r):
        calls.append(len(dirs))
        return -pairwise_angles(dirs, gts).min(axis=1)
    return score, calls


def test_oracle_search_recovers_hidden_directions():
    cfg = SearchConfig()
    final = cfg.cap_angles[-1]
    rng = np.random.default_rng(11)
    for _ in range(100):
        gt = canonicalize(rng.standard_normal(3))
        score, calls = oracle_scorer(gt)
        res = coarse_to_fine(score, cfg)
        assert angular_distance(res.directions[0], gt) < final
        assert res.evaluations == sum(calls) == 4 * 64
        errs = [angular_distance(c, gt) for c in res.trajectory[0]]
        assert all(b <= a + 1e-15 for a, b in zip(errs, errs[1:]))


def test_oracle_search_multiple_vps():
    cfg = SearchConfig(K=3)
    rng = np.random.default_rng(4)
    for _ in range(20):
        q, _ = np.linalg.qr(rng.standard_normal((3, 3)))
        gts = canonicalize(q.T)
        score, calls = oracle_scorer(gts)
        res = coarse_to_fine(score, cfg)
        assert res.evaluations == 64 + 3 * 3 * 64
        assert pairwise_angles(gts, res.directions).min(axis=1).max() < cfg.cap_angles[-1]


def test_search_is_deterministic():
    score, _ = oracle_scorer(canonicalize([0.3, 0.1, 0.2]))
    a, b = coarse_to_fine(score, SearchConfig()), coarse_to_fine(score, SearchConfig())
    assert np.array_equal(a.directions, b.directions)


def test_topk_examples():
    dirs = canonicalize(np.array([[0, 0, 1.0], [0.01, 0, 1], [1, 0, 0.01], [1, 0.01, 0], [0, 1, 0]]))
    scores = np.array([0.9, 0.9, 0.8, 0.8, 0.1])
    assert select_topk_separated(scores, dirs, 1, 0.1) == ([0], True)
    # two tied clusters: one seed from each, lowest index on ties
    assert select_topk_separated(scores, dirs, 2, 0.1) == ([0, 2], True)
    assert select_topk_separated(scores, dirs, 3, 0.0) == ([0, 1, 2], True)
    with warnings.catch_warnings(record=True) as w:
        warnings.simplefilter("always")
        idx, ok = select_topk_separated(scores, dirs, 4, 1.0)
    assert idx == [0, 2, 4] and not ok and w


def test_topk_matches_brute_force():
    rng = np.random.default_rng(0)
    for _ in range(50):
        dirs = canonicalize(rng.standard_normal((12, 3)))
        scores = rng.integers(0, 4, 12).astype(float)
        sep = rng.uniform(0.2, 1.0)
        idx, _ = select_topk_separated(scores, dirs, 3, sep)
        # brute force: walk candidates in (score desc, index asc) order
        expect = []
        for i in sorted(range(12), key=lambda i: (-scores[i], i)):
            if len(expect) < 3 and all(angular_distance(dirs[i], dirs[j]) >= sep for j in expect):
                expect.append(i)
        assert idx == expect


def test_detect_checks_round_count_and_counts_evaluations():
    cfg = SearchConfig()
    model = VpsModel(ModelConfig(thresholds=cfg.thresholds, image_size=32, backbone_channels=4,
                                 feature_channels=4, reduce_channels=4, conic_channels=(4, 4),
                                 fc_channels=4))
    K = CameraIntrinsics.for_image(32, 32)
    img = np.zeros((1, 32, 32))
    res = detect(model, img, K, cfg)
    assert res.directions.shape == (1, 3) and res.evaluations == 256
    assert np.array_equal(res.directions, detect(model, img, K, cfg).directions)
    with pytest.raises(ValueError):
        detect(model, img, K, SearchConfig(R=3))
