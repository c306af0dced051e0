import csv
import itertools
import math

import numpy as np
import pytest

from conicvp.evaluation import (AACurve, angle_accuracy, lower_median, match_predictions, summarize,
                                write_curve_csv)
from conicvp.geometry import canonicalize, pairwise_angles

DEG = math.pi / 180


def test_aa_hand_case():
    curve = AACurve(np.radians([0.5, 1.5]))
    # step CDF on [0, 2 deg]: 0 on [0, .5), 1/2 on [.5, 1.5), 1 on [1.5, 2] -> area 1 deg
    assert angle_accuracy(curve, 2 * DEG) == pytest.approx(0.5, abs=1e-15)


def test_aa_edge_cases():
    assert angle_accuracy(AACurve(np.zeros(5)), 0.1 * DEG) == 1.0
    assert angle_accuracy(AACurve(np.radians([3.0, 4.0])), 2 * DEG) == 0.0
    assert angle_accuracy(AACurve(np.array([])), 1.0) == 0.0
    with pytest.raises(ValueError):
        angle_accuracy(AACurve(np.zeros(1)), 0.0)
    # errors either 0 or above theta: AA equals the fraction below theta
    assert angle_accuracy(AACurve(np.radians([0, 0, 5, 9])), 2 * DEG) == 0.5


def test_aa_matches_numeric_integral():
    rng = np.random.default_rng(0)
    e = rng.uniform(0, 3 * DEG, 50)
    curve = AACurve(e)
    theta = 2 * DEG
    xs = np.linspace(0, theta, 200_001)
    trapezoid = getattr(np, "trapezoid", None) or np.trapz
    numeric = trapezoid(curve.cdf(xs), xs) / theta
    assert angle_accuracy(curve, theta) == pytest.approx(numeric, abs=1e-4)


def test_aa_properties():
    rng = np.random.default_rng(1)
    e = rng.uniform(0, 5 * DEG, 40)
    vals = [angle_accuracy(AACurve(e), t * DEG) for t in (0.2, 0.5, 1, 2, 10)]
    assert all(0 <= v <= 1 for v in vals)
    assert vals == sorted(vals)
    assert angle_accuracy(AACurve(rng.permutation(e)), DEG) == angle_accuracy(AACurve(e), DEG)


def test_matching_examples():
    g = canonicalize(np.array([[0, 0, 1.0], [1, 0, 0.2]]))
    m, u = match_predictions(g, g)
    assert max(x.error for x in m) < 1e-7 and u == 0
    p = canonicalize(np.array([[0.05, 0, 1.0]]))
    m, u = match_predictions(p, g)
    assert m[0].gt == 0 and u == 1
    m, u = match_predictions(np.vstack([p, p]), g[:1])
    assert sorted(x.error for x in m)[-1] == math.pi / 2 and u == 0
    m, u = match_predictions(np.zeros((0, 3)), g)
    assert m == [] and u == 2


def _brute(ang):
    n, m = ang.shape
    return min(itertools.permutations(range(m), n), key=lambda s: sum(ang[i, s[i]] for i in range(n)))


def test_matching_agrees_with_permutation_oracle():
    rng = np.random.default_rng(7)
    for trial in range(1000):
        g = canonicalize(rng.standard_normal((3, 3)))
        if trial % 2:
            # adversarial near-ties: predictions are jittered copies of two ground truths
            p = canonicalize(g[[0, 0, 1]] + rng.normal(0, 1e-3, (3, 3)))
        else:
            p = canonicalize(rng.standard_normal((3, 3)))
        ang = pairwise_angles(p, g)
        m, u = match_predictions(p, g)
        got = tuple(x.gt for x in m)
        best = _brute(ang)
        total = lambda s: sum(ang[i, s[i]] for i in range(3))
        assert got == best or abs(total(got) - total(best)) < 1e-12
        assert u == 0


def test_matching_uneven_sizes_oracle():
    rng = np.random.default_rng(8)
    for _ in range(200):
        p = canonicalize(rng.standard_normal((2, 3)))
        g = canonicalize(rng.standard_normal((3, 3)))
        m, u = match_predictions(p, g)
        assert tuple(x.gt for x in m) == _brute(pairwise_angles(p, g)) and u == 1


def test_large_problems_fall_back_to_greedy():
    rng = np.random.default_rng(9)
    p = canonicalize(rng.standard_normal((10, 3)))
    m, u = match_predictions(p, p)
    assert all(x.error == pytest.approx(0, abs=1e-7) for x in m) and u == 0


def test_lower_median_and_summary(tmp_path):
    assert lower_median([0, math.pi / 2]) == 0
    assert lower_median([3, 1, 2]) == 2
    assert math.isnan(lower_median([]))
    s = summarize(AACurve(np.radians([1.0])), (2.0,))
    assert s["mean_deg"] == pytest.approx(1.0) and s["median_deg"] == pytest.approx(1.0)
    assert s["AA@2"] == pytest.approx(50.0)
    curve = AACurve.from_predictions([np.array([[0, 0, 1.0]])], [np.array([[0, 0, 1.0], [1.0, 0, 0]])])
    assert curve.unmatched_gts == 1 and summarize(curve)["count"] == 1
    write_curve_csv(AACurve(np.radians([0.5, 1.5])), tmp_path / "c.csv", max_deg=2, steps=4)
    rows = list(csv.reader(open(tmp_path / "c.csv")))
    assert rows[0] == ["angle_deg", "fraction"]
    assert [float(r[1]) for r in rows[1:]] == [0, 0.5, 0.5, 1, 1]
