"""Angle accuracy (AA) of predicted vanishing directions.

AA at ``theta`` is the area under the cumulative angular-error curve on
``[0, theta]`` divided by ``theta``. For sorted errors ``e_i`` over ``n``
predictions the area is exactly ``sum_i max(theta - e_i, 0) / n``.
"""

from __future__ import annotations

import csv
import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from .geometry import pairwise_angles

UNMATCHED_ERROR = math.pi / 2
DEFAULT_THRESHOLDS_DEG = (0.2, 0.5, 1.0, 2.0, 10.0)


@dataclass
class Match:
    pred: int
    gt: int | None
    error: float


EXACT_LIMIT = 40320  # assignments enumerated before falling back to greedy


def _assign_exact(ang):
    """Pairs minimizing the total angle; rows are the smaller side. First minimum wins."""
    n, m = ang.shape
    best, best_total = None, math.inf
    rows = np.arange(n)
    for perm in itertools.permutations(range(m), n):
        total = float(ang[rows, perm].sum())
        if total < best_total:
            best, best_total = perm, total
    return list(zip(range(n), best))


def _assign_greedy(ang):
    order = np.argsort(ang, axis=None, kind="stable")
    used_r, used_c, pairs = set(), set(), []
    for flat in order:
        i, j = divmod(int(flat), ang.shape[1])
        if i in used_r or j in used_c:
            continue
        pairs.append((i, j))
        used_r.add(i)
        used_c.add(j)
        if len(pairs) == min(ang.shape):
            break
    return pairs


def match_predictions(preds, gts) -> tuple[list[Match], int]:
    """One-to-one matching of predictions to ground truths.

    Small problems are solved exactly (minimal total angle over all
    assignments); beyond ``EXACT_LIMIT`` candidate assignments a greedy pass
    by increasing angle is used. Returns ``(matches, unmatched_gts)`` with one
    :class:`Match` per prediction; predictions left without a ground truth get
    error pi/2.
    """
    preds = np.asarray(preds, dtype=np.float64).reshape(-1, 3)
    gts = np.asarray(gts, dtype=np.float64).reshape(-1, 3)
    matches = [Match(i, None, UNMATCHED_ERROR) for i in range(len(preds))]
    if len(preds) and len(gts):
        ang = pairwise_angles(preds, gts)
        flip = len(preds) > len(gts)
        a = ang.T if flip else ang
        n, m = a.shape
        pairs = _assign_exact(a) if math.perm(m, n) <= EXACT_LIMIT else _assign_greedy(a)
        for i, j in pairs:
            pi, gj = (j, i) if flip else (i, j)
            matches[pi] = Match(pi, gj, float(ang[pi, gj]))
    unmatched = len(gts) - sum(m.gt is not None for m in matches)
    return matches, unmatched


@dataclass
class AACurve:
    errors: np.ndarray
    matches: list = field(default_factory=list)
    unmatched_gts: int = 0

    def __post_init__(self):
        self.errors = np.sort(np.asarray(self.errors, dtype=np.float64).ravel())

    @classmethod
    def from_predictions(cls, preds_per_image, gts_per_image):
        errors, matches, unmatched = [], [], 0
        for preds, gts in zip(preds_per_image, gts_per_image):
            m, u = match_predictions(preds, gts)
            matches.append(m)
            unmatched += u
            errors.extend(x.error for x in m)
        return cls(np.array(errors), matches, unmatched)

    def cdf(self, x):
        """Fraction of errors <= x."""
        if len(self.errors) == 0:
            return np.zeros_like(np.asarray(x, dtype=np.float64))
        return np.searchsorted(self.errors, x, side="right") / len(self.errors)


def angle_accuracy(curve: AACurve, theta: float) -> float:
    if theta <= 0:
        raise ValueError("theta must be positive")
    if len(curve.errors) == 0:
        return 0.0
    return float(np.clip(theta - curve.errors, 0.0, None).sum() / (len(curve.errors) * theta))


def lower_median(values) -> float:
    v = np.sort(np.asarray(values, dtype=np.float64))
    return float(v[(len(v) - 1) // 2]) if len(v) else float("nan")


def summarize(curve: AACurve, thresholds_deg=DEFAULT_THRESHOLDS_DEG) -> dict:
    """AA (in percent) at each threshold plus mean/median error in degrees."""
    out = {f"AA@{t:g}": 100.0 * angle_accuracy(curve, math.radians(t)) for t in thresholds_deg}
    errs = np.degrees(curve.errors)
    out["mean_deg"] = float(errs.mean()) if len(errs) else float("nan")
    out["median_deg"] = lower_median(errs)
    out["count"] = int(len(errs))
    out["unmatched_gts"] = int(curve.unmatched_gts)
    return out


def write_curve_csv(curve: AACurve, path, max_deg: float = 10.0, steps: int = 1000):
    """Cumulative curve ``(x_deg, F(x))`` sampled on ``[0, max_deg]``."""
    xs = np.linspace(0.0, max_deg, steps + 1)
    fs = curve.cdf(np.radians(xs))
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["angle_deg", "fraction"])
        for x, f in zip(xs, fs):
            w.writerow([f"{x:.6g}", f"{f:.6g}"])
