"""Gaussian-sphere geometry of vanishing points.

A vanishing point ``v = (u, v)`` in pixels and a line direction ``d`` on the
unit sphere are two views of the same thing: ``d ~ (u - cx, v - cy, f)``.
Directions are only defined up to sign, so every direction handed out by this
module is canonicalized onto one hemisphere (``z > 0``, ties broken on x, then y).

Image coordinates put the origin at the center of the top-left pixel, u grows
to the right and v grows downward.

Directions are plain ``np.ndarray`` of shape ``(3,)`` or ``(n, 3)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

# below this |d_z| a direction is treated as parallel to the image plane
IDEAL_EPS = 1e-8


@dataclass(frozen=True)
class CameraIntrinsics:
    """Pinhole intrinsics with square pixels and no skew."""

    f: float
    cx: float
    cy: float

    def __post_init__(self):
        if not (np.isfinite(self.f) and self.f > 0):
            raise ValueError(f"focal length must be positive, got {self.f}")
        if not (np.isfinite(self.cx) and np.isfinite(self.cy)):
            raise ValueError("principal point must be finite")

    @classmethod
    def for_image(cls, width: int, height: int, f: float | None = None):
        """Intrinsics centered on a ``width x height`` raster.

        Without a calibrated focal length, f defaults to half the image width.
        """
        if f is None:
            f = width / 2.0
        return cls(float(f), (width - 1) / 2.0, (height - 1) / 2.0)

    @property
    def K(self) -> np.ndarray:
        return np.array([[self.f, 0.0, self.cx], [0.0, self.f, self.cy], [0.0, 0.0, 1.0]])

    def to_dict(self) -> dict:
        return {"f": self.f, "cx": self.cx, "cy": self.cy}

    @classmethod
    def from_dict(cls, d: dict):
        return cls(float(d["f"]), float(d["cx"]), float(d["cy"]))


def canonicalize(d: np.ndarray) -> np.ndarray:
    """Normalize and flip directions onto the canonical hemisphere.

    Works on a single ``(3,)`` vector or a stack ``(..., 3)``.
    """
    d = np.asarray(d, dtype=np.float64)
    d = d / np.linalg.norm(d, axis=-1, keepdims=True)
    x, y, z = d[..., 0], d[..., 1], d[..., 2]
    flip = (z < 0) | ((z == 0) & ((x < 0) | ((x == 0) & (y < 0))))
    return np.where(flip[..., None], -d, d)


def vp_to_direction(v, K: CameraIntrinsics) -> np.ndarray:
    """Unit line direction of the vanishing point ``v = (u, v)``."""
    v = np.asarray(v, dtype=np.float64)
    d = np.stack([v[..., 0] - K.cx, v[..., 1] - K.cy, np.full(v.shape[:-1], K.f)], axis=-1)
    return canonicalize(d)


def direction_to_vp(d, K: CameraIntrinsics, eps: float = IDEAL_EPS):
    """Image point of direction ``d``, or None when d is (nearly) parallel to the image plane."""
    d = np.asarray(d, dtype=np.float64)
    if abs(d[2]) <= eps:
        return None
    return np.array([K.f * d[0] / d[2] + K.cx, K.f * d[1] / d[2] + K.cy])


def direction_to_vp_far(d, K: CameraIntrinsics, far: float = 1e6, eps: float = IDEAL_EPS) -> np.ndarray:
    """Like :func:`direction_to_vp` but always finite.

    Ideal points are replaced by a point ``far`` pixels from the principal
    point along the ideal direction, which reproduces the same field of
    directions toward the point over any image of reasonable size.
    """
    p = direction_to_vp(d, K, eps)
    if p is not None:
        return p
    d = np.asarray(d, dtype=np.float64)
    r = np.hypot(d[0], d[1])
    return np.array([K.cx + far * d[0] / r, K.cy + far * d[1] / r])


def angular_distance(d1, d2) -> np.ndarray | float:
    """Angle between two line directions, ``arccos |d1 . d2|``, in [0, pi/2].

    Broadcasts over leading dimensions.
    """
    d1 = np.asarray(d1, dtype=np.float64)
    d2 = np.asarray(d2, dtype=np.float64)
    c = np.abs(np.sum(d1 * d2, axis=-1))
    out = np.arccos(np.clip(c, -1.0, 1.0))
    return float(out) if out.ndim == 0 else out


def pairwise_angles(a, b) -> np.ndarray:
    """``(len(a), len(b))`` matrix of angular distances."""
    a = np.atleast_2d(np.asarray(a, dtype=np.float64))
    b = np.atleast_2d(np.asarray(b, dtype=np.float64))
    return np.arccos(np.clip(np.abs(a @ b.T), 0.0, 1.0))
