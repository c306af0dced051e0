"""
Vanishing points on the Gaussian sphere
=======================================

A vanishing point is stored as the unit direction of the 3D lines that
meet there. Points far outside the frame, and points at infinity, stay
well behaved in that form.
"""

import numpy as np

from conicvp.geometry import (CameraIntrinsics, angular_distance, direction_to_vp, direction_to_vp_far,
                              vp_to_direction)

K = CameraIntrinsics.for_image(128, 128)  # f = 64, principal point at the image center
print("K =\n", K.K)

# a point in the image, one far outside it, and the principal point
for v in [(90.0, 40.0), (5000.0, -1200.0), (K.cx, K.cy)]:
    d = vp_to_direction(v, K)
    print(f"v={v!s:>20} -> d={np.round(d, 4)} -> back {np.round(direction_to_vp(d, K), 4)}")

# a horizontal direction has no finite image point
d = np.array([1.0, 0.0, 0.0])
print("ideal point:", direction_to_vp(d, K), "| pushed out to", direction_to_vp_far(d, K))

# the angle ignores the sign of the direction and tops out at 90 degrees
a = vp_to_direction((90.0, 40.0), K)
print("angle(a, -a) =", angular_distance(a, -a))
print("angle to the optical axis = %.2f deg" % np.degrees(angular_distance(a, np.array([0, 0, 1.0]))))

# moving a point 1 px matters a lot near the center and barely at all far away
for r in (0, 100, 10_000):
    p = np.array([K.cx + r, K.cy])
    step = angular_distance(vp_to_direction(p, K), vp_to_direction(p + 1, K))
    print(f"1 px at radius {r:>6}: {np.degrees(step):.6f} deg")
