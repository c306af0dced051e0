"""
Fibonacci caps and the search schedule
======================================

The search scores a Fibonacci lattice over the hemisphere, then zooms into
smaller caps. Each cap's angle is the previous lattice's covering radius,
stretched by rho.
"""

import math

import numpy as np

from conicvp.inference import SearchConfig
from conicvp.sphere_sampling import SphericalCap, covering_angle, fibonacci_cap_sample

hemi = SphericalCap(np.array([0.0, 0.0, 1.0]), math.pi / 2)
pts = fibonacci_cap_sample(hemi, 64)
print("first lattice points:\n", np.round(pts[:4], 3))

# lattice points are area-uniform: z = cos(phi) is evenly spread
print("z quartiles:", np.round(np.quantile(pts[:, 2], [0.25, 0.5, 0.75]), 3))

# covering radius = largest hole in the lattice
for n in (16, 64, 256):
    print(f"N={n:>3}: covering angle {math.degrees(covering_angle(fibonacci_cap_sample(hemi, n), hemi)):.3f} deg")

cfg = SearchConfig(R=4, N_d=64, rho=1.2)
print("cap angles (deg):", np.round(np.degrees(cfg.cap_angles), 4))
print("thresholds the classifier learns (deg):", np.round(np.degrees(cfg.thresholds), 4))

# a lattice on a tilted, tiny cap keeps the same shape
small = SphericalCap(np.array([0.3, -0.2, 0.9]), cfg.cap_angles[3])
sp = fibonacci_cap_sample(small, 64)
print("tiny cap: center kept exactly?", np.array_equal(sp[0], small.center),
      "| covering / cap angle = %.3f" % (covering_angle(sp, small) / small.polar_angle))
