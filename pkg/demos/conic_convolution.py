"""
Conic convolution
=================

A 3x3 convolution whose kernel turns at every pixel to face a chosen
center. Far away along +x it is an ordinary convolution; around a center
it commutes with 90 degree rotations.
"""

import time

import numpy as np

from conicvp.conic import build_conic_frame, conic_conv_fast, conic_conv_reference
from conicvp.nn import conv2d_forward

rng = np.random.default_rng(0)
x = rng.standard_normal((1, 8, 33, 33)).astype(np.float32)
w = (rng.standard_normal((4, 8, 3, 3)) * np.sqrt(2 / 72)).astype(np.float32)

# far center: same as plain conv
far = build_conic_frame((33, 33), (16 + 1e6, 16))
plain, _ = conv2d_forward(x, w, None, 1, 1)
print("far center vs conv2d:", np.abs(conic_conv_fast(x, far, w) - plain).max())

# centered: rotate input or output, same answer
mid = build_conic_frame((33, 33), (16, 16))
y = conic_conv_fast(x, mid, w)
y_rot = conic_conv_fast(np.ascontiguousarray(np.rot90(x, 1, axes=(2, 3))), mid, w)
print("rotation mismatch:", np.abs(np.rot90(y, 1, axes=(2, 3)) - y_rot).max())

# the axis field: unit vectors toward the center, zero at the center pixel
print("t at (0,0):", mid.t[0, 0], "| t at center:", mid.t[16, 16])

# the pixel loop and the im2col path agree; the latter is much faster
t0 = time.perf_counter()
ref = conic_conv_reference(x, mid, w)
t1 = time.perf_counter()
fast = conic_conv_fast(x, mid, w)
t2 = time.perf_counter()
print(f"reference {t1 - t0:.3f}s, fast {t2 - t1:.4f}s, max diff {np.abs(ref - fast).max():.2e}")
