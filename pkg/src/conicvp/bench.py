"""Throughput of the reference and fast conic convolution kernels."""

from __future__ import annotations

import csv
import io
import time

import numpy as np
from threadpoolctl import threadpool_limits

from .conic import build_conic_frame, conic_conv_fast, conic_conv_reference


def _timeit(fn, repeat):
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t0)
    return best, out


def bench(shape=(1, 64, 64, 64), workers=(1, 8), repeat: int = 3, seed: int = 0, tile: int = 256):
    """Time both kernels on a random ``(N, C, H, W)`` input with ``C -> C`` channels.

    BLAS is pinned to one thread so the worker count is the only source of
    parallelism. Returns a list of row dicts.
    """
    n, c, h, w = shape
    rng = np.random.default_rng(seed)
    x = rng.standard_normal(shape).astype(np.float32)
    weight = (rng.standard_normal((c, c, 3, 3)) * np.sqrt(2.0 / (9 * c))).astype(np.float32)
    bias = rng.standard_normal(c).astype(np.float32)
    frame = build_conic_frame((h, w), (w * 0.37, h * 0.61))
    frame.taps()
    pixels = n * h * w
    rows = []
    with threadpool_limits(limits=1):
        conic_conv_fast(x[:1, :, :8, :8], build_conic_frame((8, 8), (3, 3)), weight[:, :, :, :], bias)
        t_ref, y_ref = _timeit(lambda: conic_conv_reference(x, frame, weight, bias), 1)
        rows.append({"kernel": "reference", "workers": 1, "shape": "x".join(map(str, shape)),
                     "seconds": t_ref, "pixels_per_s": pixels / t_ref, "speedup": 1.0, "max_abs_diff": 0.0})
        for k in workers:
            t, y = _timeit(lambda: conic_conv_fast(x, frame, weight, bias, workers=k, tile=tile), repeat)
            rows.append({"kernel": "fast", "workers": k, "shape": "x".join(map(str, shape)),
                         "seconds": t, "pixels_per_s": pixels / t, "speedup": t_ref / t,
                         "max_abs_diff": float(np.abs(y - y_ref).max())})
    return rows


def rows_to_csv(rows) -> str:
    buf = io.StringIO()
    wr = csv.DictWriter(buf, fieldnames=list(rows[0]))
    wr.writeheader()
    for r in rows:
        wr.writerow({k: (f"{v:.6g}" if isinstance(v, float) else v) for k, v in r.items()})
    return buf.getvalue()
