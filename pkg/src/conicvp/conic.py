"""Conic convolution.

A 3x3 convolution whose sampling grid at every output pixel ``p`` is rotated
so its x-axis points from ``p`` toward a convolution center ``v``::

    y(p) = sum_{dx,dy in -1..1} w(dx, dy) . x(p + dx*t + dy*R90 t),   t = (v - p) / |v - p|

Off-grid samples are read with bilinear interpolation and zero padding.
Coordinates are ``(col, row)`` with pixel centers on integers. Kernel taps
are stored like a plain conv weight, ``w[out, in, dy + 1, dx + 1]``, so with
``v`` far away along +x the operator reduces to an ordinary 3x3 convolution.

Two forward paths share one contract: :func:`conic_conv_reference` loops
over pixels and is the correctness oracle, :func:`conic_conv_fast` gathers a
``(9 C_in) x (H W)`` patch matrix tile by tile and multiplies it with the
``C_out x (9 C_in)`` weight matrix.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor

import numpy as np
from numba import njit

from .nn import DEFAULT_DTYPE, Layer, Param, kaiming

SINGULAR_EPS = 1e-6
FAR = 1e6


def _axes(height, width, vs):
    """Unit vectors toward each center ``vs (F, 2)`` and their +90 degree rotations, ``(F, H, W, 2)``."""
    rows, cols = np.mgrid[0:height, 0:width].astype(np.float64)
    dx = vs[:, 0, None, None] - cols
    dy = vs[:, 1, None, None] - rows
    norm = np.hypot(dx, dy)
    singular = norm < SINGULAR_EPS
    safe = np.where(singular, 1.0, norm)
    t = np.stack([dx / safe, dy / safe], axis=-1)
    t[singular] = 0.0
    normal = np.stack([-t[..., 1], t[..., 0]], axis=-1)
    return t, normal


_OFFSETS = np.array([(dx, dy) for dy in (-1, 0, 1) for dx in (-1, 0, 1)], dtype=np.float64)


def _bilinear_taps(height, width, t, normal):
    """Corner indices and weights ``(F, 9, 4, H*W)`` for axes ``t, normal (F, H, W, 2)``.

    Out-of-grid corners get weight 0 and index 0.
    """
    f = t.shape[0]
    rows, cols = np.mgrid[0:height, 0:width].astype(np.float64)
    t = t.reshape(f, 1, -1, 2)
    nrm = normal.reshape(f, 1, -1, 2)
    dx = _OFFSETS[None, :, :1]
    dy = _OFFSETS[None, :, 1:]
    sx = cols.reshape(1, 1, -1) + dx * t[..., 0] + dy * nrm[..., 0]
    sy = rows.reshape(1, 1, -1) + dx * t[..., 1] + dy * nrm[..., 1]
    x0 = np.floor(sx)
    y0 = np.floor(sy)
    ax, ay = sx - x0, sy - y0
    x0 = x0.astype(np.int64)
    y0 = y0.astype(np.int64)
    idx = np.empty((f, 9, 4, height * width), dtype=np.int64)
    wts = np.empty((f, 9, 4, height * width), dtype=np.float64)
    corners = ((0, 0, (1 - ax) * (1 - ay)), (1, 0, ax * (1 - ay)),
               (0, 1, (1 - ax) * ay), (1, 1, ax * ay))
    for j, (ox, oy, w) in enumerate(corners):
        cx, cy = x0 + ox, y0 + oy
        ok = (cx >= 0) & (cx < width) & (cy >= 0) & (cy < height)
        idx[:, :, j] = np.where(ok, cy * width + cx, 0)
        wts[:, :, j] = np.where(ok, w, 0.0)
    return idx, wts


class ConicFrame:
    """Per-pixel conic axes for an ``H x W`` map and a center ``v = (col, row)``.

    ``t[i, j]`` is the unit vector from pixel ``(j, i)`` toward ``v``;
    ``normal`` is ``t`` rotated by +90 degrees. At the pixel that coincides
    with ``v`` both are zero, which collapses all nine taps onto that pixel.
    Frames are immutable and can be shared between workers.
    """

    def __init__(self, height: int, width: int, v):
        self.height, self.width = int(height), int(width)
        self.v = np.asarray(v, dtype=np.float64).reshape(2)
        if not np.all(np.isfinite(self.v)):
            raise ValueError("convolution center must be finite")
        t, normal = _axes(self.height, self.width, self.v[None])
        self.t, self.normal = t[0], normal[0]
        self.t.setflags(write=False)
        self.normal.setflags(write=False)
        self._taps = None

    @property
    def shape(self):
        return self.height, self.width

    def taps(self):
        """Bilinear corner indices ``(9, 4, H*W)`` into the flattened map and their weights."""
        if self._taps is None:
            idx, wts = _bilinear_taps(self.height, self.width, self.t[None], self.normal[None])
            idx, wts = idx[0], wts[0]
            idx.setflags(write=False)
            wts.setflags(write=False)
            self._taps = (idx, wts)
        return self._taps


class FrameSet:
    """Frames for many centers on one map size, with taps computed in one vectorized pass.

    Sample ``n`` of a batch uses center ``n``.
    """

    def __init__(self, height: int, width: int, vs):
        self.height, self.width = int(height), int(width)
        self.vs = np.asarray(vs, dtype=np.float64).reshape(-1, 2)
        if not np.all(np.isfinite(self.vs)):
            raise ValueError("convolution centers must be finite")
        t, normal = _axes(self.height, self.width, self.vs)
        self.idx, wts = _bilinear_taps(self.height, self.width, t, normal)
        self._wts = {np.dtype(np.float64): wts}

    @property
    def shape(self):
        return self.height, self.width

    def __len__(self):
        return len(self.vs)

    def weights(self, dtype):
        dtype = np.dtype(dtype)
        if dtype not in self._wts:
            self._wts[dtype] = self._wts[np.dtype(np.float64)].astype(dtype)
        return self._wts[dtype]

    def __getitem__(self, i) -> ConicFrame:
        return ConicFrame(self.height, self.width, self.vs[i])


def build_conic_frame(shape, v) -> ConicFrame:
    """Frame for a map of spatial ``shape = (H, W)`` centered at ``v`` in map coordinates."""
    h, w = shape[-2:]
    return ConicFrame(h, w, v)


def _frame_list(frames, n):
    if isinstance(frames, FrameSet):
        if len(frames) != n:
            raise ValueError(f"got {len(frames)} frames for a batch of {n}")
        return frames, np.arange(n, dtype=np.int64)
    if isinstance(frames, ConicFrame):
        return [frames], np.zeros(n, dtype=np.int64)
    frames = list(frames)
    if len(frames) != n:
        raise ValueError(f"got {len(frames)} frames for a batch of {n}")
    uniq, fidx = {}, np.empty(n, dtype=np.int64)
    for i, f in enumerate(frames):
        fidx[i] = uniq.setdefault(id(f), len(uniq))
    order = sorted(uniq, key=uniq.get)
    lookup = {id(f): f for f in frames}
    return [lookup[k] for k in order], fidx


def _check(x, frames, weight):
    if x.ndim != 4:
        raise ValueError(f"expected NCHW input, got shape {x.shape}")
    if x.shape[1] == 0:
        raise ValueError("input must have at least one channel")
    if weight.shape[1:] != (x.shape[1], 3, 3):
        raise ValueError(f"weight {weight.shape} does not match input channels {x.shape[1]}")
    for f in ([frames] if isinstance(frames, FrameSet) else frames):
        if f.shape != x.shape[2:]:
            raise ValueError(f"frame {f.shape} does not match input {x.shape[2:]}")


# ----------------------------------------------------------------- reference

def conic_conv_reference(x, frames, weight, bias=None):
    """Pixel-by-pixel conic convolution. Slow; used to validate the fast path."""
    n, c, h, w = x.shape
    flist, fidx = _frame_list(frames, n)
    _check(x, flist, weight)
    o = weight.shape[0]
    wmat = weight.reshape(o, c, 9)
    y = np.zeros((n, o, h, w), dtype=x.dtype)
    for b in range(n):
        f = flist[fidx[b]]
        for i in range(h):
            for j in range(w):
                tx, ty = f.t[i, j]
                nx, ny = f.normal[i, j]
                acc = np.zeros(o, dtype=np.float64)
                for k in range(9):
                    dy, dx = divmod(k, 3)
                    dx -= 1
                    dy -= 1
                    sx = j + dx * tx + dy * nx
                    sy = i + dx * ty + dy * ny
                    val = _bilinear(x[b], sx, sy)
                    acc += wmat[:, :, k] @ val
                y[b, :, i, j] = acc
    if bias is not None:
        y += bias[None, :, None, None]
    return y


def _bilinear(img, sx, sy):
    """Bilinear read of all channels of ``img (C,H,W)`` at ``(sx, sy)``, zero outside."""
    c, h, w = img.shape
    x0, y0 = int(np.floor(sx)), int(np.floor(sy))
    ax, ay = sx - x0, sy - y0
    out = np.zeros(c, dtype=np.float64)
    for ox, oy, wt in ((0, 0, (1 - ax) * (1 - ay)), (1, 0, ax * (1 - ay)),
                       (0, 1, (1 - ax) * ay), (1, 1, ax * ay)):
        cx, cy = x0 + ox, y0 + oy
        if 0 <= cx < w and 0 <= cy < h:
            out += wt * img[:, cy, cx]
    return out


# ---------------------------------------------------------------- fast path

@njit(nogil=True, cache=True)
def _gather(x, idx, wts, fidx, cols, p0, p1):
    # x (N, C, HW); idx/wts (F, 9, 4, HW); cols (N, 9C, p1 - p0)
    n_, c_ = x.shape[0], x.shape[1]
    for n in range(n_):
        f = fidx[n]
        for c in range(c_):
            xc = x[n, c]
            for k in range(9):
                row = c * 9 + k
                for p in range(p0, p1):
                    cols[n, row, p - p0] = (wts[f, k, 0, p] * xc[idx[f, k, 0, p]]
                                            + wts[f, k, 1, p] * xc[idx[f, k, 1, p]]
                                            + wts[f, k, 2, p] * xc[idx[f, k, 2, p]]
                                            + wts[f, k, 3, p] * xc[idx[f, k, 3, p]])


@njit(nogil=True, cache=True)
def _scatter(gcols, idx, wts, fidx, gx, c0, c1):
    # adjoint of _gather over channels c0..c1; gx (N, C, HW) accumulates
    n_, hw = gx.shape[0], gx.shape[2]
    for n in range(n_):
        f = fidx[n]
        for c in range(c0, c1):
            g = gx[n, c]
            for k in range(9):
                row = c * 9 + k
                for p in range(hw):
                    v = gcols[n, row, p]
                    if v != 0.0:
                        for j in range(4):
                            g[idx[f, k, j, p]] += wts[f, k, j, p] * v


def _stack_taps(flist, dtype):
    if isinstance(flist, FrameSet):
        return flist.idx, flist.weights(dtype)
    idx = np.stack([f.taps()[0] for f in flist])
    wts = np.stack([f.taps()[1] for f in flist]).astype(dtype)
    return idx, wts


def _run(fn, jobs, workers):
    if workers <= 1 or len(jobs) <= 1:
        for j in jobs:
            fn(*j)
        return
    with ThreadPoolExecutor(max_workers=workers) as ex:
        list(ex.map(lambda j: fn(*j), jobs))


def _tiles(hw, tile):
    return [(p0, min(hw, p0 + tile)) for p0 in range(0, hw, tile)]


def conic_im2col(x, frames, workers: int = 1, tile: int = 1024):
    """Patch matrix ``(N, 9 C, H W)`` of bilinear conic samples."""
    n, c, h, w = x.shape
    flist, fidx = _frame_list(frames, n)
    idx, wts = _stack_taps(flist, x.dtype)
    xf = np.ascontiguousarray(x).reshape(n, c, h * w)
    cols = np.empty((n, 9 * c, h * w), dtype=x.dtype)
    _run(lambda p0, p1: _gather(xf, idx, wts, fidx, cols[:, :, p0:p1], p0, p1),
         _tiles(h * w, tile), workers)
    return cols


def conic_conv_fast(x, frames, weight, bias=None, workers: int = 1, tile: int = 1024,
                    return_cols: bool = False):
    """im2col + GEMM conic convolution, blocked over pixel tiles.

    Each tile gathers its ``(N, 9 C_in, T)`` patch block and multiplies it by
    the weight matrix; tiles are independent, so ``workers > 1`` runs them on
    a thread pool. With ``return_cols`` the full patch matrix is also returned
    for reuse in :func:`conic_conv_backward`.
    """
    n, c, h, w = x.shape
    flist, fidx = _frame_list(frames, n)
    _check(x, flist, weight)
    o = weight.shape[0]
    wmat = np.ascontiguousarray(weight.reshape(o, 9 * c))
    idx, wts = _stack_taps(flist, x.dtype)
    xf = np.ascontiguousarray(x).reshape(n, c, h * w)
    hw = h * w
    y = np.empty((n, o, hw), dtype=x.dtype)
    cols = np.empty((n, 9 * c, hw), dtype=x.dtype) if return_cols else None

    def job(p0, p1):
        buf = cols[:, :, p0:p1] if return_cols else np.empty((n, 9 * c, p1 - p0), dtype=x.dtype)
        _gather(xf, idx, wts, fidx, buf, p0, p1)
        y[:, :, p0:p1] = np.matmul(wmat, buf)

    _run(job, _tiles(hw, tile), workers)
    if bias is not None:
        y += bias[None, :, None]
    y = y.reshape(n, o, h, w)
    return (y, cols) if return_cols else y


def conic_conv_backward(grad_y, x, frames, weight, cols=None, workers: int = 1,
                        need_input_grad: bool = True):
    """Gradients ``(grad_x, grad_w, grad_b)`` of the conic convolution.

    ``grad_x`` scatters every sample's gradient onto its four bilinear
    corners; no gradient flows to the convolution centers. Pass the patch
    matrix from the forward pass as ``cols`` to skip re-gathering it.
    """
    n, c, h, w = x.shape
    flist, fidx = _frame_list(frames, n)
    _check(x, flist, weight)
    o = weight.shape[0]
    hw = h * w
    g = np.ascontiguousarray(grad_y).reshape(n, o, hw)
    if cols is None:
        cols = conic_im2col(x, frames, workers)
    gw = np.tensordot(g, cols, axes=([0, 2], [0, 2])).reshape(weight.shape)
    gb = g.sum(axis=(0, 2))
    if not need_input_grad:
        return None, gw, gb
    gcols = np.matmul(weight.reshape(o, 9 * c).T, g)
    idx, wts = _stack_taps(flist, x.dtype)
    gx = np.zeros((n, c, hw), dtype=x.dtype)
    chunk = max(1, -(-c // max(1, workers)))
    _run(lambda c0, c1: _scatter(gcols, idx, wts, fidx, gx, c0, c1),
         [(c0, min(c, c0 + chunk)) for c0 in range(0, c, chunk)], workers)
    return gx.reshape(x.shape), gw, gb


class ConicConv(Layer):
    """Trainable 3x3 conic convolution; same parameter shapes as a plain 3x3 conv."""

    def __init__(self, cin, cout, rng=None, dtype=DEFAULT_DTYPE, workers: int = 1):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.w = Param(kaiming(rng, (cout, cin, 3, 3), cin * 9, dtype))
        self.b = Param(np.zeros(cout, dtype=dtype))
        self.workers = workers

    def forward(self, x, frames, train=True):
        y, cols = conic_conv_fast(x, frames, self.w.value, self.b.value, self.workers,
                                  return_cols=True)
        self._cache = (x, frames, cols)
        return y

    def backward(self, gy, need_input_grad=True):
        x, frames, cols = self._cache
        gx, gw, gb = conic_conv_backward(gy, x, frames, self.w.value, cols, self.workers,
                                         need_input_grad)
        self.w.grad += gw
        self.b.grad += gb
        return gx

    def params(self):
        return {"weight": self.w, "bias": self.b}
