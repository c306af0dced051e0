"""Dense NCHW kernels with hand-written backward passes.

Tensors are plain numpy arrays; every kernel preserves the dtype of its
input, so the same code runs in float32 for training and float64 for
gradient checks. Forward functions return ``(y, cache)`` and the matching
backward takes ``(grad_y, cache)``.

Layer objects wrap the kernels, own their :class:`Param` tensors and
*accumulate* into ``Param.grad``; call :func:`zero_grad` between steps.
"""

from __future__ import annotations

import json
import math
import struct
from pathlib import Path

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

DEFAULT_DTYPE = np.float32
BCE_EPS = 1e-7


class Param:
    """A trainable tensor with its gradient and Adam moments."""

    __slots__ = ("value", "grad", "m", "v", "trainable")

    def __init__(self, value: np.ndarray, trainable: bool = True):
        self.value = value
        self.trainable = trainable
        self.grad = np.zeros_like(value)
        self.m = np.zeros_like(value)
        self.v = np.zeros_like(value)

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        return f"Param(shape={self.value.shape}, dtype={self.value.dtype})"


# --------------------------------------------------------------------- conv2d

def _im2col(x, kh, kw, stride, padding):
    if padding:
        x = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    win = sliding_window_view(x, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride]
    n, c, ho, wo = win.shape[:4]
    cols = win.transpose(0, 1, 4, 5, 2, 3).reshape(n, c * kh * kw, ho * wo)
    return cols, ho, wo


def conv2d_forward(x, w, b, stride: int = 1, padding: int = 0):
    """Cross-correlation of ``x (N,C,H,W)`` with ``w (O,C,kh,kw)`` plus bias."""
    if x.ndim != 4 or w.ndim != 4 or x.shape[1] != w.shape[1]:
        raise ValueError(f"shape mismatch: x {x.shape}, w {w.shape}")
    o, c, kh, kw = w.shape
    if kh == 1 and kw == 1 and stride == 1 and padding == 0:
        n, _, ho, wo = x.shape
        cols = x.reshape(n, c, ho * wo)
    else:
        cols, ho, wo = _im2col(x, kh, kw, stride, padding)
    y = np.matmul(w.reshape(o, -1), cols)
    if b is not None:
        y += b[None, :, None]
    cache = (x.shape, cols, w, stride, padding, b is not None)
    return y.reshape(x.shape[0], o, ho, wo), cache


def conv2d_backward(gy, cache):
    """Returns ``(grad_x, grad_w, grad_b)``; grad_b is None for bias-free convs."""
    xshape, cols, w, stride, padding, has_bias = cache
    n, c, h, wd = xshape
    o, _, kh, kw = w.shape
    ho, wo = gy.shape[2:]
    g = gy.reshape(n, o, ho * wo)
    gw = np.tensordot(g, cols, axes=([0, 2], [0, 2])).reshape(w.shape)
    gb = g.sum(axis=(0, 2)) if has_bias else None
    gcols = np.matmul(w.reshape(o, -1).T, g)
    if kh == 1 and kw == 1 and stride == 1 and padding == 0:
        return gcols.reshape(xshape), gw, gb
    gcols = gcols.reshape(n, c, kh, kw, ho, wo)
    gxp = np.zeros((n, c, h + 2 * padding, wd + 2 * padding), dtype=gy.dtype)
    for i in range(kh):
        for j in range(kw):
            gxp[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride] += gcols[:, :, i, j]
    if padding:
        gxp = gxp[:, :, padding:-padding, padding:-padding]
    return gxp, gw, gb


# -------------------------------------------------------------------- maxpool

def maxpool2d_forward(x, kernel: int = 3, stride: int = 2):
    n, c, h, w = x.shape
    if h < kernel or w < kernel:
        raise ValueError(f"input {h}x{w} smaller than pooling window {kernel}")
    win = sliding_window_view(x, (kernel, kernel), axis=(2, 3))[:, :, ::stride, ::stride]
    ho, wo = win.shape[2:4]
    flat = win.reshape(n, c, ho, wo, kernel * kernel)
    arg = flat.argmax(axis=-1)  # first maximum on ties
    y = np.take_along_axis(flat, arg[..., None], axis=-1)[..., 0]
    # input flat index of every arg
    ky, kx = np.divmod(arg, kernel)
    rows = np.arange(ho)[:, None] * stride + ky
    cols = np.arange(wo)[None, :] * stride + kx
    idx = rows * w + cols
    return y, (x.shape, idx)


def maxpool2d_backward(gy, cache):
    xshape, idx = cache
    n, c, h, w = xshape
    base = (np.arange(n * c) * (h * w)).reshape(n, c, 1, 1)
    gx = np.bincount((idx + base).ravel(), weights=gy.ravel(), minlength=n * c * h * w)
    return gx.astype(gy.dtype).reshape(xshape)


# ------------------------------------------------------------------ batchnorm

def batchnorm_forward(x, gamma, beta, running_mean, running_var, train: bool,
                      momentum: float = 0.9, eps: float = 1e-5):
    """Batch normalization over every axis but 1. Updates running stats in place when training."""
    axes = (0,) + tuple(range(2, x.ndim))
    bshape = (1, -1) + (1,) * (x.ndim - 2)
    if train:
        mu = x.mean(axis=axes)
        var = x.var(axis=axes)
        count = x.size // x.shape[1]
        unbiased = var * (count / max(count - 1, 1))
        running_mean *= momentum
        running_mean += (1 - momentum) * mu
        running_var *= momentum
        running_var += (1 - momentum) * unbiased
    else:
        mu, var = running_mean, running_var
    inv = (1.0 / np.sqrt(var + eps)).astype(x.dtype)
    xhat = (x - mu.reshape(bshape)) * inv.reshape(bshape)
    y = xhat * gamma.reshape(bshape) + beta.reshape(bshape)
    return y, (xhat, inv, gamma, axes, bshape, train)


def batchnorm_backward(gy, cache):
    """Returns ``(grad_x, grad_gamma, grad_beta)``."""
    xhat, inv, gamma, axes, bshape, train = cache
    gbeta = gy.sum(axis=axes)
    ggamma = (gy * xhat).sum(axis=axes)
    gxhat = gy * gamma.reshape(bshape)
    if not train:
        return gxhat * inv.reshape(bshape), ggamma, gbeta
    m = gy.size // gy.shape[1]
    gx = (inv.reshape(bshape) / m) * (
        m * gxhat
        - gxhat.sum(axis=axes).reshape(bshape)
        - xhat * (gxhat * xhat).sum(axis=axes).reshape(bshape)
    )
    return gx, ggamma, gbeta


# ------------------------------------------------------- small pointwise ops

def relu_forward(x):
    mask = x > 0
    return x * mask, mask


def relu_backward(gy, mask):
    return gy * mask


def linear_forward(x, w, b):
    """``x (N, in) @ w.T (in, out) + b``."""
    if x.shape[1] != w.shape[1]:
        raise ValueError(f"shape mismatch: x {x.shape}, w {w.shape}")
    return x @ w.T + b, (x, w)


def linear_backward(gy, cache):
    x, w = cache
    return gy @ w, gy.T @ x, gy.sum(axis=0)


def sigmoid(z):
    z = np.asarray(z)
    out = np.empty_like(z, dtype=np.result_type(z, np.float32))
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    e = np.exp(z[~pos])
    out[~pos] = e / (1.0 + e)
    return out if out.ndim else out[()]


def sigmoid_backward(gy, p):
    return gy * p * (1 - p)


def bce_loss(p, y, eps: float = BCE_EPS) -> float:
    """Mean binary cross entropy of probabilities ``p`` against 0/1 targets ``y``."""
    p = np.clip(np.asarray(p, dtype=np.float64), eps, 1 - eps)
    y = np.asarray(y, dtype=np.float64)
    return float(-(y * np.log(p) + (1 - y) * np.log(1 - p)).mean())


def bce_backward(p, y, eps: float = BCE_EPS):
    """Gradient of :func:`bce_loss` with respect to ``p``."""
    p = np.asarray(p)
    y = np.asarray(y, dtype=p.dtype)
    inside = (p > eps) & (p < 1 - eps)
    pc = np.clip(p, eps, 1 - eps)
    return (inside * (pc - y) / (pc * (1 - pc)) / p.size).astype(p.dtype)


# --------------------------------------------------------------------- layers

def kaiming(rng, shape, fan_in, dtype):
    return (rng.standard_normal(shape) * math.sqrt(2.0 / fan_in)).astype(dtype)


class Layer:
    def params(self) -> dict[str, Param]:
        return {}

    def buffers(self) -> dict[str, np.ndarray]:
        return {}


class Conv2d(Layer):
    def __init__(self, cin, cout, k, stride=1, padding=None, rng=None, dtype=DEFAULT_DTYPE):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.stride = stride
        self.padding = k // 2 if padding is None else padding
        self.w = Param(kaiming(rng, (cout, cin, k, k), cin * k * k, dtype))
        self.b = Param(np.zeros(cout, dtype=dtype))
        self._cache = None

    def forward(self, x, train=True):
        y, self._cache = conv2d_forward(x, self.w.value, self.b.value, self.stride, self.padding)
        return y

    def backward(self, gy):
        gx, gw, gb = conv2d_backward(gy, self._cache)
        self.w.grad += gw
        self.b.grad += gb
        return gx

    def params(self):
        return {"weight": self.w, "bias": self.b}


class BatchNorm(Layer):
    def __init__(self, c, dtype=DEFAULT_DTYPE, momentum=0.9, eps=1e-5):
        self.gamma = Param(np.ones(c, dtype=dtype))
        self.beta = Param(np.zeros(c, dtype=dtype))
        self.running_mean = np.zeros(c, dtype=dtype)
        self.running_var = np.ones(c, dtype=dtype)
        self.momentum, self.eps = momentum, eps

    def forward(self, x, train=True):
        y, self._cache = batchnorm_forward(x, self.gamma.value, self.beta.value, self.running_mean,
                                           self.running_var, train, self.momentum, self.eps)
        return y

    def backward(self, gy):
        gx, gg, gb = batchnorm_backward(gy, self._cache)
        self.gamma.grad += gg
        self.beta.grad += gb
        return gx

    def params(self):
        return {"gamma": self.gamma, "beta": self.beta}

    def buffers(self):
        return {"running_mean": self.running_mean, "running_var": self.running_var}


class ReLU(Layer):
    def forward(self, x, train=True):
        y, self._mask = relu_forward(x)
        return y

    def backward(self, gy):
        return relu_backward(gy, self._mask)


class MaxPool(Layer):
    def __init__(self, kernel=3, stride=2):
        self.kernel, self.stride = kernel, stride

    def forward(self, x, train=True):
        y, self._cache = maxpool2d_forward(x, self.kernel, self.stride)
        return y

    def backward(self, gy):
        return maxpool2d_backward(gy, self._cache)


class Linear(Layer):
    def __init__(self, fin, fout, rng=None, dtype=DEFAULT_DTYPE):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.w = Param(kaiming(rng, (fout, fin), fin, dtype))
        self.b = Param(np.zeros(fout, dtype=dtype))

    def forward(self, x, train=True):
        y, self._cache = linear_forward(x, self.w.value, self.b.value)
        return y

    def backward(self, gy):
        gx, gw, gb = linear_backward(gy, self._cache)
        self.w.grad += gw
        self.b.grad += gb
        return gx

    def params(self):
        return {"weight": self.w, "bias": self.b}


def zero_grad(params):
    for p in params:
        p.grad[...] = 0


class Adam:
    """Adam with bias correction; weight decay is added to the gradient before the moments."""

    def __init__(self, params, lr=4e-4, weight_decay=1e-5, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = [p for p in params if p.trainable]
        self.lr, self.weight_decay = lr, weight_decay
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.t = 0

    def step(self):
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for p in self.params:
            g = p.grad + self.weight_decay * p.value if self.weight_decay else p.grad
            p.m *= self.beta1
            p.m += (1 - self.beta1) * g
            p.v *= self.beta2
            p.v += (1 - self.beta2) * g * g
            update = self.lr * (p.m / c1) / (np.sqrt(p.v / c2) + self.eps)
            p.value -= update.astype(p.value.dtype)


def adam_step(params, lr, weight_decay=0.0, beta1=0.9, beta2=0.999, eps=1e-8, t=1):
    """One functional Adam update at step ``t`` (1-based) on a list of :class:`Param`."""
    opt = Adam(params, lr, weight_decay, beta1, beta2, eps)
    opt.t = t - 1
    opt.step()


# ---------------------------------------------------------------- persistence

MAGIC = b"CVPT"
FORMAT_VERSION = 1


def save_tensors(path, tensors: dict[str, np.ndarray], meta: dict | None = None):
    """Write tensors as ``MAGIC | u64 header length | JSON header | raw little-endian buffers``.

    The header lists ``name, shape, dtype, offset, nbytes`` per tensor; offsets
    are relative to the first byte after the header. Output is byte-for-byte
    reproducible for identical inputs.
    """
    entries, blobs, offset = [], [], 0
    for name, arr in tensors.items():
        arr = np.asarray(arr, order="C")
        le = arr.astype(arr.dtype.newbyteorder("<"), copy=False)
        raw = le.tobytes()
        entries.append({"name": name, "shape": list(arr.shape), "dtype": le.dtype.str,
                        "offset": offset, "nbytes": len(raw)})
        blobs.append(raw)
        offset += len(raw)
    header = json.dumps({"version": FORMAT_VERSION, "tensors": entries, "meta": meta or {}},
                        sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<Q", len(header)))
        fh.write(header)
        for raw in blobs:
            fh.write(raw)


def load_tensors(path) -> tuple[dict[str, np.ndarray], dict]:
    data = Path(path).read_bytes()
    if data[:4] != MAGIC:
        raise ValueError(f"{path}: not a tensor file")
    (hlen,) = struct.unpack("<Q", data[4:12])
    header = json.loads(data[12:12 + hlen])
    if header.get("version") != FORMAT_VERSION:
        raise ValueError(f"{path}: unsupported version {header.get('version')}")
    base = 12 + hlen
    out = {}
    for e in header["tensors"]:
        start = base + e["offset"]
        arr = np.frombuffer(data[start:start + e["nbytes"]], dtype=np.dtype(e["dtype"]))
        out[e["name"]] = arr.reshape(e["shape"]).astype(np.dtype(e["dtype"]).newbyteorder("="))
    return out, header["meta"]
