"""Candidate classifier: a small strided backbone plus the conic head.

The head takes the backbone feature map and one candidate direction and
predicts, for every threshold in ``thresholds``, the probability that a true
vanishing point lies within that angle of the candidate. Backbone features
are computed once per image and shared by all of that image's candidates.

With ``conic=False`` every conic convolution becomes a plain 3x3
convolution and the candidate direction is appended to the head input as
three constant channels instead (the CLS ablation).
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .conic import ConicConv, FrameSet
from .geometry import CameraIntrinsics, canonicalize, direction_to_vp_far
from .nn import (BatchNorm, Conv2d, Linear, MaxPool, ReLU, bce_backward, bce_loss, load_tensors,
                 save_tensors, sigmoid, sigmoid_backward)


@dataclass
class ModelConfig:
    thresholds: list[float]
    image_size: int = 128
    in_channels: int = 1
    backbone_channels: int = 32
    feature_channels: int = 64
    reduce_channels: int = 32
    conic_channels: tuple[int, ...] = (32, 64, 128, 256)
    fc_channels: int = 64
    conic: bool = True
    seed: int = 0
    dtype: str = "float32"
    extra: dict = field(default_factory=dict)

    @property
    def R(self) -> int:
        return len(self.thresholds)


class VpsModel:
    """Backbone + conic convolutional head with hand-written backward."""

    STRIDE = 4

    def __init__(self, cfg: ModelConfig, workers: int = 1):
        self.cfg = cfg
        self.workers = workers
        dt = np.dtype(cfg.dtype)
        rng = np.random.default_rng(cfg.seed)
        cb, cf = cfg.backbone_channels, cfg.feature_channels
        self.backbone = [
            Conv2d(cfg.in_channels, cb, 7, stride=2, rng=rng, dtype=dt), BatchNorm(cb, dt), ReLU(),
            Conv2d(cb, cf, 3, stride=2, rng=rng, dtype=dt), BatchNorm(cf, dt), ReLU(),
            Conv2d(cf, cf, 3, rng=rng, dtype=dt), BatchNorm(cf, dt), ReLU(),
            Conv2d(cf, cf, 3, rng=rng, dtype=dt), BatchNorm(cf, dt), ReLU(),
        ]
        # the plain-conv ablation spends 3 reduced channels on the candidate direction
        cr = cfg.reduce_channels - (0 if cfg.conic else 3)
        self.reduce = [Conv2d(cf, cr, 1, rng=rng, dtype=dt), BatchNorm(cr, dt), ReLU()]
        self.stages = []
        cin = cfg.reduce_channels
        for cout in cfg.conic_channels:
            conv = (ConicConv(cin, cout, rng=rng, dtype=dt, workers=workers) if cfg.conic
                    else Conv2d(cin, cout, 3, rng=rng, dtype=dt))
            self.stages.append([conv, BatchNorm(cout, dt), ReLU(), MaxPool(3, 2)])
            cin = cout
        self._dtype = dt
        side = self.feature_side(cfg.image_size)
        for _ in self.stages:
            side = (side - 3) // 2 + 1
        if side < 1:
            raise ValueError(f"image size {cfg.image_size} too small for {len(self.stages)} stages")
        flat = cfg.conic_channels[-1] * side * side
        self.fc = [Linear(flat, cfg.fc_channels, rng, dt), BatchNorm(cfg.fc_channels, dt), ReLU(),
                   Linear(cfg.fc_channels, cfg.R, rng, dt)]

    @staticmethod
    def feature_side(image_size: int) -> int:
        s = (image_size - 1) // 2 + 1
        return (s - 1) // 2 + 1

    # ------------------------------------------------------------ bookkeeping
    def _named_layers(self):
        yield from (("backbone.%d" % i, l) for i, l in enumerate(self.backbone))
        yield from (("reduce.%d" % i, l) for i, l in enumerate(self.reduce))
        for s, stage in enumerate(self.stages):
            yield from (("stage%d.%d" % (s, i), l) for i, l in enumerate(stage))
        for i, l in enumerate(self.fc):
            yield "fc.%d" % i, l

    def named_params(self):
        out = {}
        for name, layer in self._named_layers():
            for pname, p in layer.params().items():
                out[f"{name}.{pname}"] = p
        return out

    def params(self):
        return list(self.named_params().values())

    def num_params(self) -> int:
        return int(sum(p.value.size for p in self.params()))

    def state_dict(self):
        out = {k: p.value for k, p in self.named_params().items()}
        for name, layer in self._named_layers():
            for bname, b in layer.buffers().items():
                out[f"{name}.{bname}"] = b
        return out

    def zero_grad(self):
        for p in self.params():
            p.grad[...] = 0

    # ---------------------------------------------------------------- forward
    def backbone_forward(self, images, train=False):
        """``(N, C, S, S)`` images to ``(N, feature_channels, S/4, S/4)`` features."""
        images = np.asarray(images, dtype=self._dtype)
        if images.ndim != 4 or images.shape[2] != images.shape[3]:
            raise ValueError(f"expected square NCHW images, got {images.shape}")
        x = images
        if images.shape[2] != self.cfg.image_size:
            raise ValueError(f"model expects {self.cfg.image_size}px images, got {images.shape[2]}")
        for layer in self.backbone:
            x = layer.forward(x, train)
        return x

    def backbone_backward(self, g):
        for layer in reversed(self.backbone):
            g = layer.backward(g)
        return g

    def candidate_points(self, directions, K: CameraIntrinsics):
        """Image points of candidate directions; ideal points are pushed far away."""
        return np.array([direction_to_vp_far(d, K) for d in np.atleast_2d(directions)])

    def _frames(self, vps, hw):
        """Frames per stage: feature-level coordinates are u / 4, each 3/2 pool maps u -> (u - 1) / 2."""
        frames = []
        lv = np.asarray(vps, dtype=np.float64) / self.STRIDE
        s = hw
        for _ in self.stages:
            frames.append(FrameSet(s, s, lv))
            lv = (lv - 1.0) / 2.0
            s = (s - 3) // 2 + 1
        return frames

    def head_forward(self, features, directions, K: CameraIntrinsics, image_index=None, train=False):
        """Probabilities ``(M, R)`` for ``M`` candidate directions.

        ``features`` is ``(B, C, h, w)``; candidate ``m`` reads the map
        ``image_index[m]`` (default: all from image 0).
        """
        directions = canonicalize(np.atleast_2d(directions))
        m = len(directions)
        if image_index is None:
            image_index = np.zeros(m, dtype=np.int64)
        image_index = np.asarray(image_index)
        x = features
        for layer in self.reduce:
            x = layer.forward(x, train)
        x = x[image_index]
        if not self.cfg.conic:
            hw = x.shape[-2:]
            planes = np.broadcast_to(directions.astype(self._dtype)[:, :, None, None], (m, 3) + hw)
            x = np.concatenate([x, planes], axis=1)
        frames = self._frames(self.candidate_points(directions, K), features.shape[-1]) if self.cfg.conic else None
        for s, stage in enumerate(self.stages):
            conv, *rest = stage
            x = conv.forward(x, frames[s], train) if self.cfg.conic else conv.forward(x, train)
            for layer in rest:
                x = layer.forward(x, train)
        self._pre_flat = x.shape
        x = x.reshape(m, -1)
        for layer in self.fc:
            x = layer.forward(x, train)
        p = sigmoid(x)
        self._head_state = (image_index, features.shape, p)
        return p

    def head_backward(self, gp):
        """Backprop ``dL/dp`` through the head; returns ``dL/dfeatures``."""
        image_index, fshape, p = self._head_state
        g = sigmoid_backward(gp, p)
        for layer in reversed(self.fc):
            g = layer.backward(g)
        g = g.reshape(self._pre_flat)
        for s in reversed(range(len(self.stages))):
            conv, *rest = self.stages[s]
            for layer in reversed(rest):
                g = layer.backward(g)
            g = conv.backward(g)
        if not self.cfg.conic:
            g = g[:, :-3]
        gr = np.zeros((fshape[0],) + g.shape[1:], dtype=g.dtype)
        np.add.at(gr, image_index, g)
        for layer in reversed(self.reduce):
            gr = layer.backward(gr)
        return gr

    def forward(self, images, directions, K, image_index=None, train=False):
        return self.head_forward(self.backbone_forward(images, train), directions, K, image_index, train)

    # ------------------------------------------------------------ persistence
    def save(self, path):
        """Weights in the tensor file format plus a ``.json`` sidecar with the configuration."""
        path = Path(path)
        meta = {"model": asdict(self.cfg)}
        save_tensors(path, self.state_dict(), meta)
        sidecar = dict(meta["model"])
        sidecar.update({"R": self.cfg.R, "intrinsics_convention":
                        "pixel centers on integers, origin top-left, v downward"})
        path.with_suffix(path.suffix + ".json").write_text(json.dumps(sidecar, indent=2, sort_keys=True) + "\n")

    @classmethod
    def load(cls, path, workers: int = 1):
        tensors, meta = load_tensors(path)
        m = dict(meta["model"])
        m["conic_channels"] = tuple(m["conic_channels"])
        model = cls(ModelConfig(**m), workers=workers)
        named = model.named_params()
        for name, layer in model._named_layers():
            for bname, buf in layer.buffers().items():
                buf[...] = tensors[f"{name}.{bname}"]
        for k, p in named.items():
            p.value[...] = tensors[k]
        return model


def training_step(model: VpsModel, batch, K: CameraIntrinsics) -> float:
    """Forward + backward on ``batch = [(image (C,S,S), [CandidateLabel, ...]), ...]``.

    Returns the mean binary cross entropy over candidates and thresholds.
    Gradients are accumulated into the model parameters.
    """
    if not batch:
        raise ValueError("empty batch")
    images = np.stack([np.asarray(img) for img, _ in batch])
    dirs, labels, index = [], [], []
    for i, (_, cands) in enumerate(batch):
        for c in cands:
            dirs.append(c.direction)
            labels.append(c.labels)
            index.append(i)
    if not dirs:
        raise ValueError("batch has no candidates")
    y = np.asarray(labels, dtype=np.float64)
    feats = model.backbone_forward(images, train=True)
    p = model.head_forward(feats, np.array(dirs), K, np.array(index), train=True)
    loss = bce_loss(p, y)
    gfeat = model.head_backward(bce_backward(p, y))
    model.backbone_backward(gfeat)
    return loss
