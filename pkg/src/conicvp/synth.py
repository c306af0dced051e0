"""Procedural line scenes with exact vanishing points.

Each scene draws, for every vanishing direction, a set of anti-aliased
segments whose supporting lines all pass through that direction's image
point (or run parallel to its ideal direction), then adds randomly oriented
clutter segments and Gaussian pixel noise.

On disk a dataset is::

    index.json               {"version", "count", "image_size", "intrinsics", "spec", "samples": [...]}
    images/000000.png        8-bit grayscale
    labels/000000.json       {"version", "id", "directions", "image_points", "intrinsics", "seed"}
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from .geometry import CameraIntrinsics, canonicalize, direction_to_vp
from .sphere_sampling import sample_hemisphere_uniform

DATASET_VERSION = 1


@dataclass
class SceneSpec:
    image_size: int = 128
    focal: float | None = None  # default: half the image width
    n_vps: int = 1
    orthogonal: bool = False
    lines_per_vp: int = 8
    clutter_lines: int = 4
    line_width: float = 1.5
    intensity: tuple[float, float] = (0.5, 1.0)
    background: float = 0.0
    noise: float = 0.05
    length: tuple[float, float] = (0.25, 0.75)  # fraction of image size
    seed: int = 0

    def __post_init__(self):
        if self.image_size < 64:
            raise ValueError("image_size must be >= 64")
        if not 1 <= self.n_vps <= 3:
            raise ValueError("n_vps must be 1, 2 or 3")
        if min(self.lines_per_vp, self.clutter_lines) < 0 or self.noise < 0:
            raise ValueError("counts and noise must be non-negative")
        self.intensity = tuple(self.intensity)
        self.length = tuple(self.length)

    @property
    def intrinsics(self) -> CameraIntrinsics:
        return CameraIntrinsics.for_image(self.image_size, self.image_size, self.focal)


@dataclass
class Segment:
    p0: np.ndarray
    p1: np.ndarray
    vp: int  # index into the scene's directions, -1 for clutter
    anchor: np.ndarray = field(default=None)


def _render_segment(img, p0, p1, width, value):
    """Alpha-composite an anti-aliased segment; coverage falls off linearly over one pixel."""
    h, w = img.shape
    pad = width / 2 + 1
    x_lo = max(int(math.floor(min(p0[0], p1[0]) - pad)), 0)
    x_hi = min(int(math.ceil(max(p0[0], p1[0]) + pad)), w - 1)
    y_lo = max(int(math.floor(min(p0[1], p1[1]) - pad)), 0)
    y_hi = min(int(math.ceil(max(p0[1], p1[1]) + pad)), h - 1)
    if x_lo > x_hi or y_lo > y_hi:
        return
    ys, xs = np.mgrid[y_lo:y_hi + 1, x_lo:x_hi + 1].astype(np.float64)
    d = p1 - p0
    ll = float(d @ d)
    if ll == 0:
        return
    s = np.clip(((xs - p0[0]) * d[0] + (ys - p0[1]) * d[1]) / ll, 0.0, 1.0)
    dist = np.hypot(xs - (p0[0] + s * d[0]), ys - (p0[1] + s * d[1]))
    alpha = np.clip(width / 2 + 0.5 - dist, 0.0, 1.0)
    patch = img[y_lo:y_hi + 1, x_lo:x_hi + 1]
    patch *= 1 - alpha
    patch += alpha * value


def _directions(spec: SceneSpec, rng) -> np.ndarray:
    if spec.orthogonal:
        q, _ = np.linalg.qr(rng.standard_normal((3, 3)))
        return canonicalize(q.T[:spec.n_vps])
    return sample_hemisphere_uniform(spec.n_vps, rng)


def generate_scene(spec: SceneSpec, return_segments: bool = False):
    """Render one scene. Returns ``(image (1, S, S) float32 in [0, 1], directions (n, 3))``.

    With ``return_segments`` a third element lists the drawn :class:`Segment` s.
    """
    rng = np.random.default_rng(spec.seed)
    s = spec.image_size
    K = spec.intrinsics
    gts = _directions(spec, rng)
    img = np.full((s, s), spec.background, dtype=np.float64)
    segments = []
    lo, hi = spec.length
    for k, d in enumerate(gts):
        vp = direction_to_vp(d, K)
        for _ in range(spec.lines_per_vp):
            anchor = rng.uniform(0, s - 1, size=2)
            if vp is not None and np.hypot(*(vp - anchor)) > 1e-9:
                e = (vp - anchor) / np.hypot(*(vp - anchor))
            else:
                e = np.array([d[0], d[1]]) / np.hypot(d[0], d[1])
            a, b = rng.uniform(lo, hi, size=2) * s / 2
            seg = Segment(anchor - a * e, anchor + b * e, k, anchor)
            segments.append(seg)
            _render_segment(img, seg.p0, seg.p1, spec.line_width, rng.uniform(*spec.intensity))
    for _ in range(spec.clutter_lines):
        anchor = rng.uniform(0, s - 1, size=2)
        ang = rng.uniform(0, math.pi)
        e = np.array([math.cos(ang), math.sin(ang)])
        a, b = rng.uniform(lo, hi, size=2) * s / 2
        seg = Segment(anchor - a * e, anchor + b * e, -1, anchor)
        segments.append(seg)
        _render_segment(img, seg.p0, seg.p1, spec.line_width, rng.uniform(*spec.intensity))
    if spec.noise > 0:
        img += rng.normal(0.0, spec.noise, size=img.shape)
    img = np.clip(img, 0.0, 1.0).astype(np.float32)[None]
    if return_segments:
        return img, gts, segments
    return img, gts


# ------------------------------------------------------------------ datasets

def sample_seed(seed: int, index: int) -> int:
    """Per-sample seed derived from ``(seed, index)``; independent of worker layout."""
    return int(np.random.SeedSequence([seed, index]).generate_state(1, dtype=np.uint32)[0])


def to_uint8(img: np.ndarray) -> np.ndarray:
    return np.round(np.clip(img[0], 0, 1) * 255).astype(np.uint8)


def normalize(u8: np.ndarray) -> np.ndarray:
    """8-bit image to a ``(1, H, W)`` float32 array in [-1, 1]."""
    return (u8.astype(np.float32) / 127.5 - 1.0)[None]


def generate_dataset(template: SceneSpec, count: int, out_dir, seed: int | None = None) -> Path:
    """Write ``count`` scenes plus labels and ``index.json`` under ``out_dir``."""
    out = Path(out_dir)
    seed = template.seed if seed is None else seed
    try:
        (out / "images").mkdir(parents=True, exist_ok=True)
        (out / "labels").mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise OSError(f"cannot create dataset directory {out}: {e}") from e
    K = template.intrinsics
    samples = []
    for i in range(count):
        sid = f"{i:06d}"
        spec = SceneSpec(**{**asdict(template), "seed": sample_seed(seed, i)})
        img, gts = generate_scene(spec)
        img_path = out / "images" / f"{sid}.png"
        lab_path = out / "labels" / f"{sid}.json"
        pts = [direction_to_vp(d, K) for d in gts]
        label = {
            "version": DATASET_VERSION,
            "id": sid,
            "directions": [[float(c) for c in d] for d in gts],
            "image_points": [None if p is None else [float(c) for c in p] for p in pts],
            "intrinsics": K.to_dict(),
            "seed": spec.seed,
        }
        try:
            Image.fromarray(to_uint8(img), mode="L").save(img_path)
            lab_path.write_text(json.dumps(label, indent=1) + "\n")
        except OSError as e:
            raise OSError(f"failed writing sample {sid} to {img_path}: {e}") from e
        samples.append({"id": sid, "image": f"images/{sid}.png", "label": f"labels/{sid}.json"})
    index = {
        "version": DATASET_VERSION,
        "count": count,
        "image_size": template.image_size,
        "intrinsics": K.to_dict(),
        "seed": seed,
        "spec": asdict(template),
        "samples": samples,
    }
    (out / "index.json").write_text(json.dumps(index, indent=1) + "\n")
    return out


class Dataset:
    """Lazily loaded on-disk dataset."""

    def __init__(self, root):
        self.root = Path(root)
        path = self.root / "index.json"
        try:
            self.index = json.loads(path.read_text())
        except (OSError, json.JSONDecodeError) as e:
            raise ValueError(f"malformed dataset index {path}: {e}") from e
        for key in ("version", "samples", "intrinsics", "image_size"):
            if key not in self.index:
                raise ValueError(f"malformed dataset index {path}: missing {key!r}")
        if self.index["version"] != DATASET_VERSION:
            raise ValueError(f"{path}: unsupported dataset version {self.index['version']}")
        self.K = CameraIntrinsics.from_dict(self.index["intrinsics"])
        self.ids = [s["id"] for s in self.index["samples"]]
        self._by_id = {s["id"]: s for s in self.index["samples"]}

    def __len__(self):
        return len(self.ids)

    def image(self, sid) -> np.ndarray:
        with Image.open(self.root / self._by_id[sid]["image"]) as im:
            return normalize(np.asarray(im.convert("L")))

    def label(self, sid) -> dict:
        return json.loads((self.root / self._by_id[sid]["label"]).read_text())

    def directions(self, sid) -> np.ndarray:
        return np.array(self.label(sid)["directions"], dtype=np.float64).reshape(-1, 3)

    def load_all(self, ids=None):
        ids = self.ids if ids is None else ids
        images = np.stack([self.image(i) for i in ids])
        return images, [self.directions(i) for i in ids]


def split_ids(ids, val_fraction: float = 0.1, seed: int = 0):
    """Stable train/val split: a sample is held out iff a hash of ``(seed, id)`` falls below the fraction."""
    train, val = [], []
    for sid in ids:
        h = hashlib.sha256(f"{seed}:{sid}".encode()).digest()
        (val if int.from_bytes(h[:8], "little") / 2 ** 64 < val_fraction else train).append(sid)
    return train, val
