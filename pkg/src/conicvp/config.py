"""Flat ``key = value`` run configuration.

Every tunable has a typed default. Files may contain ``#`` comments; unknown
keys are rejected so typos never pass silently.
"""

from __future__ import annotations

import os
from dataclasses import dataclass
from pathlib import Path

from .geometry import CameraIntrinsics
from .inference import SearchConfig
from .network import ModelConfig
from .synth import SceneSpec
from .training import TrainConfig


class ConfigError(ValueError):
    pass


def _ints(s):
    return tuple(int(x) for x in str(s).replace(" ", "").split(",") if x)


def _floats(s):
    return tuple(float(x) for x in str(s).replace(" ", "").split(",") if x)


def _bool(s):
    if isinstance(s, bool):
        return s
    v = str(s).strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


# key: (type parser, default, comment)
SCHEMA = {
    # data
    "image_size": (int, 128, "square image side in pixels"),
    "focal": (float, 0.0, "focal length in pixels; 0 means half the image width"),
    "n_vps": (int, 1, "vanishing points per synthetic scene"),
    "orthogonal": (_bool, False, "draw mutually orthogonal vanishing directions"),
    "lines_per_vp": (int, 8, "structural segments per vanishing point"),
    "clutter_lines": (int, 4, "randomly oriented distractor segments"),
    "line_width": (float, 1.5, "stroke width in pixels"),
    "noise": (float, 0.05, "additive Gaussian pixel noise (image range [0, 1])"),
    "data_seed": (int, 0, "seed for scene generation"),
    "val_fraction": (float, 0.1, "fraction of samples held out by id hash"),
    # model
    "backbone_channels": (int, 32, "channels of the stride-2 7x7 stem"),
    "feature_channels": (int, 64, "backbone output channels"),
    "reduce_channels": (int, 32, "1x1 reduction width at the head input"),
    "conic_channels": (_ints, (32, 64, 128, 256), "output channels of the four conic stages"),
    "fc_channels": (int, 64, "hidden width of the fully connected layers"),
    "conic": (_bool, True, "false replaces conic convolutions by plain ones (CLS ablation)"),
    # search
    "R": (int, 4, "coarse-to-fine rounds (reference setting 4 for single-VP natural scenes)"),
    "N_d": (int, 64, "samples per round (reference setting)"),
    "rho": (float, 1.2, "cap shrink factor (reference setting)"),
    "K": (int, 1, "vanishing points returned per image"),
    "covering_grid": (int, 256, "grid multiplier for the covering-angle brute force"),
    # training
    "n_pos": (int, 1, "positive candidates per ground truth (reference setting)"),
    "n_neg": (int, 1, "negative candidates per ground truth (reference setting)"),
    "n_rand": (int, 3, "hemisphere-uniform candidates per image (reference setting)"),
    "lr": (float, 4e-4, "Adam learning rate (reference setting)"),
    "weight_decay": (float, 1e-5, "L2 weight decay (reference setting)"),
    "adam_beta1": (float, 0.9, "Adam first-moment decay"),
    "adam_beta2": (float, 0.999, "Adam second-moment decay"),
    "adam_eps": (float, 1e-8, "Adam epsilon"),
    "epochs": (int, 10, "training epochs"),
    "lr_decay_epoch": (int, -1, "divide lr by 10 from this epoch on; -1 disables"),
    "batch_size": (int, 8, "images per optimization step"),
    "time_budget": (float, 0.0, "stop training after this many seconds; 0 disables"),
    "seed": (int, 0, "seed for weight init and candidate sampling"),
    # runtime / evaluation
    "workers": (int, 0, "kernel worker threads; 0 means all available cores"),
    "aa_thresholds": (_floats, (0.2, 0.5, 1.0, 2.0, 10.0), "angle-accuracy thresholds in degrees"),
    "train_log": (str, "", "CSV training log path; empty disables"),
}


@dataclass(frozen=True)
class RunConfig:
    values: dict

    def __getattr__(self, key):
        try:
            return self.values[key]
        except KeyError:
            raise AttributeError(key) from None

    @classmethod
    def defaults(cls):
        return cls({k: v[1] for k, v in SCHEMA.items()})

    @classmethod
    def load(cls, path=None, overrides=()):
        vals = cls.defaults().values.copy()
        if path is not None:
            try:
                text = Path(path).read_text()
            except OSError as e:
                raise ConfigError(f"cannot read config {path}: {e}") from e
            for lineno, line in enumerate(text.splitlines(), 1):
                line = line.split("#", 1)[0].strip()
                if not line:
                    continue
                if "=" not in line:
                    raise ConfigError(f"{path}:{lineno}: expected key = value")
                k, v = (s.strip() for s in line.split("=", 1))
                vals[k] = _parse(k, v, f"{path}:{lineno}")
        for item in overrides:
            if "=" not in item:
                raise ConfigError(f"--set expects key=value, got {item!r}")
            k, v = (s.strip() for s in item.split("=", 1))
            vals[k] = _parse(k, v, "--set")
        return cls(vals)

    def dump(self) -> str:
        lines = []
        for k, (_, _, comment) in SCHEMA.items():
            v = self.values[k]
            if isinstance(v, tuple):
                v = ",".join(f"{x:g}" if isinstance(x, float) else str(x) for x in v)
            lines.append(f"# {comment}")
            lines.append(f"{k} = {v}")
        return "\n".join(lines) + "\n"

    # ------------------------------------------------------------ views
    def worker_count(self) -> int:
        return self.workers if self.workers > 0 else (len(os.sched_getaffinity(0))
                                                      if hasattr(os, "sched_getaffinity") else os.cpu_count() or 1)

    def intrinsics(self) -> CameraIntrinsics:
        return CameraIntrinsics.for_image(self.image_size, self.image_size, self.focal or None)

    def scene_spec(self) -> SceneSpec:
        return SceneSpec(image_size=self.image_size, focal=self.focal or None, n_vps=self.n_vps,
                         orthogonal=self.orthogonal, lines_per_vp=self.lines_per_vp,
                         clutter_lines=self.clutter_lines, line_width=self.line_width,
                         noise=self.noise, seed=self.data_seed)

    def search_config(self) -> SearchConfig:
        return SearchConfig(R=self.R, N_d=self.N_d, rho=self.rho, K=self.K, covering_grid=self.covering_grid)

    def model_config(self) -> ModelConfig:
        return ModelConfig(thresholds=list(self.search_config().thresholds), image_size=self.image_size,
                           backbone_channels=self.backbone_channels, feature_channels=self.feature_channels,
                           reduce_channels=self.reduce_channels, conic_channels=tuple(self.conic_channels),
                           fc_channels=self.fc_channels, conic=self.conic, seed=self.seed,
                           extra={"rho": self.rho, "N_d": self.N_d})

    def train_config(self) -> TrainConfig:
        return TrainConfig(epochs=self.epochs, batch_size=self.batch_size, lr=self.lr,
                           weight_decay=self.weight_decay,
                           lr_decay_epoch=None if self.lr_decay_epoch < 0 else self.lr_decay_epoch,
                           n_pos=self.n_pos, n_neg=self.n_neg, n_rand=self.n_rand, seed=self.seed,
                           time_budget=self.time_budget or None,
                           adam=(self.adam_beta1, self.adam_beta2, self.adam_eps))


def _parse(key, raw, where):
    if key not in SCHEMA:
        raise ConfigError(f"{where}: unknown config key {key!r}")
    try:
        return SCHEMA[key][0](raw)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"{where}: bad value for {key}: {raw!r} ({e})") from e


__all__ = ["RunConfig", "ConfigError", "SCHEMA"]
