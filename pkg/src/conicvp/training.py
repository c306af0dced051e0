"""Mini-batch training loop for :class:`~conicvp.network.VpsModel`."""

from __future__ import annotations

import csv
import logging
import time
from dataclasses import dataclass

import numpy as np

from .geometry import CameraIntrinsics
from .network import VpsModel, training_step
from .nn import Adam
from .sphere_sampling import sample_training_candidates

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    epochs: int = 10
    batch_size: int = 8
    lr: float = 4e-4
    weight_decay: float = 1e-5
    lr_decay_epoch: int | None = None  # lr /= 10 from this epoch on
    n_pos: int = 1
    n_neg: int = 1
    n_rand: int = 3
    seed: int = 0
    time_budget: float | None = None  # seconds; never start an epoch expected to overrun it
    adam: tuple[float, float, float] = (0.9, 0.999, 1e-8)


def make_candidates(gts, thresholds, cfg: TrainConfig, rng):
    """Candidates for one image at one threshold drawn uniformly from ``thresholds``."""
    gamma = thresholds[rng.integers(len(thresholds))]
    return sample_training_candidates(gts, gamma, cfg.n_pos, cfg.n_neg, cfg.n_rand, rng, thresholds)


def train(model: VpsModel, images, gts, K: CameraIntrinsics, cfg: TrainConfig, log_path=None,
          callback=None):
    """Train in place. ``images`` is ``(N, C, S, S)``, ``gts[i]`` the directions of image i.

    Returns a list of per-epoch ``{"epoch", "loss", "seconds", "lr"}`` records.
    """
    rng = np.random.default_rng(cfg.seed)
    opt = Adam(model.params(), cfg.lr, cfg.weight_decay, *cfg.adam)
    thresholds = list(model.cfg.thresholds)
    n = len(images)
    history = []
    writer = None
    fh = open(log_path, "w", newline="") if log_path else None
    if fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "loss", "seconds", "lr"])
    start = time.perf_counter()
    slowest = 0.0
    try:
        for epoch in range(cfg.epochs):
            opt.lr = cfg.lr * (0.1 if cfg.lr_decay_epoch is not None and epoch >= cfg.lr_decay_epoch else 1.0)
            t0 = time.perf_counter()
            order = rng.permutation(n)
            losses = []
            for b in range(0, n, cfg.batch_size):
                batch = [(images[i], make_candidates(gts[i], thresholds, cfg, rng))
                         for i in order[b:b + cfg.batch_size]]
                model.zero_grad()
                losses.append(training_step(model, batch, K))
                opt.step()
            rec = {"epoch": epoch, "loss": float(np.mean(losses)),
                   "seconds": time.perf_counter() - t0, "lr": opt.lr}
            history.append(rec)
            log.info("epoch %d loss %.4f (%.1fs)", epoch, rec["loss"], rec["seconds"])
            if writer:
                writer.writerow([epoch, f"{rec['loss']:.6f}", f"{rec['seconds']:.2f}", opt.lr])
                fh.flush()
            if callback:
                callback(rec)
            slowest = max(slowest, rec["seconds"])
            if cfg.time_budget is not None and time.perf_counter() - start + slowest > cfg.time_budget:
                log.info("time budget reached after epoch %d", epoch)
                break
    finally:
        if fh:
            fh.close()
    return history
