"""
Train a small detector and look at its errors
=============================================

A few hundred synthetic scenes, one short training run, then the
coarse-to-fine search on held-out images. Expect large errors; this only
shows the moving parts. The CLI runs the full recipe:

    conicvp synth --count 2000 --out data
    conicvp train --dataset data --out model.bin --set epochs=12
    conicvp detect --model model.bin --dataset data --out preds.json
    conicvp eval --predictions preds.json --dataset data
"""

import math
import time

import numpy as np

from conicvp.evaluation import AACurve, summarize
from conicvp.inference import SearchConfig, detect
from conicvp.network import ModelConfig, VpsModel
from conicvp.synth import SceneSpec, generate_scene, normalize, sample_seed, to_uint8
from conicvp.training import TrainConfig, train

spec = SceneSpec()
K = spec.intrinsics
imgs, gts = [], []
for i in range(220):
    img, g = generate_scene(SceneSpec(seed=sample_seed(0, i)))
    imgs.append(normalize(to_uint8(img)))  # same round trip as the PNG files
    gts.append(g)
imgs = np.stack(imgs)
print("images", imgs.shape, "first direction", np.round(gts[0][0], 3))

search = SearchConfig()
model = VpsModel(ModelConfig(thresholds=search.thresholds, backbone_channels=8, feature_channels=16,
                             reduce_channels=8, conic_channels=(8, 16, 32, 64), fc_channels=32))
print("parameters:", model.num_params())

t0 = time.perf_counter()
hist = train(model, imgs[:200], gts[:200], K, TrainConfig(epochs=1, batch_size=8))
print("loss per epoch:", [round(h["loss"], 4) for h in hist], f"({time.perf_counter() - t0:.0f}s)")

preds = []
for i in range(200, 220):
    res = detect(model, imgs[i], K, search)
    preds.append(res.directions)
print("head evaluations per image:", res.evaluations)

summary = summarize(AACurve.from_predictions(preds, gts[200:]))
print({k: round(v, 2) for k, v in summary.items()})
print("final search cap: %.3f deg" % math.degrees(search.cap_angles[-1]))
