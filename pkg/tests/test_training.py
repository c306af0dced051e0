import csv

import numpy as np

from conicvp.geometry import CameraIntrinsics
from conicvp.network import ModelConfig, VpsModel
from conicvp.training import TrainConfig, make_candidates, train

TH = [0.3, 0.08, 0.02]


def setup(n=6):
    rng = np.random.default_rng(0)
    model = VpsModel(ModelConfig(thresholds=TH, image_size=32, backbone_channels=4, feature_channels=4,
                                 reduce_channels=4, conic_channels=(4, 4), fc_channels=4))
    images = rng.standard_normal((n, 1, 32, 32)).astype(np.float32)
    gts = [np.array([[0, 0, 1.0]])] * n
    return model, images, gts, CameraIntrinsics.for_image(32, 32)


def test_history_log_and_lr_decay(tmp_path):
    model, images, gts, K = setup()
    seen = []
    hist = train(model, images, gts, K, TrainConfig(epochs=3, batch_size=4, lr_decay_epoch=2),
                 log_path=tmp_path / "log.csv", callback=seen.append)
    assert [h["epoch"] for h in hist] == [0, 1, 2] and seen == hist
    assert hist[1]["lr"] == 4e-4 and np.isclose(hist[2]["lr"], 4e-5)
    rows = list(csv.reader(open(tmp_path / "log.csv")))
    assert rows[0] == ["epoch", "loss", "seconds", "lr"] and len(rows) == 4


def test_time_budget_never_starts_an_overrunning_epoch():
    model, images, gts, K = setup()
    hist = train(model, images, gts, K, TrainConfig(epochs=50, batch_size=4, time_budget=1e-3))
    assert len(hist) == 1


def test_same_seed_same_weights():
    a, images, gts, K = setup()
    b, *_ = setup()
    train(a, images, gts, K, TrainConfig(epochs=1, batch_size=4, seed=3))
    train(b, images, gts, K, TrainConfig(epochs=1, batch_size=4, seed=3))
    sa, sb = a.state_dict(), b.state_dict()
    assert all(np.array_equal(sa[k], sb[k]) for k in sa)


def test_make_candidates_uses_one_threshold():
    rng = np.random.default_rng(1)
    cands = make_candidates([np.array([0, 0, 1.0])], TH, TrainConfig(), rng)
    assert len(cands) == 5 and all(c.labels.shape == (3,) for c in cands)
    # the positive draw is inside the chosen cap, hence positive for every larger threshold
    lab = cands[0].labels
    assert lab.any() and list(lab) == sorted(lab, reverse=True)
