"""Command line entry point: ``conicvp <subcommand> ...``.

Subcommands: ``config`` (print defaults), ``synth``, ``train``, ``detect``,
``eval``, ``sample`` and ``bench``. Failures exit non-zero with a single
``error: <kind>: <message>`` line on stderr.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import sys
from pathlib import Path

import numpy as np
from PIL import Image

from .config import ConfigError, RunConfig
from .evaluation import AACurve, summarize, write_curve_csv
from .geometry import direction_to_vp
from .inference import detect
from .network import VpsModel
from .sphere_sampling import SphericalCap, fibonacci_cap_angles, fibonacci_cap_sample
from .synth import Dataset, generate_dataset, normalize, split_ids
from .training import train

log = logging.getLogger("conicvp")


class CliError(Exception):
    def __init__(self, kind, msg):
        super().__init__(msg)
        self.kind = kind


def _config(args) -> RunConfig:
    return RunConfig.load(args.config, args.set or ())


def cmd_config(args):
    sys.stdout.write(_config(args).dump())


def cmd_synth(args):
    cfg = _config(args)
    out = generate_dataset(cfg.scene_spec(), args.count, args.out)
    log.info("wrote %d samples to %s", args.count, out)


def _load_dataset(path) -> Dataset:
    try:
        return Dataset(path)
    except (ValueError, OSError) as e:
        raise CliError("dataset", str(e)) from e


def cmd_train(args):
    cfg = _config(args)
    ds = _load_dataset(args.dataset)
    if ds.index["image_size"] != cfg.image_size:
        raise CliError("config", f"dataset images are {ds.index['image_size']}px, config says {cfg.image_size}")
    train_ids, _ = split_ids(ds.ids, cfg.val_fraction, cfg.data_seed)
    images, gts = ds.load_all(train_ids)
    model = VpsModel(cfg.model_config(), workers=cfg.worker_count())
    hist = train(model, images, gts, ds.K, cfg.train_config(), log_path=cfg.train_log or None)
    model.save(args.out)
    log.info("saved %s after %d epochs, final loss %.4f", args.out, len(hist), hist[-1]["loss"] if hist else float("nan"))


def _load_model(path, cfg):
    try:
        model = VpsModel.load(path, workers=cfg.worker_count())
    except (OSError, ValueError, KeyError) as e:
        raise CliError("model", f"cannot load {path}: {e}") from e
    if model.cfg.R != cfg.R:
        raise CliError("config", f"model was trained with R={model.cfg.R} but config has R={cfg.R}")
    return model


def _prediction(sid, result, K):
    pts = [direction_to_vp(d, K) for d in result.directions]
    return {"image_id": sid,
            "directions": [[float(c) for c in d] for d in result.directions],
            "image_points": [None if p is None else [float(c) for c in p] for p in pts],
            "scores": [float(s) for s in result.scores]}


def cmd_detect(args):
    cfg = _config(args)
    model = _load_model(args.model, cfg)
    search = cfg.search_config()
    if args.dataset:
        ds = _load_dataset(args.dataset)
        ids = ds.ids
        if args.split != "all":
            tr, va = split_ids(ds.ids, cfg.val_fraction, cfg.data_seed)
            ids = tr if args.split == "train" else va
        if args.limit:
            ids = ids[:args.limit]
        out = [_prediction(sid, detect(model, ds.image(sid), ds.K, search), ds.K) for sid in ids]
    else:
        if not args.image:
            raise CliError("usage", "detect needs an image path or --dataset")
        try:
            with Image.open(args.image) as im:
                img = normalize(np.asarray(im.convert("L")))
        except OSError as e:
            raise CliError("io", f"cannot read image {args.image}: {e}") from e
        if img.shape[1:] != (cfg.image_size, cfg.image_size):
            raise CliError("config", f"image is {img.shape[2]}x{img.shape[1]}, model expects {cfg.image_size}")
        K = cfg.intrinsics()
        out = _prediction(Path(args.image).stem, detect(model, img, K, search), K)
    text = json.dumps(out, indent=1)
    if args.out:
        Path(args.out).write_text(text + "\n")
    else:
        sys.stdout.write(text + "\n")


def cmd_eval(args):
    cfg = _config(args)
    ds = _load_dataset(args.dataset)
    try:
        preds = json.loads(Path(args.predictions).read_text())
    except (OSError, json.JSONDecodeError) as e:
        raise CliError("io", f"cannot read predictions {args.predictions}: {e}") from e
    if isinstance(preds, dict):
        preds = [preds]
    known = set(ds.ids)
    p_list, g_list = [], []
    for p in preds:
        if p.get("image_id") not in known:
            raise CliError("predictions", f"unknown image_id {p.get('image_id')!r}")
        p_list.append(np.array(p["directions"], dtype=np.float64).reshape(-1, 3))
        g_list.append(ds.directions(p["image_id"]))
    curve = AACurve.from_predictions(p_list, g_list)
    summary = summarize(curve, cfg.aa_thresholds)
    out = Path(args.out_dir) if args.out_dir else None
    if out:
        out.mkdir(parents=True, exist_ok=True)
        write_curve_csv(curve, out / "curve.csv", max_deg=max(cfg.aa_thresholds))
        (out / "summary.json").write_text(json.dumps(summary, indent=1, sort_keys=True) + "\n")
    sys.stdout.write(json.dumps(summary, sort_keys=True) + "\n")


def cmd_sample(args):
    center = np.array(args.center, dtype=np.float64)
    gamma = math.radians(args.gamma)
    cap = SphericalCap(center, gamma)
    pts = fibonacci_cap_sample(cap, args.N)
    phi, theta = fibonacci_cap_angles(args.N, gamma)
    sys.stdout.write("n,x,y,z,phi,theta\n")
    for i, (p, f, t) in enumerate(zip(pts, phi, theta)):
        sys.stdout.write(f"{i},{p[0]:.12g},{p[1]:.12g},{p[2]:.12g},{f:.12g},{t:.12g}\n")


def cmd_bench(args):
    from .bench import bench, rows_to_csv
    shape = tuple(int(s) for s in args.shape.split("x"))
    if len(shape) != 4:
        raise CliError("usage", "--shape must look like NxCxHxW")
    workers = sorted({1, *args.workers})
    sys.stdout.write(rows_to_csv(bench(shape, workers, repeat=args.repeat)))


def build_parser():
    p = argparse.ArgumentParser(prog="conicvp", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="cmd", required=True)

    def with_config(sp):
        sp.add_argument("--config", help="key = value config file")
        sp.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config key")
        return sp

    with_config(sub.add_parser("config", help="print the default configuration")).set_defaults(fn=cmd_config)

    sp = with_config(sub.add_parser("synth", help="generate a synthetic dataset"))
    sp.add_argument("--count", type=int, required=True)
    sp.add_argument("--out", required=True)
    sp.set_defaults(fn=cmd_synth)

    sp = with_config(sub.add_parser("train", help="train a model"))
    sp.add_argument("--dataset", required=True)
    sp.add_argument("--out", required=True, help="model file")
    sp.set_defaults(fn=cmd_train)

    sp = with_config(sub.add_parser("detect", help="detect vanishing points"))
    sp.add_argument("image", nargs="?")
    sp.add_argument("--model", required=True)
    sp.add_argument("--dataset")
    sp.add_argument("--split", choices=("all", "train", "val"), default="val")
    sp.add_argument("--limit", type=int, default=0)
    sp.add_argument("--out")
    sp.set_defaults(fn=cmd_detect)

    sp = with_config(sub.add_parser("eval", help="angle accuracy of predictions"))
    sp.add_argument("--predictions", required=True)
    sp.add_argument("--dataset", required=True)
    sp.add_argument("--out-dir")
    sp.set_defaults(fn=cmd_eval)

    sp = sub.add_parser("sample", help="dump a Fibonacci cap lattice as CSV")
    sp.add_argument("--N", type=int, default=64)
    sp.add_argument("--gamma", type=float, default=90.0, help="cap polar angle in degrees")
    sp.add_argument("--center", type=float, nargs=3, default=(0.0, 0.0, 1.0))
    sp.set_defaults(fn=cmd_sample)

    sp = sub.add_parser("bench", help="reference vs fast conic kernel throughput")
    sp.add_argument("--shape", default="1x64x64x64")
    sp.add_argument("--workers", type=int, nargs="+", default=[8])
    sp.add_argument("--repeat", type=int, default=3)
    sp.set_defaults(fn=cmd_bench)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s", stream=sys.stderr)
    try:
        args.fn(args)
    except CliError as e:
        print(f"error: {e.kind}: {e}", file=sys.stderr)
        return 2
    except ConfigError as e:
        print(f"error: config: {e}", file=sys.stderr)
        return 2
    except (OSError, ValueError) as e:
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
