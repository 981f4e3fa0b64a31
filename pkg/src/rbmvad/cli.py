"""Command-line interface: ``rbmvad {synth,train,detect,eval,bench}``.

Exit status is 0 on success, 2 on usage errors and 1 on runtime errors.
"""

from __future__ import annotations

import argparse
import csv
import logging
import sys
import time
from pathlib import Path

import numpy as np

from .config import RunConfig
from .dataset import DatasetLayout, load_dataset
from .detector import calibrate_beta, detect_stream, score_chunk, train_detector
from .evaluation import (
    dual_pixel_eval,
    frame_level_eval,
    pixel_level_eval,
    sweep_detections,
    sweep_thresholds,
    write_metrics_csv,
    write_roc_csv,
)
from .graymap import to_gray, write_pgm
from .modelio import load_model, save_model
from .synth import BackgroundSpec, Plant, render, synth_generate

log = logging.getLogger("rbmvad")


def _load_config(args) -> RunConfig:
    cfg = RunConfig()
    if getattr(args, "config", None):
        cfg = RunConfig.parse(Path(args.config).read_text())
    overrides = []
    for item in getattr(args, "set", None) or []:
        if "=" not in item:
            raise ValueError(f"--set expects key=value, got {item!r}")
        overrides.append(tuple(s.strip() for s in item.split("=", 1)))
    if getattr(args, "seed", None) is not None:
        overrides.append(("seed", str(args.seed)))
    return cfg.with_overrides(overrides)


def cmd_synth(args) -> int:
    spec = BackgroundSpec(args.height, args.width, args.texture_seed, args.mean, args.contrast,
                          args.cell, args.detail, args.noise, args.drift)
    plants = [Plant.parse(p) for p in args.plant or []]
    synth_generate(args.out, args.frames, spec, plants, args.seed)
    print(f"wrote {args.frames} frames to {args.out}")
    return 0


def cmd_train(args) -> int:
    cfg = _load_config(args)
    data = load_dataset(DatasetLayout.from_root(args.data), cfg.frame_shape)
    log.info("training on %d frames of %s", len(data), data.frames.shape[1:])
    model = train_detector(data.frames, cfg)
    if args.validation:
        val = load_dataset(DatasetLayout.from_root(args.validation), cfg.frame_shape)
        normal = val.frames if val.labels is None else val.frames[val.labels == 0]
        model.beta = calibrate_beta(normal, model, args.beta_quantile)
        log.info("beta calibrated to %.6g", model.beta)
    save_model(args.model, model)
    print(f"saved model with {model.n_rbms} cluster RBMs to {args.model}")
    return 0


def cmd_detect(args) -> int:
    cfg = _load_config(args)
    model = load_model(args.model, (cfg.patch_h, cfg.patch_w))
    data = load_dataset(DatasetLayout.from_root(args.data), model.frame_shape)
    result = detect_stream(data.frames, model, args.streaming, cfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "scores.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["frame_index", "frame_score", "n_abnormal_pixels"])
        for t, (score, z) in enumerate(zip(result.frame_scores, result.indicator)):
            w.writerow([t, repr(float(score)), int(z.sum())])
    np.save(out / "errors.npy", result.errors)
    np.save(out / "detections.npy", result.indicator.astype(np.uint8))
    meta = cfg.replace(beta=model.beta, gamma=model.gamma,
                       resize_h=model.frame_shape[0], resize_w=model.frame_shape[1])
    (out / "detect.cfg").write_text(meta.emit())
    if args.overlays:
        (out / "overlays").mkdir(exist_ok=True)
        for t, (frame, z) in enumerate(zip(data.frames, result.indicator)):
            write_pgm(out / "overlays" / f"{t:06d}.pgm", to_gray(np.where(z, 1.0, 0.5 * frame)))
    print(f"scored {len(data)} frames, {int(result.indicator.any(axis=(1, 2)).sum())} with detections")
    return 0


def cmd_eval(args) -> int:
    det = Path(args.detections)
    errors = np.load(det / "errors.npy")
    cfg = RunConfig.parse((det / "detect.cfg").read_text())
    data = load_dataset(DatasetLayout.from_root(args.data), errors.shape[1:])
    if data.labels is None:
        raise ValueError("dataset has no ground truth (labels.txt or masks/)")
    if len(data) != errors.shape[0]:
        raise ValueError(f"{len(data)} ground-truth frames but {errors.shape[0]} scored frames")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    rows = []
    curve, auc, eer = frame_level_eval(errors, data.labels)
    write_roc_csv(out / "roc_frame.csv", curve)
    rows.append(("frame", auc, eer))
    if data.masks is not None:
        thresholds = sweep_thresholds(errors, args.thresholds)
        dets = list(sweep_detections(errors, thresholds, cfg.chunk_length, cfg.gamma))
        curve, auc, eer = pixel_level_eval(dets, data.masks)
        write_roc_csv(out / "roc_pixel.csv", curve)
        rows.append(("pixel", auc, eer))
        curve, auc = dual_pixel_eval(dets, data.masks, args.alpha)
        write_roc_csv(out / "roc_dual_pixel.csv", curve)
        rows.append(("dual_pixel", auc, None))
    write_metrics_csv(out / "metrics.csv", rows)
    for level, auc, eer in rows:
        print(f"{level:<11} AUC {auc:.4f}" + ("" if eer is None else f"  EER {eer:.4f}"))
    return 0


def cmd_bench(args) -> int:
    from .patches import extract_patches, rescale_frame
    from .detector import connected_components_3d

    cfg = _load_config(args).replace(resize_h=args.height, resize_w=args.width)
    spec = BackgroundSpec(args.height, args.width)
    frames, _, _ = render(args.frames, spec, [], cfg.seed)
    timings = []

    def timed(name, fn):
        start = time.perf_counter()
        value = fn()
        timings.append((name, time.perf_counter() - start))
        return value

    sc = cfg.scale_config()
    timed("rescale", lambda: [rescale_frame(frames, r) for r in sc.ratios])
    timed("extract_patches", lambda: [extract_patches(frames, sc, r) for r in sc.ratios])
    model = timed("train", lambda: train_detector(frames, cfg))
    chunk = frames[:cfg.chunk_length]
    errors, z = timed("score_chunk", lambda: score_chunk(chunk, model))
    timed("connected_components", lambda: connected_components_3d(z))
    timed("detect_offline", lambda: detect_stream(frames, model, False, cfg))
    timed("detect_streaming", lambda: detect_stream(frames, model, True, cfg))
    print("stage,seconds")
    for name, secs in timings:
        print(f"{name},{secs:.4f}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="rbmvad", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_config(p):
        p.add_argument("--config", help="key=value configuration file")
        p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one setting")
        p.add_argument("--seed", type=int)

    p = sub.add_parser("synth", help="write a synthetic dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--frames", type=int, default=100)
    p.add_argument("--height", type=int, default=160)
    p.add_argument("--width", type=int, default=240)
    p.add_argument("--seed", type=int, default=0, help="noise stream seed")
    p.add_argument("--texture-seed", type=int, default=0)
    p.add_argument("--mean", type=float, default=0.4)
    p.add_argument("--contrast", type=float, default=0.3)
    p.add_argument("--cell", type=int, default=16)
    p.add_argument("--detail", type=float, default=0.05)
    p.add_argument("--noise", type=float, default=0.02)
    p.add_argument("--drift", type=float, default=0.0, help="brightness added per frame")
    p.add_argument("--plant", action="append", metavar="START:END:TOP:LEFT:H:W[:I]")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train a detector model")
    p.add_argument("--data", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--validation", help="normal frames used to calibrate beta")
    p.add_argument("--beta-quantile", type=float, default=0.999)
    add_config(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("detect", help="score a dataset with a trained model")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--streaming", action="store_true", help="update RBMs after every chunk")
    p.add_argument("--overlays", action="store_true", help="write per-frame overlay graymaps")
    add_config(p)
    p.set_defaults(func=cmd_detect)

    p = sub.add_parser("eval", help="frame, pixel and dual-pixel ROC evaluation")
    p.add_argument("--detections", required=True, help="output directory of 'detect'")
    p.add_argument("--data", required=True, help="dataset with labels and masks")
    p.add_argument("--out", required=True)
    p.add_argument("--alpha", type=float, default=0.05)
    p.add_argument("--thresholds", type=int, default=100)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("bench", help="time each pipeline stage on synthetic data")
    p.add_argument("--frames", type=int, default=40)
    p.add_argument("--height", type=int, default=120)
    p.add_argument("--width", type=int, default=180)
    add_config(p)
    p.set_defaults(func=cmd_bench)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ValueError, OSError, FloatingPointError) as exc:
        print(f"rbmvad {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
