"""Command-line entry point: gen | train | infer | eval | plot."""

import argparse
import csv
import math
import os
import sys

import numpy as np
import torch

from . import diffusion, evalmetrics, geometry, pipeline, synthdata
from .config import RunConfig, load_config
from .model import LaneDiffusionModel
from .synthdata import LANE_HALF_WIDTH, LaneScene


def _setup_threads_and_seed(seed: int) -> None:
    threads = os.environ.get("DIFFLANE_THREADS")
    if threads:
        torch.set_num_threads(int(threads))
    torch.manual_seed(seed)


def _load_scene(data_dir: str, rel: str, lanes, cfg: RunConfig) -> LaneScene:
    """Rebuild a LaneScene from disk; the seg mask is re-rasterized from the
    annotation polylines (band of the rendering half-width)."""
    from PIL import Image

    img = np.asarray(Image.open(os.path.join(data_dir, rel)),
                     dtype=np.float32) / 255.0
    if img.ndim == 2:
        img = np.repeat(img[:, :, None], 3, axis=2)
    mask = np.zeros(img.shape[:2], dtype=np.uint8)
    xx = np.arange(cfg.img_w, dtype=np.float64)
    for k, lane in enumerate(lanes, start=1):
        pts = lane.points[::-1]  # increasing y
        y0 = max(int(math.ceil(pts[0, 1])), 0)
        y1 = min(int(math.floor(pts[-1, 1])), cfg.img_h - 1)
        if y1 < y0:
            continue
        ys = np.arange(y0, y1 + 1)
        xc = np.interp(ys, pts[:, 1], pts[:, 0])
        band = np.abs(xx[None, :] - xc[:, None]) <= LANE_HALF_WIDTH
        mask[y0:y1 + 1][band] = k
    return LaneScene(image=img[:, :, :3], lanes=list(lanes), seg_mask=mask)


def cmd_gen(args) -> int:
    cfg = _config(args)
    scenes = [synthdata.generate_scene(cfg.scene_config(), i)
              for i in range(args.count)]
    synthdata.write_culane(scenes, args.out)
    print(f"wrote {args.count} scenes to {args.out}")
    return 0


def cmd_train(args) -> int:
    cfg = _config(args)
    _setup_threads_and_seed(cfg.seed)
    rels, lanes = synthdata.read_culane(args.data)
    if not rels:
        print("error: dataset is empty", file=sys.stderr)
        return 1
    scenes = [_load_scene(args.data, r, l, cfg) for r, l in zip(rels, lanes)]

    start_step = 0
    if args.resume and os.path.exists(args.out):
        model, _, start_step = pipeline.load_checkpoint(args.out, cfg)
    else:
        model = LaneDiffusionModel(cfg.model_config())
    tcfg = cfg.train_config()
    sched = diffusion.cosine_schedule(tcfg.t_max)
    grid = cfg.grid()
    optimizer = torch.optim.AdamW(model.parameters(), lr=tcfg.learning_rate)
    steps_per_epoch = math.ceil(len(scenes) / tcfg.batch_size)
    total_steps = tcfg.epochs * steps_per_epoch
    # cosine decay with a short linear warmup; the warmup keeps the first
    # few SimOTA assignments from locking in arbitrary anchor preferences
    warmup = min(50, max(1, total_steps // 20))
    lr_sched = torch.optim.lr_scheduler.LambdaLR(
        optimizer, lambda s: min(1.0, (s + 1) / warmup)
        * 0.5 * (1.0 + math.cos(math.pi * s / total_steps)))
    rng = np.random.default_rng(cfg.seed)

    log_path = os.path.splitext(args.out)[0] + "_loss.csv"
    step = start_step
    try:
        with open(log_path, "a" if args.resume else "w", newline="") as logf:
            writer = csv.writer(logf)
            if not args.resume:
                writer.writerow(["step", "total", "cls", "liou", "smooth_l1",
                                 "angle", "seg", "aux"])
            for epoch in range(tcfg.epochs):
                order = rng.permutation(len(scenes))
                for b in range(steps_per_epoch):
                    batch = [scenes[i] for i in
                             order[b * tcfg.batch_size:(b + 1) * tcfg.batch_size]]
                    rep = pipeline.train_step(batch, model, tcfg, optimizer,
                                              rng, sched, grid)
                    lr_sched.step()
                    step += 1
                    writer.writerow([step, float(rep.total), rep.cls, rep.liou,
                                     rep.smooth_l1, rep.angle, rep.seg, rep.aux])
                print(f"epoch {epoch + 1}/{tcfg.epochs} loss={float(rep.total):.4f}")
    except Exception as e:
        print(f"error: training aborted: {e}", file=sys.stderr)
        return 1
    pipeline.save_checkpoint(model, cfg, args.out, step=step)
    print(f"saved checkpoint to {args.out}")
    return 0


def cmd_infer(args) -> int:
    model, cfg, _ = pipeline.load_checkpoint(
        args.ckpt, _config(args) if args.config else None)
    # inference-only flags may override the stored config
    import dataclasses
    cfg = dataclasses.replace(
        cfg,
        sampling_steps=args.steps if args.steps is not None else cfg.sampling_steps,
        fg_threshold=args.threshold if args.threshold is not None else cfg.fg_threshold)
    _setup_threads_and_seed(cfg.seed if args.seed is None else args.seed)
    icfg = cfg.infer_config()
    sched = diffusion.cosine_schedule(cfg.t_max)
    grid = cfg.grid()
    rels, gt_lanes = synthdata.read_culane(args.data)
    os.makedirs(args.out, exist_ok=True)
    rng = np.random.default_rng(cfg.seed if args.seed is None else args.seed)
    for rel, lanes in zip(rels, gt_lanes):
        scene = _load_scene(args.data, rel, lanes, cfg)
        dets = pipeline.infer(scene.image, model, icfg, sched, grid,
                              cfg.n_train, cfg.noise_scale, rng)
        stem = os.path.splitext(rel)[0]
        polys = [geometry.anchor_to_polyline(d.anchor, grid) for d in dets]
        synthdata.write_lanes_file([p for p in polys if p is not None],
                                   os.path.join(args.out, stem + ".lines.txt"))
        with open(os.path.join(args.out, stem + ".scores.txt"), "w") as f:
            f.writelines(f"{d.fg_prob:.6f}\n" for d, p in zip(dets, polys)
                         if p is not None)
    with open(os.path.join(args.out, "list.txt"), "w") as f:
        f.writelines(r + "\n" for r in rels)
    print(f"wrote predictions for {len(rels)} images to {args.out}")
    return 0


def cmd_eval(args) -> int:
    cfg = _config(args)
    grid = cfg.grid()
    pred_rels, preds = synthdata.read_culane(args.pred)
    gt_rels, gts = synthdata.read_culane(args.gt)
    missing = sorted(set(gt_rels) ^ set(pred_rels))
    if missing:
        print("error: mismatched file sets: " + ", ".join(missing), file=sys.stderr)
        return 1
    order = {r: i for i, r in enumerate(pred_rels)}
    preds = [preds[order[r]] for r in gt_rels]
    if args.mode == "culane":
        rep = evalmetrics.culane_f1(preds, gts, grid)
    else:
        rep = evalmetrics.tusimple_accuracy(preds, gts, grid)
    print(rep.summary(args.mode))
    if args.out:
        evalmetrics.write_report(rep, args.mode, args.out)
    return 0


def cmd_plot(args) -> int:
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
    from PIL import Image

    cfg = _config(args)
    seed = cfg.seed if args.seed is None else args.seed
    _setup_threads_and_seed(seed)
    model, cfg, _ = pipeline.load_checkpoint(args.ckpt, None)
    icfg = cfg.infer_config()
    sched = diffusion.cosine_schedule(cfg.t_max)
    grid = cfg.grid()
    img = np.asarray(Image.open(args.image), dtype=np.float32)[:, :, :3] / 255.0
    trace: list = []
    dets = pipeline.infer(img, model, icfg, sched, grid, cfg.n_train,
                          cfg.noise_scale, np.random.default_rng(seed), trace=trace)
    base = os.path.splitext(args.out)[0]
    ys = geometry.y_grid(grid)
    for s, snap in enumerate(trace):
        fig, ax = plt.subplots(figsize=(5, 5))
        ax.imshow(img)
        anchors, fg = snap["anchors"], snap["fg"]
        keep = np.arange(len(anchors)) if fg is None else np.flatnonzero(
            fg >= icfg.fg_threshold)
        for i in keep:
            a = geometry.LaneAnchor(*anchors[i, :3].tolist(), anchors[i, 3],
                                    anchors[i, 4:].astype(np.float64))
            poly = geometry.anchor_to_polyline(a, grid)
            if poly is not None:
                ax.plot(poly.points[:, 0], poly.points[:, 1], lw=0.8, alpha=0.6)
        if s == len(trace) - 1:
            for d in dets:
                poly = geometry.anchor_to_polyline(d.anchor, grid)
                if poly is not None:
                    ax.plot(poly.points[:, 0], poly.points[:, 1], "r-", lw=2)
        ax.set_xlim(0, grid.img_w)
        ax.set_ylim(grid.img_h, 0)
        ax.set_title("initial noise" if fg is None else f"sampling step {s}")
        fig.savefig(f"{base}_step{s}.png", dpi=100)
        plt.close(fig)
    print(f"wrote {len(trace)} overlays to {base}_step*.png")
    return 0


def _config(args) -> RunConfig:
    overrides = {
        "seed": getattr(args, "seed", None),
        "sampling_steps": getattr(args, "steps", None),
        "fg_threshold": getattr(args, "threshold", None),
        "noise_scale": getattr(args, "noise_scale", None),
        "n_train": getattr(args, "n_train", None),
        "pad_mode": getattr(args, "pad_mode", None),
    }
    return load_config(getattr(args, "config", None), overrides)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="difflane",
                                     description="Lane detection by denoising "
                                                 "diffusion over lane anchors")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="YAML config file")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--steps", type=int, default=None, help="sampling steps")
        p.add_argument("--threshold", type=float, default=None, help="fg threshold")
        p.add_argument("--noise-scale", type=float, default=None, dest="noise_scale")
        p.add_argument("--n-train", type=int, default=None, dest="n_train")
        p.add_argument("--pad-mode", choices=synthdata.PAD_MODES, default=None,
                       dest="pad_mode")

    p = sub.add_parser("gen", help="generate a synthetic CULane-layout dataset")
    common(p)
    p.add_argument("--out", required=True)
    p.add_argument("--count", type=int, required=True)
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("train", help="train on a generated dataset")
    common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True, help="checkpoint output path")
    p.add_argument("--resume", action="store_true")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("infer", help="run inference over a dataset")
    common(p)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("eval", help="score predictions against ground truth")
    common(p)
    p.add_argument("--pred", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--mode", choices=("culane", "tusimple"), default="culane")
    p.add_argument("--out", default=None, help="report file path")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("plot", help="per-step anchor overlays for one image")
    common(p)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--image", required=True)
    p.add_argument("--out", required=True, help="output PNG basename")
    p.set_defaults(func=cmd_plot)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except FileNotFoundError as e:
        print(f"error: not found: {e}", file=sys.stderr)
        return 1
    except (ValueError, RuntimeError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
