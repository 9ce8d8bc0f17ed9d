"""Calibration run: train on 200 scenes, track train/holdout F1 over epochs."""

import sys
import time

import numpy as np
import torch

sys.path.insert(0, "src")

from difflane import diffusion, evalmetrics, geometry, pipeline, synthdata
from difflane.config import RunConfig
from difflane.model import LaneDiffusionModel

torch.set_num_threads(4)
torch.manual_seed(0)

lr = float(sys.argv[1]) if len(sys.argv) > 1 else 3e-4
epochs = int(sys.argv[2]) if len(sys.argv) > 2 else 40
batch = int(sys.argv[3]) if len(sys.argv) > 3 else 8

cfg = RunConfig(learning_rate=lr, epochs=epochs, batch_size=batch)
grid = cfg.grid()
sched = diffusion.cosine_schedule(cfg.t_max)
scenes = [synthdata.generate_scene(cfg.scene_config(), i) for i in range(200)]
holdout = [synthdata.generate_scene(cfg.scene_config(), 10_000 + i) for i in range(50)]

model = LaneDiffusionModel(cfg.model_config())
tcfg = cfg.train_config()
opt = torch.optim.AdamW(model.parameters(), lr=tcfg.learning_rate)
steps_per_epoch = (len(scenes) + tcfg.batch_size - 1) // tcfg.batch_size
warmup = 50
total_steps = tcfg.epochs * steps_per_epoch
lrs = torch.optim.lr_scheduler.LambdaLR(
    opt, lambda s: min(1.0, (s + 1) / warmup) * 0.5 * (1 + np.cos(np.pi * s / total_steps)))
rng = np.random.default_rng(0)


def f1_on(subset):
    icfg = cfg.infer_config()
    r = np.random.default_rng(123)
    preds, gts = [], []
    for s in subset:
        dets = pipeline.infer(s.image, model, icfg, sched, grid, cfg.n_train,
                              cfg.noise_scale, r)
        polys = [geometry.anchor_to_polyline(d.anchor, grid) for d in dets]
        preds.append([p for p in polys if p is not None])
        gts.append(s.lanes)
    return evalmetrics.culane_f1(preds, gts, grid).f1


t0 = time.time()
best = -1.0
for epoch in range(tcfg.epochs):
    order = rng.permutation(len(scenes))
    for b in range(steps_per_epoch):
        mb = [scenes[i] for i in order[b * tcfg.batch_size:(b + 1) * tcfg.batch_size]]
        rep = pipeline.train_step(mb, model, tcfg, opt, rng, sched, grid)
        lrs.step()
    msg = f"epoch {epoch+1} loss={float(rep.total):.3f} t={time.time()-t0:.0f}s"
    if (epoch + 1) % 5 == 0 or epoch >= tcfg.epochs - 8:
        tf1 = f1_on(scenes[:40])
        msg += f" trainF1={tf1:.3f}"
        if tf1 > best:
            best = tf1
            pipeline.save_checkpoint(model, cfg, "/tmp/calib_best.pt")
            msg += " (saved best)"
    print(msg, flush=True)

print("select+train time", time.time() - t0)
model, _, _ = pipeline.load_checkpoint("/tmp/calib_best.pt")
print(f"best ckpt: trainF1(200)={f1_on(scenes):.3f} holdF1={f1_on(holdout):.3f}")
pipeline.save_checkpoint(model, cfg, "/tmp/calib_ckpt.pt")
print("total time", time.time() - t0)
