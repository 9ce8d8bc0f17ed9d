"""Training and inference orchestration: the corrupt-predict-assign training
step, DDIM sampling with lane-anchor resampling, and checkpointing."""

import os
from dataclasses import dataclass

import numpy as np
import torch

from . import assign_loss, diffusion, geometry, synthdata
from .config import InferConfig, RunConfig, TrainConfig
from .geometry import LaneAnchor, LaneGrid, ScoredLane
from .model import DecoderOutput, LaneDiffusionModel
from .synthdata import LaneScene


def triples_to_anchor_tensor(triples01: np.ndarray, grid: LaneGrid) -> torch.Tensor:
    """[n, 3] normalized triples -> [n, 4+N] anchor tensor (full length, zero
    offsets), clamped into [0, 1] like geometry.anchor_from_params."""
    n = triples01.shape[0]
    t = torch.as_tensor(np.clip(triples01, 0.0, 1.0), dtype=torch.float32)
    return torch.cat([t, torch.full((n, 1), float(grid.n_points)),
                      torch.zeros(n, grid.n_points)], dim=-1)


def anchors_to_tensor(anchors: list[LaneAnchor], grid: LaneGrid) -> torch.Tensor:
    if not anchors:
        return torch.zeros(0, 4 + grid.n_points)
    rows = [np.concatenate([[a.start_x, a.start_y, a.angle, a.length], a.offsets])
            for a in anchors]
    return torch.as_tensor(np.stack(rows), dtype=torch.float32)


def _slice_output(out: DecoderOutput, i: int) -> DecoderOutput:
    return DecoderOutput(out.cls_logits[i], out.triple[i], out.length[i], out.offsets[i])


def train_step(scenes: list[LaneScene], model: LaneDiffusionModel,
               cfg: TrainConfig, optimizer: torch.optim.Optimizer,
               rng: np.random.Generator, sched: diffusion.NoiseSchedule,
               grid: LaneGrid) -> assign_loss.LossReport:
    """One optimizer update on a batch of scenes; returns the mean report."""
    model.train()
    scale = diffusion.ScaleConfig(cfg.noise_scale)

    images = torch.as_tensor(
        np.stack([s.image for s in scenes])).permute(0, 3, 1, 2)
    masks = torch.as_tensor(np.stack([s.seg_mask for s in scenes]).astype(np.int64))

    gt_tensors = []
    noisy = []
    ts = []
    for scene in scenes:
        gts = [geometry.gt_to_anchor(lane, grid) for lane in scene.lanes]
        padded, _ = synthdata.pad_ground_truth(gts, cfg.n_train, rng, grid,
                                               scale, mode=cfg.pad_mode)
        triples = np.array([geometry.params_of(a) for a in padded])
        x0 = diffusion.normalize(triples, scale)
        t = int(rng.integers(0, cfg.t_max))
        eps = rng.standard_normal(x0.shape)
        x_t = diffusion.corrupt(x0, t, eps, sched)
        noisy.append(triples_to_anchor_tensor(diffusion.denormalize(x_t, scale), grid))
        ts.append(t)
        gt_tensors.append(anchors_to_tensor(gts, grid))

    anchors = torch.stack(noisy)
    t = torch.as_tensor(ts, dtype=torch.long)

    pyramid = model.encode(images)
    outs = model.decoder_forward(anchors, pyramid, t)
    aux_outs = model.aux_forward(pyramid)
    seg_logits = model.seg_forward(pyramid)

    reports = []
    for i in range(len(scenes)):
        reports.append(assign_loss.total_loss(
            [_slice_output(o, i) for o in outs],
            [_slice_output(o, i) for o in aux_outs],
            seg_logits[i:i + 1], gt_tensors[i], masks[i:i + 1], grid))

    total = torch.stack([r.total for r in reports]).mean()
    optimizer.zero_grad()
    total.backward()
    optimizer.step()

    k = float(len(reports))
    return assign_loss.LossReport(
        cls=sum(r.cls for r in reports) / k,
        liou=sum(r.liou for r in reports) / k,
        smooth_l1=sum(r.smooth_l1 for r in reports) / k,
        angle=sum(r.angle for r in reports) / k,
        seg=sum(r.seg for r in reports) / k,
        aux=sum(r.aux for r in reports) / k,
        total=total.detach())


def resample_anchors(output: DecoderOutput, x_t: np.ndarray, fg_threshold: float,
                     n_train: int, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Keep post-DDIM triples of foreground anchors, top up with fresh
    standard-normal triples. Returns (triples [n_train, 3], kept indices)."""
    fg = output.fg_prob().detach().cpu().numpy()
    keep = np.flatnonzero(fg >= fg_threshold)
    fresh = rng.standard_normal((n_train - keep.size, 3))
    return np.concatenate([x_t[keep], fresh], axis=0), keep


@torch.no_grad()
def infer(image: np.ndarray, model: LaneDiffusionModel, icfg: InferConfig,
          sched: diffusion.NoiseSchedule, grid: LaneGrid, n_train: int,
          noise_scale: float, rng: np.random.Generator,
          resample_last: bool = False,
          trace: list | None = None) -> list[ScoredLane]:
    """DDIM sampling over lane-anchor triples; encoder runs exactly once.

    Resampling after the final DDIM pair is skipped by default (fresh noise
    there could only add spurious detections); pass resample_last=True for
    the unconditional variant.
    """
    model.eval()
    scale = diffusion.ScaleConfig(noise_scale)
    img_t = torch.as_tensor(image, dtype=torch.float32).permute(2, 0, 1)[None]
    pyramid = model.encode(img_t)

    x_t = rng.standard_normal((n_train, 3))
    anchors = triples_to_anchor_tensor(diffusion.denormalize(x_t, scale), grid)[None]
    last: DecoderOutput | None = None
    pairs = diffusion.time_pairs(icfg.sampling_steps, sched.t_max)
    if trace is not None:
        trace.append({"anchors": anchors[0].numpy().copy(), "fg": None})
    for step, (t_now, t_next) in enumerate(pairs):
        outs = model.decoder_forward(anchors, pyramid,
                                     torch.as_tensor([t_now], dtype=torch.long))
        last = _slice_output(outs[-1], 0)
        if trace is not None:
            trace.append({"anchors": last.refined_anchors().numpy().copy(),
                          "fg": last.fg_prob().numpy().copy()})
        x0_pred = diffusion.normalize(last.triple.double().cpu().numpy(), scale)
        x_t = diffusion.ddim_step(x_t, x0_pred, t_now, t_next, sched, scale)

        is_last = step == len(pairs) - 1
        if is_last and not resample_last:
            break
        x_t, keep = resample_anchors(last, x_t, icfg.fg_threshold, n_train, rng)
        # kept anchors carry the last block's length/offsets; only the triple
        # is re-noised through the DDIM chain
        nxt = triples_to_anchor_tensor(diffusion.denormalize(x_t, scale), grid)
        if keep.size:
            kt = torch.as_tensor(keep, dtype=torch.long)
            nxt[:keep.size, 3] = last.length[kt]
            nxt[:keep.size, 4:] = last.offsets[kt]
        anchors = nxt[None]

    assert last is not None
    fg = last.fg_prob().cpu().numpy()
    triple = last.triple.cpu().numpy()
    length = last.length.cpu().numpy()
    offsets = last.offsets.cpu().numpy()
    cands = []
    for i in np.flatnonzero(fg >= icfg.fg_threshold):
        anchor = LaneAnchor(float(triple[i, 0]), float(triple[i, 1]),
                            float(triple[i, 2]), float(length[i]),
                            offsets[i].astype(np.float64))
        if geometry.anchor_to_polyline(anchor, grid) is not None:
            cands.append(ScoredLane(anchor, float(fg[i])))
    width = assign_loss.LOSS_IOU_WIDTH_FRAC * grid.img_w
    return geometry.nms(cands, grid, icfg.nms_iou, width, icfg.top_k)


class CheckpointMismatch(RuntimeError):
    pass


def save_checkpoint(model: LaneDiffusionModel, cfg: RunConfig, path: str,
                    step: int = 0) -> None:
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    torch.save({
        "state_dict": model.state_dict(),
        "manifest": {
            "config_hash": cfg.config_hash(),
            "config": cfg.to_dict(),
            "t_max": cfg.t_max,
            "grid": {"img_w": cfg.img_w, "img_h": cfg.img_h,
                     "y_min_frac": cfg.y_min_frac, "n_points": cfg.n_points},
            "step": step,
        },
    }, path)


def load_checkpoint(path: str, cfg: RunConfig | None = None
                    ) -> tuple[LaneDiffusionModel, RunConfig, int]:
    """Restore (model, config, step). A provided config must hash-match the
    one stored in the checkpoint."""
    if not os.path.exists(path):
        raise FileNotFoundError(path)
    blob = torch.load(path, weights_only=False)
    manifest = blob["manifest"]
    stored = RunConfig(**manifest["config"])
    if cfg is not None and cfg.config_hash() != manifest["config_hash"]:
        raise CheckpointMismatch(
            f"config hash {cfg.config_hash()} != checkpoint {manifest['config_hash']}")
    model = LaneDiffusionModel(stored.model_config())
    model.load_state_dict(blob["state_dict"])
    return model, stored, int(manifest.get("step", 0))
