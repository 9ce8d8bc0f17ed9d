"""SimOTA dynamic label assignment and the training loss stack: focal
classification, Line-IoU + smooth-L1 + angle regression, segmentation
auxiliary loss, and the weighted total."""

from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F

from .geometry import LaneGrid
from .model import DecoderOutput, anchor_row_mask, anchor_row_x

FOCAL_ALPHA = 0.25
FOCAL_GAMMA = 2.0
SIMOTA_Q = 4          # candidates pooled for the dynamic-k estimate
SIMOTA_K_MAX = 4
COST_W_CLS = 1.0
COST_W_IOU = 3.0
COST_W_DIST = 1.0

# CLRNet uses a 15 px Line-IoU radius at 800 px image width; keep the ratio
LOSS_IOU_WIDTH_FRAC = 15.0 / 800.0


@dataclass(frozen=True)
class LossWeights:
    cls: float = 2.0
    liou: float = 2.0
    smooth_l1: float = 0.2
    angle: float = 0.02
    seg: float = 1.0
    aux: float = 1.0


@dataclass
class Assignment:
    """anchor_gt[i] = index of the gt anchor i serves, or -1 for background."""
    anchor_gt: np.ndarray

    @property
    def positives(self) -> np.ndarray:
        return np.flatnonzero(self.anchor_gt >= 0)


@dataclass
class LossReport:
    """Weighted loss components; total = cls + liou + smooth_l1 + angle +
    seg + aux (each field already carries its configured weight)."""
    cls: float
    liou: float
    smooth_l1: float
    angle: float
    seg: float
    aux: float
    total: torch.Tensor  # keeps the graph for backward


def lane_rows(triple: torch.Tensor, length: torch.Tensor, offsets: torch.Tensor,
              grid: LaneGrid) -> tuple[torch.Tensor, torch.Tensor]:
    """(xs, valid) over grid rows for prediction tensors [..., 3]/[...]/[..., N]."""
    anchors = torch.cat([triple, length.unsqueeze(-1), offsets], dim=-1)
    return anchor_row_x(anchors, grid), anchor_row_mask(anchors, grid)


def line_iou_t(ax: torch.Tensor, a_valid: torch.Tensor,
               bx: torch.Tensor, b_valid: torch.Tensor,
               width: float) -> torch.Tensor:
    """Differentiable Line-IoU over the last (row) dim; mirrors
    geometry.line_iou_xs including the single-sided union penalty."""
    both = (a_valid & b_valid).to(ax.dtype)
    only = (a_valid ^ b_valid).to(ax.dtype)
    gap = (ax - bx).abs()
    inter = ((2.0 * width - gap) * both).sum(-1)
    union = ((2.0 * width + gap) * both).sum(-1) + 2.0 * width * only.sum(-1)
    empty = (both.sum(-1) + only.sum(-1)) == 0
    iou = inter / union.clamp_min(1e-9)
    return torch.where(empty, torch.full_like(iou, -1.0), iou)


def _pairwise_cost(preds: DecoderOutput, gt_anchors: torch.Tensor,
                   grid: LaneGrid, width: float):
    """Cost matrix [n_anchor, n_gt] and the pairwise IoU used for dynamic k."""
    px, pv = lane_rows(preds.triple, preds.length, preds.offsets, grid)
    gx, gv = anchor_row_x(gt_anchors, grid), anchor_row_mask(gt_anchors, grid)
    iou = line_iou_t(px.unsqueeze(1), pv.unsqueeze(1),
                     gx.unsqueeze(0), gv.unsqueeze(0), width)  # [n, g]
    p_fg = preds.fg_prob().clamp(1e-7, 1 - 1e-7)
    cost_cls = -FOCAL_ALPHA * (1 - p_fg) ** FOCAL_GAMMA * torch.log(p_fg)
    dist = (preds.triple[:, None, :2] - gt_anchors[None, :, :2]).norm(dim=-1)
    cost = (COST_W_CLS * cost_cls[:, None]
            + COST_W_IOU * (1.0 - iou)
            + COST_W_DIST * dist)
    return cost, iou


def simota_assign(preds: DecoderOutput, gt_anchors: torch.Tensor,
                  grid: LaneGrid, width: float | None = None) -> Assignment:
    """Dynamic-k minimum-cost assignment (single image, no batch dim).

    Each gt claims its k lowest-cost anchors, k = clamp(round(sum of its
    top-q IoUs, negatives floored at 0), 1, 4); an anchor wanted by several
    gts goes to the cheapest one (ties to the lower gt index); a gt left with
    nothing takes its cheapest still-free anchor.
    """
    n = preds.cls_logits.shape[0]
    n_gt = gt_anchors.shape[0]
    if n_gt == 0:
        return Assignment(np.full(n, -1, dtype=np.int64))
    if width is None:
        width = LOSS_IOU_WIDTH_FRAC * grid.img_w
    with torch.no_grad():
        cost, iou = _pairwise_cost(preds, gt_anchors, grid, width)
    cost = cost.double().cpu().numpy()
    iou = iou.double().cpu().numpy()

    anchor_gt = np.full(n, -1, dtype=np.int64)
    claims: dict[int, list[int]] = {}
    for g in range(n_gt):
        # non-finite IoU counts as no overlap so a NaN reaches the loss-level
        # finiteness check instead of crashing the assignment
        top = np.sort(np.clip(np.nan_to_num(iou[:, g], nan=0.0), 0.0, None))[::-1][:SIMOTA_Q]
        k = int(np.clip(round(float(top.sum())), 1, SIMOTA_K_MAX))
        # lowest-cost anchors, ties broken by anchor index (stable sort)
        order = np.argsort(cost[:, g], kind="stable")
        claims[g] = order[:k].tolist()

    for a in range(n):
        wanting = [g for g in range(n_gt) if a in claims[g]]
        if wanting:
            # ties to the lower gt index
            anchor_gt[a] = min(wanting, key=lambda g: (cost[a, g], g))

    for g in range(n_gt):
        if not (anchor_gt == g).any():
            free = np.flatnonzero(anchor_gt < 0)
            if free.size:
                best = free[np.argsort(cost[free, g], kind="stable")[0]]
                anchor_gt[best] = g
    return Assignment(anchor_gt)


def focal_loss(cls_logits: torch.Tensor, labels: torch.Tensor,
               alpha: float = FOCAL_ALPHA, gamma: float = FOCAL_GAMMA) -> torch.Tensor:
    """Softmax focal loss, mean over anchors. labels: 0 background, 1 lane."""
    logp = F.log_softmax(cls_logits, dim=-1)
    logp_t = logp.gather(-1, labels.unsqueeze(-1)).squeeze(-1)
    p_t = logp_t.exp()
    alpha_t = torch.where(labels == 1, torch.as_tensor(alpha, dtype=logp.dtype),
                          torch.as_tensor(1.0 - alpha, dtype=logp.dtype))
    return (-alpha_t * (1 - p_t) ** gamma * logp_t).mean()


def regression_losses(preds: DecoderOutput, gt_anchors: torch.Tensor,
                      assignment: Assignment, grid: LaneGrid,
                      width: float | None = None):
    """(liou, smooth_l1, angle) over positive anchors; zeros when none."""
    pos = assignment.positives
    if pos.size == 0:
        z = preds.triple.sum() * 0.0
        return z, z.clone(), z.clone()
    if width is None:
        width = LOSS_IOU_WIDTH_FRAC * grid.img_w
    pos_t = torch.as_tensor(pos, dtype=torch.long)
    gt_idx = torch.as_tensor(assignment.anchor_gt[pos], dtype=torch.long)
    gt = gt_anchors[gt_idx]

    px, pv = lane_rows(preds.triple[pos_t], preds.length[pos_t],
                       preds.offsets[pos_t], grid)
    gx, gv = anchor_row_x(gt, grid), anchor_row_mask(gt, grid)
    liou = (1.0 - line_iou_t(px, pv, gx, gv, width)).mean()

    n_rows = float(grid.n_points)
    pred_vec = torch.stack([preds.triple[pos_t, 0], preds.triple[pos_t, 1],
                            preds.length[pos_t] / n_rows], dim=-1)
    gt_vec = torch.stack([gt[:, 0], gt[:, 1], gt[:, 3] / n_rows], dim=-1)
    sl1 = F.smooth_l1_loss(pred_vec, gt_vec, beta=1.0)
    angle = F.smooth_l1_loss(preds.triple[pos_t, 2], gt[:, 2], beta=1.0)
    return liou, sl1, angle


def seg_loss(logits: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
    """Pixel cross-entropy against the label mask, nearest-downsampled to the
    logit resolution. logits: [B, K, h, w]; mask: [B, H, W] integer labels."""
    target = F.interpolate(mask[:, None].float(), size=logits.shape[-2:],
                           mode="nearest").squeeze(1).long()
    return F.cross_entropy(logits, target)


class NonFiniteLoss(RuntimeError):
    pass


def _check_finite(name: str, value: torch.Tensor) -> torch.Tensor:
    if not torch.isfinite(value):
        raise NonFiniteLoss(f"non-finite loss term: {name} = {value.item()}")
    return value


def total_loss(block_outputs: list[DecoderOutput], aux_outputs: list[DecoderOutput] | None,
               seg_logits: torch.Tensor | None, gt_anchors: torch.Tensor,
               seg_mask: torch.Tensor | None, grid: LaneGrid,
               weights: LossWeights = LossWeights()) -> LossReport:
    """Full per-image loss: SimOTA + losses per decoder block and aux level,
    combined with fixed weights. Single image (no batch dim on anchors)."""

    def head_losses(outputs: list[DecoderOutput]):
        cls = liou = sl1 = ang = None
        for out in outputs:
            assignment = simota_assign(out, gt_anchors, grid)
            labels = torch.as_tensor((assignment.anchor_gt >= 0).astype(np.int64))
            c = focal_loss(out.cls_logits, labels)
            li, s, a = regression_losses(out, gt_anchors, assignment, grid)
            cls = c if cls is None else cls + c
            liou = li if liou is None else liou + li
            sl1 = s if sl1 is None else sl1 + s
            ang = a if ang is None else ang + a
        k = len(outputs)
        return cls / k, liou / k, sl1 / k, ang / k

    cls, liou, sl1, ang = head_losses(block_outputs)
    main = (weights.cls * cls + weights.liou * liou
            + weights.smooth_l1 * sl1 + weights.angle * ang)

    aux = main.new_zeros(())
    if aux_outputs:
        a_cls, a_liou, a_sl1, a_ang = head_losses(aux_outputs)
        aux = (weights.cls * a_cls + weights.liou * a_liou
               + weights.smooth_l1 * a_sl1 + weights.angle * a_ang)

    seg = main.new_zeros(())
    if seg_logits is not None and seg_mask is not None:
        seg = seg_loss(seg_logits, seg_mask)

    for name, v in (("cls", cls), ("liou", liou), ("smooth_l1", sl1),
                    ("angle", ang), ("seg", seg), ("aux", aux)):
        _check_finite(name, v)
    total = main + weights.seg * seg + weights.aux * aux
    comp = {name: float(v.detach()) for name, v in
            (("cls", weights.cls * cls), ("liou", weights.liou * liou),
             ("smooth_l1", weights.smooth_l1 * sl1), ("angle", weights.angle * ang),
             ("seg", weights.seg * seg), ("aux", weights.aux * aux))}
    return LossReport(total=total, **comp)
