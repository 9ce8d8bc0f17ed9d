"""Demonstrate lane geometry, the Line-IoU overlap measure, and SimOTA.

A lane anchor is a ray (start point + angle) with per-row lateral offsets.
Line-IoU widens two lanes into bands and measures their row-wise overlap.
SimOTA assigns a dynamic number of predicted anchors to each ground truth
by a cost that mixes classification, Line-IoU, and start-point distance.

Run: python3 demos/03_geometry_and_assignment.py
"""

import numpy as np
import torch

from difflane import assign_loss, geometry
from difflane.config import RunConfig
from difflane.model import DecoderOutput

grid = RunConfig().grid()
width = 7.5

base = geometry.anchor_from_params((0.4, 1.0, 0.5), grid)
print("Line-IoU of a vertical lane against laterally shifted copies:")
for shift_px in (0.0, 2.5, 5.0, 7.5, 15.0, 30.0):
    other = geometry.anchor_from_params((0.4 + shift_px / grid.img_w, 1.0, 0.5),
                                        grid)
    print(f"  shift {shift_px:5.1f}px  iou = "
          f"{geometry.line_iou(base, other, grid, width):+.3f}")
print("(1 at zero shift, 0 at twice the half-width, negative once disjoint)")

# build a toy assignment problem: 6 predictions, 2 ground truths
torch.manual_seed(0)
gt_triples = [(0.30, 1.0, 0.50), (0.70, 1.0, 0.55)]
pred_triples = [(0.31, 1.0, 0.50),   # near gt 0
                (0.29, 1.0, 0.49),   # also near gt 0
                (0.71, 1.0, 0.55),   # near gt 1
                (0.50, 1.0, 0.30),   # between the two
                (0.05, 1.0, 0.80),   # far away
                (0.95, 1.0, 0.20)]   # far away
n = len(pred_triples)
out = DecoderOutput(
    cls_logits=torch.zeros(n, 2),
    triple=torch.tensor(pred_triples),
    length=torch.full((n,), float(grid.n_points)),
    offsets=torch.zeros(n, grid.n_points),
)
gts = torch.stack([
    torch.cat([torch.tensor(t), torch.tensor([float(grid.n_points)]),
               torch.zeros(grid.n_points)])
    for t in gt_triples])

assign = assign_loss.simota_assign(out, gts, grid)
print("\nSimOTA assignment (anchor -> gt, -1 is background):")
for i, g in enumerate(assign.anchor_gt):
    tag = f"gt {g}" if g >= 0 else "background"
    print(f"  pred {i} {pred_triples[i]} -> {tag}")
print("\nEach gt receives between 1 and 4 anchors depending on how much")
print("total Line-IoU its candidate anchors carry (dynamic k).")
