"""Explore the two lane-detection metrics on hand-built fixtures.

The CULane protocol widens lanes into bands, computes Line-IoU between every
prediction/ground-truth pair, solves a maximum matching over pairs above 0.5,
and reports precision/recall/F1. The TuSimple protocol counts per-row hits
within a slope-adjusted pixel threshold and reports accuracy plus FP/FN rates.

Run: python3 demos/05_evaluation_metrics.py
"""

import numpy as np

from difflane import evalmetrics, geometry
from difflane.config import RunConfig

grid = RunConfig().grid()


def vertical(x):
    ys = np.linspace(grid.y_max, grid.y_min, 30)
    return geometry.Polyline(np.stack([np.full(30, float(x)), ys], axis=1))


gt = [vertical(80), vertical(180)]

cases = {
    "perfect": [vertical(80), vertical(180)],
    "one lane 2px off": [vertical(82), vertical(180)],
    "one lane missed": [vertical(80)],
    "extra false lane": [vertical(80), vertical(180), vertical(230)],
    "everything far off": [vertical(20), vertical(120)],
}
print("CULane F1 on fixtures (2 ground-truth lanes):")
for name, pred in cases.items():
    r = evalmetrics.culane_f1([pred], [gt], grid)
    print(f"  {name:20s} f1={r.f1:.3f} tp={r.tp} fp={r.fp} fn={r.fn}")

print("\nTuSimple accuracy vs lateral offset (threshold 20px for a vertical")
print("ground truth; the threshold widens by 1/cos(angle) for slanted ones):")
for off in (0, 5, 10, 19, 21, 40):
    r = evalmetrics.tusimple_accuracy([[vertical(80 + off)]], [[vertical(80)]],
                                      grid)
    print(f"  offset {off:2d}px accuracy={r.accuracy:.2f} "
          f"fp_rate={r.fp_rate:.2f} fn_rate={r.fn_rate:.2f}")

# the matching is a true maximum matching, not greedy: here the best single
# pair (0.9) must be passed over to match both lanes
iou = np.array([[0.9, 0.6],
                [0.7, 0.0]])
pairs = evalmetrics.match_matrix(iou, 0.5)
print(f"\nmaximum matching on a greedy-trap IoU matrix: {pairs} (both matched)")
