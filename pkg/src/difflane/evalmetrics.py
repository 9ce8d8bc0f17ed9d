"""CULane-style F1 and TuSimple-style accuracy/FP/FN evaluation.

The CULane score here uses Line-IoU at a width scaled from the official
30 px / 1640 px rasterized evaluator; it is a documented approximation, not
bit-parity with the official tool.
"""

import csv
import math
import os
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linear_sum_assignment

from .geometry import LaneGrid, Polyline, polyline_rows, line_iou_xs

CULANE_WIDTH_FRAC = 30.0 / 1640.0
TUSIMPLE_PIXEL_THRESH = 20.0
TUSIMPLE_CORRECT_RATIO = 0.85


@dataclass
class EvalReport:
    tp: int = 0
    fp: int = 0
    fn: int = 0
    precision: float = 0.0
    recall: float = 0.0
    f1: float = 0.0
    accuracy: float = 0.0
    fp_rate: float = 0.0
    fn_rate: float = 0.0
    per_image: list[dict] = field(default_factory=list)

    def summary(self, mode: str) -> str:
        if mode == "culane":
            return (f"precision={self.precision:.4f} recall={self.recall:.4f} "
                    f"f1={self.f1:.4f} (tp={self.tp} fp={self.fp} fn={self.fn})")
        return (f"accuracy={self.accuracy:.4f} fp={self.fp_rate:.4f} "
                f"fn={self.fn_rate:.4f}")


def _f1(tp: int, fp: int, fn: int) -> tuple[float, float, float]:
    p = tp / (tp + fp) if tp + fp else 0.0
    r = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * p * r / (p + r) if p + r else 0.0
    return p, r, f1


def match_matrix(iou: np.ndarray, thresh: float) -> list[tuple[int, int]]:
    """Maximum-cardinality matching of pairs with iou >= thresh (exact)."""
    ok = iou >= thresh
    if not ok.any():
        return []
    rows, cols = linear_sum_assignment(ok.astype(float), maximize=True)
    return [(r, c) for r, c in zip(rows, cols) if ok[r, c]]


def culane_f1(preds: list[list[Polyline]], gts: list[list[Polyline]],
              grid: LaneGrid, iou_thresh: float = 0.5,
              width: float | None = None) -> EvalReport:
    """F1 with per-image maximum matching on the Line-IoU matrix."""
    if width is None:
        width = CULANE_WIDTH_FRAC * grid.img_w
    rep = EvalReport()
    for idx, (p_lanes, g_lanes) in enumerate(zip(preds, gts)):
        iou = np.zeros((len(p_lanes), len(g_lanes)))
        p_rows = [polyline_rows(l, grid) for l in p_lanes]
        g_rows = [polyline_rows(l, grid) for l in g_lanes]
        for i, (px, pv) in enumerate(p_rows):
            for j, (gx, gv) in enumerate(g_rows):
                iou[i, j] = line_iou_xs(px, pv, gx, gv, width)
        matches = match_matrix(iou, iou_thresh)
        tp = len(matches)
        fp = len(p_lanes) - tp
        fn = len(g_lanes) - tp
        rep.tp += tp
        rep.fp += fp
        rep.fn += fn
        rep.per_image.append({"image": idx, "tp": tp, "fp": fp, "fn": fn})
    rep.precision, rep.recall, rep.f1 = _f1(rep.tp, rep.fp, rep.fn)
    return rep


def _gt_angle_from_vertical(xs: np.ndarray, valid: np.ndarray,
                            grid: LaneGrid) -> float:
    """Least-squares lane slope, as an angle measured from vertical."""
    ys = np.linspace(grid.y_min, grid.y_max, grid.n_points)[valid]
    x = xs[valid]
    if x.size < 2:
        return 0.0
    slope = np.polyfit(ys, x, 1)[0]  # dx/dy
    return math.atan(abs(slope))


def tusimple_accuracy(preds: list[list[Polyline]], gts: list[list[Polyline]],
                      grid: LaneGrid) -> EvalReport:
    """Point-level accuracy with the 20/cos(angle) pixel threshold; a matched
    lane below the 0.85 correct-point ratio counts toward FP."""
    rep = EvalReport()
    total_pts = 0
    correct_pts = 0
    total_preds = 0
    wrong_preds = 0
    total_gts = 0
    unmatched_gts = 0
    for idx, (p_lanes, g_lanes) in enumerate(zip(preds, gts)):
        p_rows = [polyline_rows(l, grid) for l in p_lanes]
        g_rows = [polyline_rows(l, grid) for l in g_lanes]
        used = set()
        total_preds += len(p_lanes)
        total_gts += len(g_lanes)
        img_correct = 0
        for gx, gv in g_rows:
            n_pts = int(gv.sum())
            total_pts += n_pts
            thresh = TUSIMPLE_PIXEL_THRESH / math.cos(
                _gt_angle_from_vertical(gx, gv, grid))
            best, best_correct = -1, -1
            for i, (px, pv) in enumerate(p_rows):
                if i in used:
                    continue
                ok = gv & pv & (np.abs(px - gx) < thresh)
                if int(ok.sum()) > best_correct:
                    best, best_correct = i, int(ok.sum())
            if best < 0 or best_correct == 0:
                unmatched_gts += 1
                continue
            used.add(best)
            correct_pts += best_correct
            img_correct += best_correct
            if n_pts and best_correct / n_pts < TUSIMPLE_CORRECT_RATIO:
                wrong_preds += 1
        wrong_preds += len(p_lanes) - len(used)  # unmatched predictions
        rep.per_image.append({"image": idx, "correct_points": img_correct})
    rep.accuracy = correct_pts / total_pts if total_pts else 0.0
    rep.fp_rate = wrong_preds / total_preds if total_preds else 0.0
    rep.fn_rate = unmatched_gts / total_gts if total_gts else 0.0
    return rep


def write_report(rep: EvalReport, mode: str, out_path: str) -> None:
    """key=value summary plus a per-image CSV next to it."""
    with open(out_path, "w") as f:
        if mode == "culane":
            keys = ("tp", "fp", "fn", "precision", "recall", "f1")
        else:
            keys = ("accuracy", "fp_rate", "fn_rate")
        for k in keys:
            f.write(f"{k}={getattr(rep, k)}\n")
    if rep.per_image:
        csv_path = os.path.splitext(out_path)[0] + "_per_image.csv"
        with open(csv_path, "w", newline="") as f:
            writer = csv.DictWriter(f, fieldnames=list(rep.per_image[0]))
            writer.writeheader()
            writer.writerows(rep.per_image)
