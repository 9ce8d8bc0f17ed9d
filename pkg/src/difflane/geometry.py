"""Lane-anchor geometry: grid, anchor <-> polyline conversion, Line-IoU, NMS.

Row convention used throughout the package: row i lives at
y_i = y_min + (y_max - y_min) * i / (n_points - 1), so row 0 is the TOP of
the lane region and row N-1 is the BOTTOM (y_max, the image bottom).
A lane grows upward from its start row, i.e. toward smaller row indices.
"""

import math
from dataclasses import dataclass

import numpy as np

# angle is normalized to [0, 1] <-> (0, pi) from the image +x axis; clamp
# before cot() to keep near-horizontal rays finite
ANGLE_CLAMP = (0.02, 0.98)


@dataclass(frozen=True)
class LaneGrid:
    img_w: int
    img_h: int
    y_min: float
    y_max: float
    n_points: int

    def __post_init__(self):
        if not (0 <= self.y_min < self.y_max <= self.img_h):
            raise ValueError(f"invalid lane region [{self.y_min}, {self.y_max}] for img_h={self.img_h}")
        if self.n_points < 2:
            raise ValueError("n_points must be >= 2")

    @property
    def spacing(self) -> float:
        return (self.y_max - self.y_min) / (self.n_points - 1)


@dataclass
class LaneAnchor:
    """Parameterized lane: start point + angle define a straight ray, offsets
    bend it, length says how many rows (upward from the start row) are valid.

    start_x, start_y, angle are normalized to [0, 1]; offsets are pixels.
    """
    start_x: float
    start_y: float
    angle: float
    length: float
    offsets: np.ndarray

    def copy(self) -> "LaneAnchor":
        return LaneAnchor(self.start_x, self.start_y, self.angle, self.length,
                          self.offsets.copy())


@dataclass
class ScoredLane:
    anchor: LaneAnchor
    fg_prob: float


@dataclass
class Polyline:
    """Ordered lane points, bottom to top (strictly decreasing y)."""
    points: np.ndarray  # (n, 2) float, columns (x, y)

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64)
        if self.points.ndim != 2 or self.points.shape[0] < 2 or self.points.shape[1] != 2:
            raise ValueError("polyline needs >= 2 (x, y) points")
        if not np.all(np.diff(self.points[:, 1]) < 0):
            raise ValueError("polyline y must be strictly decreasing (bottom to top)")


class InvalidGroundTruth(ValueError):
    """Ground-truth lane unusable (outside the grid or degenerate)."""


def y_grid(grid: LaneGrid) -> np.ndarray:
    """N row y-coordinates, top (y_min) to bottom (y_max), constant spacing."""
    i = np.arange(grid.n_points, dtype=np.float64)
    return grid.y_min + (grid.y_max - grid.y_min) * i / (grid.n_points - 1)


def start_row(anchor: LaneAnchor, grid: LaneGrid) -> int:
    """Grid row nearest to the anchor's start y."""
    ys = y_grid(grid)
    return int(np.argmin(np.abs(ys - anchor.start_y * grid.img_h)))


def ray_x(anchor: LaneAnchor, y, grid: LaneGrid):
    """x of the anchor's straight ray at height y (scalar or array)."""
    a = min(max(anchor.angle, ANGLE_CLAMP[0]), ANGLE_CLAMP[1])
    cot = 1.0 / math.tan(a * math.pi)
    return anchor.start_x * grid.img_w + (anchor.start_y * grid.img_h - np.asarray(y, dtype=np.float64)) * cot


def anchor_rows(anchor: LaneAnchor, grid: LaneGrid):
    """(xs, valid) over all N grid rows.

    xs = ray + offset on every row; valid marks the `length` rows upward from
    the start row whose x lands inside [0, img_w].
    """
    ys = y_grid(grid)
    xs = ray_x(anchor, ys, grid) + anchor.offsets
    s = start_row(anchor, grid)
    n_valid = int(round(min(max(anchor.length, 0.0), grid.n_points)))
    valid = np.zeros(grid.n_points, dtype=bool)
    lo = max(s - n_valid + 1, 0)
    valid[lo:s + 1] = True
    valid &= (xs >= 0) & (xs <= grid.img_w)
    return xs, valid


def anchor_to_polyline(anchor: LaneAnchor, grid: LaneGrid) -> Polyline | None:
    """Decode an anchor into image-space points; None if <2 rows survive."""
    xs, valid = anchor_rows(anchor, grid)
    if valid.sum() < 2:
        return None
    ys = y_grid(grid)
    idx = np.flatnonzero(valid)[::-1]  # bottom row first
    return Polyline(np.stack([xs[idx], ys[idx]], axis=1))


def _fit_angle(points: np.ndarray, k: int = 5) -> float:
    """Normalized angle of the least-squares line through the k lowest points."""
    pts = points[np.argsort(points[:, 1])[::-1]][:k]  # largest y = lowest
    dx = pts[:, 0] - pts[:, 0].mean()
    dy = pts[:, 1] - pts[:, 1].mean()
    # direction from PCA of the 2d scatter; y axis points down in image space
    # so flip dy to measure the angle from +x counter-clockwise
    cov_xx = (dx * dx).sum()
    cov_xy = (dx * -dy).sum()
    cov_yy = (dy * dy).sum()
    theta = 0.5 * math.atan2(2.0 * cov_xy, cov_xx - cov_yy)
    if theta <= 0:
        theta += math.pi
    return theta / math.pi


def gt_to_anchor(lane: Polyline, grid: LaneGrid) -> LaneAnchor:
    """Fit a target anchor to a ground-truth polyline.

    The lane is interpolated onto the grid rows and linearly extrapolated to
    cover [y_min, y_max]; the start sits at y_max, length counts the rows the
    original span covers, offsets are x minus the fitted ray on all N rows.
    """
    pts = lane.points
    inside = (pts[:, 0] >= 0) & (pts[:, 0] <= grid.img_w) & \
             (pts[:, 1] >= 0) & (pts[:, 1] <= grid.img_h)
    if inside.sum() < 2:
        raise InvalidGroundTruth("lane has <2 points inside the image")

    ys = y_grid(grid)
    # np.interp wants increasing sample x; polyline y decreases bottom->top
    lane_y = pts[::-1, 1]
    lane_x = pts[::-1, 0]
    xg = np.interp(ys, lane_y, lane_x)
    # linear extrapolation past both ends from the end segments
    lo_slope = (lane_x[1] - lane_x[0]) / (lane_y[1] - lane_y[0])
    hi_slope = (lane_x[-1] - lane_x[-2]) / (lane_y[-1] - lane_y[-2])
    below = ys < lane_y[0]
    above = ys > lane_y[-1]
    xg[below] = lane_x[0] + lo_slope * (ys[below] - lane_y[0])
    xg[above] = lane_x[-1] + hi_slope * (ys[above] - lane_y[-1])

    start_x = float(np.clip(xg[-1] / grid.img_w, 0.0, 1.0))
    start_y = 1.0 if grid.y_max == grid.img_h else grid.y_max / grid.img_h
    angle = _fit_angle(pts)
    covered = (ys >= lane_y[0] - 1e-9) & (ys <= lane_y[-1] + 1e-9)
    length = float(covered.sum())

    anchor = LaneAnchor(start_x, start_y, angle, length,
                        np.zeros(grid.n_points))
    anchor.offsets = xg - ray_x(anchor, ys, grid)
    return anchor


def params_of(anchor: LaneAnchor) -> tuple[float, float, float]:
    return (anchor.start_x, anchor.start_y, anchor.angle)


def anchor_from_params(triple, grid: LaneGrid) -> LaneAnchor:
    """Fresh anchor from a (start_x, start_y, angle) triple: straight ray,
    full length, values clamped into [0, 1]."""
    sx, sy, ang = (float(np.clip(v, 0.0, 1.0)) for v in triple)
    return LaneAnchor(sx, sy, ang, float(grid.n_points),
                      np.zeros(grid.n_points))


def line_iou_xs(ax: np.ndarray, a_valid: np.ndarray,
                bx: np.ndarray, b_valid: np.ndarray, width: float) -> float:
    """Line-IoU between two lanes given per-row x and validity on a shared grid.

    Rows valid in both contribute a 1-d IoU of the two width-expanded
    segments (intersection kept when negative, the CLRNet extension); rows
    valid in only one lane add 2*width to the union only.
    """
    both = a_valid & b_valid
    only = a_valid ^ b_valid
    if not both.any() and not only.any():
        return -1.0
    gap = np.abs(ax[both] - bx[both])
    inter = (2.0 * width - gap).sum()
    union = (2.0 * width + gap).sum() + 2.0 * width * only.sum()
    return float(inter / union)


def line_iou(a: LaneAnchor, b: LaneAnchor, grid: LaneGrid, width: float) -> float:
    ax, av = anchor_rows(a, grid)
    bx, bv = anchor_rows(b, grid)
    return line_iou_xs(ax, av, bx, bv, width)


def polyline_rows(lane: Polyline, grid: LaneGrid):
    """Resample a polyline onto the grid rows: (xs, valid)."""
    ys = y_grid(grid)
    lane_y = lane.points[::-1, 1]
    lane_x = lane.points[::-1, 0]
    xs = np.interp(ys, lane_y, lane_x)
    valid = (ys >= lane_y[0] - 1e-9) & (ys <= lane_y[-1] + 1e-9)
    valid &= (xs >= 0) & (xs <= grid.img_w)
    return xs, valid


def nms(cands: list[ScoredLane], grid: LaneGrid, iou_thresh: float,
        width: float, top_k: int) -> list[ScoredLane]:
    """Greedy descending-score suppression with Line-IoU >= iou_thresh."""
    order = sorted(range(len(cands)), key=lambda i: -cands[i].fg_prob)
    rows = {i: anchor_rows(cands[i].anchor, grid) for i in order}
    keep: list[int] = []
    for i in order:
        xs, valid = rows[i]
        ok = all(line_iou_xs(xs, valid, *rows[j], width) < iou_thresh
                 for j in keep)
        if ok:
            keep.append(i)
            if len(keep) >= top_k:
                break
    return [cands[i] for i in keep]
