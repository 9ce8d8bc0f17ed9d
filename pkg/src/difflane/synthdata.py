"""Deterministic synthetic lane scenes plus CULane-format dataset I/O.

Every scene is a function of (seed, index) only, so datasets never need to be
stored to be reproduced. Lanes are quadratics x(y) = a + b*(y - y_max) +
c*(y - y_max)^2 anchored at the image bottom, rendered as bright bands over a
dark textured background.
"""

import os
from dataclasses import dataclass

import numpy as np

from .diffusion import ScaleConfig, denormalize
from .geometry import LaneAnchor, LaneGrid, Polyline, anchor_from_params

MIN_LANE_SEPARATION = 24.0  # px between lane bottoms
LANE_HALF_WIDTH = 3.0       # rendered band half-width, px
MAX_SEPARATION_TRIES = 200  # rejection budget before relaxing separation

PAD_MODES = ("gaussian", "uniform", "repeat")


@dataclass(frozen=True)
class SceneConfig:
    img_w: int = 256
    img_h: int = 256
    lanes_min: int = 3
    lanes_max: int = 6
    curvature_max: float = 4e-4
    noise_std: float = 0.03
    seed: int = 0

    def __post_init__(self):
        if not (1 <= self.lanes_min <= self.lanes_max <= 6):
            raise ValueError("need 1 <= lanes_min <= lanes_max <= 6")
        if min(self.img_w, self.img_h) < 64:
            raise ValueError("image dimensions must be >= 64")


@dataclass
class LaneScene:
    image: np.ndarray     # (H, W, 3) float32 in [0, 1]
    lanes: list[Polyline]
    seg_mask: np.ndarray  # (H, W) uint8, 0 background, k for lane k


def _sample_lane_coeffs(rng: np.random.Generator, cfg: SceneConfig,
                        y_top: float) -> tuple[float, float, float] | None:
    """One quadratic x(y) staying inside the image over [y_top, img_h]."""
    margin = 10.0
    a = rng.uniform(margin, cfg.img_w - margin)
    b = rng.uniform(-0.6, 0.6)
    c = rng.uniform(-cfg.curvature_max, cfg.curvature_max)
    dy = np.linspace(0.0, y_top - cfg.img_h, 32)  # dy = y - y_max <= 0
    xs = a + b * dy + c * dy * dy
    if xs.min() < margin or xs.max() > cfg.img_w - margin:
        return None
    return a, b, c


def generate_scene(cfg: SceneConfig, index: int) -> LaneScene:
    """Render scene `index`; bit-identical for identical (cfg.seed, index)."""
    rng = np.random.default_rng([cfg.seed, index])
    n_lanes = int(rng.integers(cfg.lanes_min, cfg.lanes_max + 1))
    y_top = 0.3 * cfg.img_h

    lanes_coeffs: list[tuple[float, float, float]] = []
    lane_tops: list[float] = []
    min_sep = MIN_LANE_SEPARATION
    tries = 0
    while len(lanes_coeffs) < n_lanes:
        coeffs = _sample_lane_coeffs(rng, cfg, y_top)
        tries += 1
        if tries > MAX_SEPARATION_TRIES:
            min_sep = 0.0  # bounded retries exhausted: relax separation
        if coeffs is None:
            continue
        if any(abs(coeffs[0] - c[0]) < min_sep for c in lanes_coeffs):
            continue
        lanes_coeffs.append(coeffs)
        # most lanes span the full region; some end early (shorter length)
        frac = 1.0 if rng.random() < 0.7 else rng.uniform(0.55, 0.95)
        lane_tops.append(cfg.img_h - frac * (cfg.img_h - y_top))

    # textured dark background: low-frequency blotches + pixel noise
    h, w = cfg.img_h, cfg.img_w
    coarse = rng.uniform(0.05, 0.25, size=((h + 15) // 16, (w + 15) // 16))
    bg = np.kron(coarse, np.ones((16, 16)))[:h, :w]
    image = np.repeat(bg[:, :, None], 3, axis=2)

    seg_mask = np.zeros((h, w), dtype=np.uint8)
    lanes: list[Polyline] = []
    yy = np.arange(h, dtype=np.float64)
    xx = np.arange(w, dtype=np.float64)
    for k, ((a, b, c), top) in enumerate(zip(lanes_coeffs, lane_tops), start=1):
        dy = yy - cfg.img_h
        xc = a + b * dy + c * dy * dy
        row_on = yy >= top
        dist = np.abs(xx[None, :] - xc[:, None])
        band = row_on[:, None] & (dist <= LANE_HALF_WIDTH)
        image[band] = np.array([0.85, 0.85, 0.75])
        seg_mask[band] = k

        ys_lane = np.linspace(cfg.img_h - 1.0, top, 40)
        dy = ys_lane - cfg.img_h
        xs_lane = a + b * dy + c * dy * dy
        lanes.append(Polyline(np.stack([xs_lane, ys_lane], axis=1)))

    image += rng.normal(0.0, cfg.noise_std, size=image.shape)
    image = np.clip(image, 0.0, 1.0).astype(np.float32)
    return LaneScene(image=image, lanes=lanes, seg_mask=seg_mask)


def pad_ground_truth(gts: list[LaneAnchor], n_train: int,
                     rng: np.random.Generator, grid: LaneGrid,
                     scale: ScaleConfig | None = None,
                     mode: str = "gaussian") -> tuple[list[LaneAnchor], np.ndarray]:
    """Pad the target set to exactly n_train anchors.

    Real anchors come first, untouched; padding triples are drawn standard
    normal in signal space ("gaussian", the default), uniform in [0, 1]
    ("uniform"), or cycled copies of the ground truth ("repeat").
    Returns (anchors, is_real flags).
    """
    if len(gts) > n_train:
        raise ValueError(f"{len(gts)} ground truths exceed n_train={n_train}")
    if mode not in PAD_MODES:
        raise ValueError(f"unknown padding mode {mode!r}")
    scale = scale or ScaleConfig()
    n_pad = n_train - len(gts)
    padded = list(gts)
    if mode == "repeat" and gts:
        for i in range(n_pad):
            padded.append(gts[i % len(gts)].copy())
    else:
        # no gts makes "repeat" fall back to gaussian padding
        if mode == "uniform":
            triples = rng.uniform(0.0, 1.0, size=(n_pad, 3))
        else:
            triples = denormalize(rng.standard_normal((n_pad, 3)), scale)
        for t in triples:
            padded.append(anchor_from_params(t, grid))
    is_real = np.zeros(n_train, dtype=bool)
    is_real[:len(gts)] = True
    return padded, is_real


class CULaneParseError(ValueError):
    pass


def _lane_line(points: np.ndarray) -> str:
    return " ".join(f"{v:.5f}" for v in points.reshape(-1))


def write_lanes_file(lanes: list[Polyline], path: str) -> None:
    with open(path, "w") as f:
        for lane in lanes:
            f.write(_lane_line(lane.points) + "\n")


def read_lanes_file(path: str) -> list[Polyline]:
    """Parse a CULane annotation file: one lane per line, "x1 y1 x2 y2 ..."."""
    lanes = []
    with open(path) as f:
        for lineno, line in enumerate(f, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                vals = np.array([float(v) for v in line.split()])
                if vals.size < 4 or vals.size % 2:
                    raise ValueError("need an even number of >= 4 coordinates")
                lanes.append(Polyline(vals.reshape(-1, 2)))
            except ValueError as e:
                raise CULaneParseError(f"{path}:{lineno}: {e}") from None
    return lanes


def write_culane(scenes: list[LaneScene], out_dir: str) -> list[str]:
    """Write scenes in CULane layout: PNG images, .lines.txt annotations and
    a list.txt manifest of relative image paths. Returns the relative paths."""
    from PIL import Image

    os.makedirs(out_dir, exist_ok=True)
    rel_paths = []
    for i, scene in enumerate(scenes):
        rel = f"{i:05d}.png"
        img = Image.fromarray((scene.image * 255).round().astype(np.uint8))
        img.save(os.path.join(out_dir, rel))
        write_lanes_file(scene.lanes,
                         os.path.join(out_dir, f"{i:05d}.lines.txt"))
        rel_paths.append(rel)
    with open(os.path.join(out_dir, "list.txt"), "w") as f:
        f.writelines(p + "\n" for p in rel_paths)
    return rel_paths


def read_culane(data_dir: str) -> tuple[list[str], list[list[Polyline]]]:
    """Read a CULane-layout dataset back: (relative image paths, lanes)."""
    list_path = os.path.join(data_dir, "list.txt")
    with open(list_path) as f:
        rel_paths = [line.strip() for line in f if line.strip()]
    lanes = []
    for rel in rel_paths:
        stem = os.path.splitext(rel)[0]
        lanes.append(read_lanes_file(os.path.join(data_dir, stem + ".lines.txt")))
    return rel_paths, lanes
