"""Run configuration: one flat key-value file (YAML) merged with CLI
overrides, validated up front, hashed for checkpoint compatibility."""

import dataclasses
import hashlib
import json
from dataclasses import dataclass

import yaml

from .diffusion import ScaleConfig
from .geometry import LaneGrid
from .model import ModelConfig
from .synthdata import PAD_MODES, SceneConfig


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 24
    batch_size: int = 4
    learning_rate: float = 3e-4
    n_train: int = 160
    noise_scale: float = 2.0
    t_max: int = 1000
    seed: int = 0
    pad_mode: str = "gaussian"

    def __post_init__(self):
        if min(self.epochs, self.batch_size, self.n_train, self.t_max) <= 0:
            raise ValueError("epochs, batch_size, n_train, t_max must be positive")
        if self.learning_rate <= 0 or self.noise_scale <= 0:
            raise ValueError("learning_rate and noise_scale must be positive")
        if self.pad_mode not in PAD_MODES:
            raise ValueError(f"pad_mode must be one of {PAD_MODES}")


@dataclass(frozen=True)
class InferConfig:
    sampling_steps: int = 2
    fg_threshold: float = 0.4
    nms_iou: float = 0.5
    top_k: int = 6

    def __post_init__(self):
        if self.sampling_steps < 1:
            raise ValueError("sampling_steps must be >= 1")
        if not 0.0 < self.fg_threshold < 1.0:
            raise ValueError("fg_threshold must be in (0, 1)")


@dataclass(frozen=True)
class RunConfig:
    # image / lane grid
    img_w: int = 256
    img_h: int = 256
    n_points: int = 36
    y_min_frac: float = 0.3
    # synthetic scenes; denser scenes give each lane fewer competing anchors,
    # which stabilizes the assignment targets the classifier has to learn
    lanes_min: int = 3
    lanes_max: int = 6
    curvature_max: float = 4e-4
    noise_std: float = 0.03
    seed: int = 0
    # model
    fpn_channels: int = 64
    d_model: int = 192
    n_heads: int = 4
    n_blocks: int = 3
    n_samples: int = 36
    dyn_hidden: int = 16
    aux_anchors: int = 40
    max_lanes: int = 6
    # training; small batches double the optimizer-step count for a fixed
    # epoch budget, which matters at the fixed base learning rate
    epochs: int = 24
    batch_size: int = 4
    learning_rate: float = 3e-4
    n_train: int = 160
    noise_scale: float = 2.0
    t_max: int = 1000
    pad_mode: str = "gaussian"
    # inference
    sampling_steps: int = 2
    fg_threshold: float = 0.4
    nms_iou: float = 0.5
    top_k: int = 6

    def grid(self) -> LaneGrid:
        return LaneGrid(self.img_w, self.img_h, self.y_min_frac * self.img_h,
                        float(self.img_h), self.n_points)

    def scene_config(self) -> SceneConfig:
        return SceneConfig(img_w=self.img_w, img_h=self.img_h,
                           lanes_min=self.lanes_min, lanes_max=self.lanes_max,
                           curvature_max=self.curvature_max,
                           noise_std=self.noise_std, seed=self.seed)

    def model_config(self) -> ModelConfig:
        return ModelConfig(img_w=self.img_w, img_h=self.img_h,
                           n_points=self.n_points, y_min_frac=self.y_min_frac,
                           fpn_channels=self.fpn_channels, d_model=self.d_model,
                           n_heads=self.n_heads, n_blocks=self.n_blocks,
                           n_samples=self.n_samples, dyn_hidden=self.dyn_hidden,
                           aux_anchors=self.aux_anchors, max_lanes=self.max_lanes)

    def train_config(self) -> TrainConfig:
        return TrainConfig(epochs=self.epochs, batch_size=self.batch_size,
                           learning_rate=self.learning_rate, n_train=self.n_train,
                           noise_scale=self.noise_scale, t_max=self.t_max,
                           seed=self.seed, pad_mode=self.pad_mode)

    def infer_config(self) -> InferConfig:
        return InferConfig(sampling_steps=self.sampling_steps,
                           fg_threshold=self.fg_threshold,
                           nms_iou=self.nms_iou, top_k=self.top_k)

    def scale_config(self) -> ScaleConfig:
        return ScaleConfig(noise_scale=self.noise_scale)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def config_hash(self) -> str:
        """Hash of everything that shapes the model graph and data geometry."""
        keys = ("img_w", "img_h", "n_points", "y_min_frac", "fpn_channels",
                "d_model", "n_heads", "n_blocks", "n_samples", "dyn_hidden",
                "aux_anchors", "max_lanes", "n_train", "noise_scale", "t_max")
        d = {k: getattr(self, k) for k in keys}
        return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()[:16]


def load_config(path: str | None = None, overrides: dict | None = None) -> RunConfig:
    """RunConfig from a YAML file plus overrides; unknown keys are rejected."""
    data: dict = {}
    if path is not None:
        with open(path) as f:
            loaded = yaml.safe_load(f) or {}
        if not isinstance(loaded, dict):
            raise ValueError(f"{path}: config must be a key-value mapping")
        data.update(loaded)
    for k, v in (overrides or {}).items():
        if v is not None:
            data[k] = v
    known = {f.name for f in dataclasses.fields(RunConfig)}
    unknown = sorted(set(data) - known)
    if unknown:
        raise ValueError(f"unknown config keys: {', '.join(unknown)}")
    cfg = RunConfig(**data)
    cfg.grid()  # validate grid invariants eagerly
    cfg.scene_config()
    cfg.train_config()
    cfg.infer_config()
    return cfg
