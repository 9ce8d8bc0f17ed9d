"""Encoder + feature pyramid, polyline RoI pooling, hybrid diffusion decoder
(3 stacked blocks), auxiliary head with learnable anchors, segmentation head.

Anchors cross this module as tensors of shape [B, n, 4 + N]:
(start_x, start_y, angle) normalized to [0, 1], length in rows, then N
per-row pixel offsets. Row ordering matches geometry.y_grid (top to bottom).
"""

import math
from dataclasses import dataclass

import torch
import torch.nn.functional as F
from torch import nn

from .geometry import ANGLE_CLAMP, LaneGrid


@dataclass(frozen=True)
class ModelConfig:
    img_w: int = 256
    img_h: int = 256
    n_points: int = 36          # rows per lane (N)
    y_min_frac: float = 0.3     # top of the lane region / img_h
    fpn_channels: int = 64      # C
    d_model: int = 192
    n_heads: int = 4
    n_blocks: int = 3
    n_samples: int = 36         # RoI sample points per anchor (N_s)
    dyn_hidden: int = 16
    aux_anchors: int = 40       # learnable anchors in the auxiliary head (M)
    max_lanes: int = 6          # segmentation classes - 1

    def grid(self) -> LaneGrid:
        return LaneGrid(self.img_w, self.img_h, self.y_min_frac * self.img_h,
                        float(self.img_h), self.n_points)


@dataclass
class DecoderOutput:
    """Per-anchor predictions of one decoder block (refined, absolute)."""
    cls_logits: torch.Tensor  # [B, n, 2] (bg, fg)
    triple: torch.Tensor      # [B, n, 3] normalized start_x, start_y, angle
    length: torch.Tensor      # [B, n] rows
    offsets: torch.Tensor     # [B, n, N] px

    def fg_prob(self) -> torch.Tensor:
        return torch.softmax(self.cls_logits, dim=-1)[..., 1]

    def as_tensor(self) -> torch.Tensor:
        return torch.cat([self.cls_logits, self.triple,
                          self.length.unsqueeze(-1), self.offsets], dim=-1)

    def refined_anchors(self) -> torch.Tensor:
        return torch.cat([self.triple, self.length.unsqueeze(-1),
                          self.offsets], dim=-1)


def anchor_row_x(anchors: torch.Tensor, grid: LaneGrid) -> torch.Tensor:
    """Per-row lane x (ray + offsets) for anchor tensors: [..., n, N]."""
    ys = torch.linspace(grid.y_min, grid.y_max, grid.n_points,
                        dtype=anchors.dtype, device=anchors.device)
    sx = anchors[..., 0:1] * grid.img_w
    sy = anchors[..., 1:2] * grid.img_h
    ang = anchors[..., 2:3].clamp(*ANGLE_CLAMP)
    cot = 1.0 / torch.tan(ang * math.pi)
    return sx + (sy - ys) * cot + anchors[..., 4:]


def anchor_row_mask(anchors: torch.Tensor, grid: LaneGrid) -> torch.Tensor:
    """Bool validity mask [..., n, N]: `length` rows upward from the start row."""
    idx = torch.arange(grid.n_points, device=anchors.device)
    sy = anchors[..., 1:2] * grid.img_h
    start = torch.round((sy - grid.y_min) / grid.spacing).clamp(0, grid.n_points - 1)
    n_valid = torch.round(anchors[..., 3:4]).clamp(0, grid.n_points)
    return (idx <= start) & (idx > start - n_valid)


def time_embedding(t: torch.Tensor, dim: int) -> torch.Tensor:
    """Sinusoidal embedding of integer timesteps, [B] -> [B, dim]."""
    half = dim // 2
    freqs = torch.exp(-math.log(10000.0) * torch.arange(half, dtype=torch.float32,
                                                        device=t.device) / half)
    args = t.float()[:, None] * freqs[None, :]
    return torch.cat([torch.sin(args), torch.cos(args)], dim=-1)


class ConvBNAct(nn.Sequential):
    def __init__(self, c_in, c_out, stride=1):
        super().__init__(
            nn.Conv2d(c_in, c_out, 3, stride=stride, padding=1, bias=False),
            nn.BatchNorm2d(c_out),
            nn.ReLU(inplace=True),
        )


class Encoder(nn.Module):
    """Small 4-stage conv backbone with an add-merge top-down pyramid.

    Returns 3 levels [M_0, M_1, M_2] at strides 8/16/32, all fpn_channels wide.
    """

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        chans = (32, 64, 96, 128)
        self.stem = nn.Sequential(ConvBNAct(3, chans[0], 2), ConvBNAct(chans[0], chans[0]))
        self.stage2 = nn.Sequential(ConvBNAct(chans[0], chans[1], 2), ConvBNAct(chans[1], chans[1]))
        self.stage3 = nn.Sequential(ConvBNAct(chans[1], chans[2], 2), ConvBNAct(chans[2], chans[2]))
        self.stage4 = nn.Sequential(ConvBNAct(chans[2], chans[3], 2), ConvBNAct(chans[3], chans[3]))
        self.stage5 = nn.Sequential(ConvBNAct(chans[3], chans[3], 2), ConvBNAct(chans[3], chans[3]))
        c = cfg.fpn_channels
        self.lateral = nn.ModuleList([nn.Conv2d(ch, c, 1) for ch in (chans[2], chans[3], chans[3])])
        self.smooth = nn.ModuleList([nn.Conv2d(c, c, 3, padding=1) for _ in range(3)])

    def forward(self, image: torch.Tensor) -> list[torch.Tensor]:
        if image.shape[-2:] != (self.cfg.img_h, self.cfg.img_w):
            raise ValueError(f"expected {self.cfg.img_h}x{self.cfg.img_w} input, "
                             f"got {tuple(image.shape[-2:])}")
        x = self.stem(image)        # stride 2
        c2 = self.stage2(x)         # stride 4
        c3 = self.stage3(c2)        # stride 8
        c4 = self.stage4(c3)        # stride 16
        c5 = self.stage5(c4)        # stride 32
        p5 = self.lateral[2](c5)
        p4 = self.lateral[1](c4) + F.interpolate(p5, size=c4.shape[-2:], mode="nearest")
        p3 = self.lateral[0](c3) + F.interpolate(p4, size=c3.shape[-2:], mode="nearest")
        return [self.smooth[0](p3), self.smooth[1](p4), self.smooth[2](p5)]


def roi_pool(anchors: torch.Tensor, level: torch.Tensor, grid: LaneGrid,
             n_samples: int, proj: nn.Module | None = None) -> torch.Tensor:
    """Bilinear RoI features along each anchor's polyline.

    anchors: [B, n, 4+N]; level: [B, C, H, W]. Samples n_samples points at y
    uniform in [y_min, y_max]; out-of-image samples read 0. Returns
    [B, n, C * n_samples], or the projected [B, n, d] when proj is given.
    """
    B, n = anchors.shape[:2]
    ys = torch.linspace(grid.y_min, grid.y_max, n_samples,
                        dtype=anchors.dtype, device=anchors.device)
    row_x = anchor_row_x(anchors, grid)  # [B, n, N]
    if n_samples == grid.n_points:
        xs = row_x
    else:
        # linear interpolation of per-row x onto the sample rows
        rows = torch.linspace(0, grid.n_points - 1, n_samples, device=anchors.device)
        lo = rows.floor().long().clamp(0, grid.n_points - 2)
        w = (rows - lo.float())
        xs = row_x[..., lo] * (1 - w) + row_x[..., lo + 1] * w
    gx = xs / grid.img_w * 2.0 - 1.0                       # [B, n, S]
    gy = (ys / grid.img_h * 2.0 - 1.0).expand_as(gx)
    pts = torch.stack([gx, gy], dim=-1)                    # [B, n, S, 2]
    feats = F.grid_sample(level, pts, mode="bilinear",
                          padding_mode="zeros", align_corners=False)
    feats = feats.permute(0, 2, 3, 1).reshape(B, n, -1)    # [B, n, S*C] -> flat
    return proj(feats) if proj is not None else feats


class PredictionHead(nn.Module):
    """Maps decoder features to classification + lane regression outputs."""

    def __init__(self, d_model: int, n_offsets: int):
        super().__init__()
        self.shared = nn.Sequential(nn.Linear(d_model, d_model), nn.ReLU(inplace=True))
        self.cls = nn.Linear(d_model, 2)
        self.triple = nn.Linear(d_model, 3)
        self.length = nn.Linear(d_model, 1)
        self.offsets = nn.Linear(d_model, n_offsets)
        nn.init.zeros_(self.offsets.weight)
        nn.init.zeros_(self.offsets.bias)
        # the triple is refined in logit space relative to the input anchor;
        # zero init makes the head an identity map, which keeps predictions
        # tied to their anchor and stops every anchor regressing to one mean
        nn.init.zeros_(self.triple.weight)
        nn.init.zeros_(self.triple.bias)
        # start at full-grid length: the row validity mask is hard (round +
        # compare), so length gets no gradient through the Line-IoU loss and
        # a near-zero softplus init would have to crawl up rows via the small
        # smooth-L1 term alone
        nn.init.zeros_(self.length.weight)
        nn.init.constant_(self.length.bias, float(n_offsets))

    def forward(self, feats: torch.Tensor, anchors: torch.Tensor) -> DecoderOutput:
        h = self.shared(feats)
        prev = torch.special.logit(anchors[..., :3].clamp(1e-4, 1 - 1e-4))
        triple = torch.sigmoid(prev + self.triple(h))
        length = F.softplus(self.length(h)).squeeze(-1)
        offsets = anchors[..., 4:] + self.offsets(h)  # deltas on previous offsets
        return DecoderOutput(self.cls(h), triple, length, offsets)


class HybridBlock(nn.Module):
    """One decoder stage fusing a global path (RoIGather cross-attention with
    time scale/shift) and a local path (self-attention + dynamic convolution)
    through zero-initialized learnable scalars."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        d, c = cfg.d_model, cfg.fpn_channels
        self.cfg = cfg
        self.roi_proj = nn.Sequential(
            nn.Linear(c * cfg.n_samples, d), nn.ReLU(inplace=True), nn.LayerNorm(d))
        # local path
        self.self_attn = nn.MultiheadAttention(d, cfg.n_heads, batch_first=True)
        self.norm_sa = nn.LayerNorm(d)
        h = cfg.dyn_hidden
        self.dyn_params = nn.Linear(d, 2 * d * h)
        self.norm_dyn1 = nn.LayerNorm(h)
        self.norm_dyn2 = nn.LayerNorm(d)
        # global path (RoIGather)
        self.kv_proj = nn.Linear(c, d)
        # keep the gathered features O(1) so the residual query (the anchor's
        # identity) is not drowned out by unnormalized pyramid activations
        self.norm_kv = nn.LayerNorm(d)
        self.cross_attn = nn.MultiheadAttention(d, cfg.n_heads, batch_first=True)
        self.norm_ca = nn.LayerNorm(d)
        self.w_in = nn.Parameter(torch.zeros(()))
        self.w_out = nn.Parameter(torch.zeros(()))
        # time conditioning + output transform
        self.time_mlp = nn.Sequential(nn.Linear(d, d), nn.SiLU(), nn.Linear(d, 2 * d))
        nn.init.zeros_(self.time_mlp[-1].weight)
        nn.init.zeros_(self.time_mlp[-1].bias)
        self.ffn = nn.Sequential(nn.Linear(d, d), nn.ReLU(inplace=True), nn.Linear(d, d))
        self.norm_out = nn.LayerNorm(d)
        self.head = PredictionHead(d, cfg.n_points)

    def _local(self, p: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        sa, _ = self.self_attn(p, p, p, need_weights=False)
        local_pre = self.norm_sa(p + sa)
        B, n, d = local_pre.shape
        h = self.cfg.dyn_hidden
        k1, k2 = self.dyn_params(local_pre).split([d * h, d * h], dim=-1)
        k1 = k1.view(B, n, d, h)
        k2 = k2.view(B, n, h, d)
        x = local_pre.unsqueeze(-2)                      # [B, n, 1, d]
        x = F.relu(self.norm_dyn1(x @ k1))
        x = F.relu(self.norm_dyn2(x @ k2)).squeeze(-2)   # [B, n, d]
        return local_pre, x

    def forward(self, anchors: torch.Tensor, level: torch.Tensor,
                t_embed: torch.Tensor | None) -> tuple[DecoderOutput, torch.Tensor]:
        p = roi_pool(anchors, level, self.cfg.grid(), self.cfg.n_samples, self.roi_proj)
        local_pre, local_post = self._local(p)
        kv = self.norm_kv(self.kv_proj(level.flatten(2).transpose(1, 2)))  # [B, HW, d]
        q = p + self.w_in * local_pre
        gathered, _ = self.cross_attn(q, kv, kv, need_weights=False)
        fused = self.norm_ca(q + gathered) + self.w_out * local_post
        if t_embed is not None:
            scale, shift = self.time_mlp(t_embed).unsqueeze(1).chunk(2, dim=-1)
            fused = fused * (1.0 + scale) + shift
        fused = self.norm_out(fused + self.ffn(fused))
        out = self.head(fused, anchors)
        return out, out.refined_anchors()


class SegHead(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        c = cfg.fpn_channels
        self.net = nn.Sequential(ConvBNAct(c, c), nn.Conv2d(c, cfg.max_lanes + 1, 1))

    def forward(self, m0: torch.Tensor) -> torch.Tensor:
        return self.net(m0)


class LaneDiffusionModel(nn.Module):
    """Full detector: encoder, 3 hybrid blocks, aux head, segmentation head."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        self.encoder = Encoder(cfg)
        self.blocks = nn.ModuleList([HybridBlock(cfg) for _ in range(cfg.n_blocks)])
        self.time_proj = nn.Sequential(nn.Linear(cfg.d_model, cfg.d_model),
                                       nn.SiLU(), nn.Linear(cfg.d_model, cfg.d_model))
        self.aux_block = HybridBlock(cfg)
        raw = torch.linspace(0.1, 0.9, cfg.aux_anchors)
        g = torch.Generator().manual_seed(0)
        init = torch.stack([raw[torch.randperm(cfg.aux_anchors, generator=g)]
                            for _ in range(3)], dim=-1)
        self.aux_anchor_params = nn.Parameter(init)  # [M, 3]
        self.seg_head = SegHead(cfg)

    def encode(self, image: torch.Tensor) -> list[torch.Tensor]:
        return self.encoder(image)

    def decoder_forward(self, anchors: torch.Tensor, pyramid: list[torch.Tensor],
                        t: torch.Tensor) -> list[DecoderOutput]:
        """Run the block stack coarse-to-fine; block b reads level M_{2-b}."""
        t_embed = self.time_proj(time_embedding(t, self.cfg.d_model))
        outs = []
        for b, block in enumerate(self.blocks):
            level = pyramid[self.cfg.n_blocks - 1 - b]
            out, anchors = block(anchors, level, t_embed)
            outs.append(out)
        return outs

    def aux_anchors(self, batch: int) -> torch.Tensor:
        """Learnable anchors as an anchor tensor [B, M, 4+N]."""
        p = self.aux_anchor_params.clamp(0.0, 1.0)
        m = p.shape[0]
        full = torch.cat([
            p,
            torch.full((m, 1), float(self.cfg.n_points), dtype=p.dtype, device=p.device),
            torch.zeros(m, self.cfg.n_points, dtype=p.dtype, device=p.device),
        ], dim=-1)
        return full.unsqueeze(0).expand(batch, -1, -1)

    def aux_forward(self, pyramid: list[torch.Tensor]) -> list[DecoderOutput]:
        """Training-only predictions from the learnable anchors, one per level."""
        if not self.training:
            raise RuntimeError("auxiliary head is excluded from the inference graph")
        anchors = self.aux_anchors(pyramid[0].shape[0])
        return [self.aux_block(anchors, level, None)[0] for level in pyramid]

    def seg_forward(self, pyramid: list[torch.Tensor]) -> torch.Tensor:
        if not self.training:
            raise RuntimeError("segmentation head is excluded from the inference graph")
        return self.seg_head(pyramid[0])
