"""Cosine noise schedule, signal-space normalization, forward corruption and
deterministic DDIM reverse steps over the 3-parameter diffusion target
(start_x, start_y, angle)."""

import math
from dataclasses import dataclass

import numpy as np

COSINE_S = 0.008
ALPHA_FLOOR = 1e-5


@dataclass(frozen=True)
class ScaleConfig:
    noise_scale: float = 2.0

    def __post_init__(self):
        if self.noise_scale <= 0:
            raise ValueError("noise_scale must be positive")


@dataclass(frozen=True)
class NoiseSchedule:
    t_max: int
    alpha_cumprod: np.ndarray  # (t_max,), strictly decreasing in (0, 1]


def cosine_schedule(t_max: int) -> NoiseSchedule:
    """Cumulative alpha table: alpha_bar(t) = f(t)/f(0) with
    f(t) = cos^2(((t/t_max + s) / (1 + s)) * pi/2), s = 0.008."""
    if t_max < 1:
        raise ValueError("t_max must be >= 1")
    t = np.arange(t_max, dtype=np.float64)
    f = np.cos(((t / t_max) + COSINE_S) / (1 + COSINE_S) * math.pi / 2) ** 2
    bar = np.minimum(f / f[0], 1.0)
    # floor the tail while keeping the table strictly decreasing
    below = bar <= ALPHA_FLOOR
    if below.any():
        n = int(below.sum())
        bar[below] = ALPHA_FLOOR * (1.0 + np.arange(n, 0, -1) * 1e-6)
    return NoiseSchedule(t_max, bar)


def normalize(p, cfg: ScaleConfig):
    """[0, 1] parameter -> signal space [-scale, scale]."""
    return (np.asarray(p, dtype=np.float64) * 2.0 - 1.0) * cfg.noise_scale


def denormalize(x, cfg: ScaleConfig):
    """Signal space -> [0, 1], clamping out-of-range signals first."""
    s = cfg.noise_scale
    x = np.clip(np.asarray(x, dtype=np.float64), -s, s)
    return (x / s + 1.0) / 2.0


def corrupt(x0, t: int, eps, sched: NoiseSchedule):
    """x_t = sqrt(abar_t) * x0 + sqrt(1 - abar_t) * eps."""
    if not 0 <= t < sched.t_max:
        raise ValueError(f"t={t} outside [0, {sched.t_max})")
    abar = sched.alpha_cumprod[t]
    return math.sqrt(abar) * np.asarray(x0) + math.sqrt(1.0 - abar) * np.asarray(eps)


def ddim_step(x_t, x0_pred, t_now: int, t_next: int, sched: NoiseSchedule,
              cfg: ScaleConfig | None = None):
    """Deterministic (eta=0) DDIM update from t_now to t_next.

    x0_pred is clamped to [-scale, scale] first when a ScaleConfig is given;
    t_next < 0 returns the clean prediction.
    """
    if t_next >= t_now:
        raise ValueError(f"t_next={t_next} must be < t_now={t_now}")
    x_t = np.asarray(x_t, dtype=np.float64)
    x0_pred = np.asarray(x0_pred, dtype=np.float64)
    if cfg is not None:
        x0_pred = np.clip(x0_pred, -cfg.noise_scale, cfg.noise_scale)
    if t_next < 0:
        return x0_pred
    abar_now = sched.alpha_cumprod[t_now]
    abar_next = sched.alpha_cumprod[t_next]
    eps_hat = (x_t - math.sqrt(abar_now) * x0_pred) / math.sqrt(1.0 - abar_now)
    return math.sqrt(abar_next) * x0_pred + math.sqrt(1.0 - abar_next) * eps_hat


def time_pairs(steps: int, t_max: int) -> list[tuple[int, int]]:
    """Evenly spaced (t_now, t_next) sampling pairs from t_max-1 down to -1."""
    if not 1 <= steps <= t_max:
        raise ValueError("need 1 <= steps <= t_max")
    times = np.linspace(t_max - 1, -1, steps + 1)
    times = np.unique(np.round(times).astype(int))[::-1]
    return list(zip(times[:-1].tolist(), times[1:].tolist()))
