"""CT windowing, align-corners trilinear resampling and training augmentation."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from muval.errors import ConfigError, NumericError
from muval.volume_io import Volume


@dataclass(frozen=True)
class PreprocessConfig:
    window_low: float = -100.0
    window_high: float = 200.0
    target_shape: tuple[int, int, int] = (64, 256, 256)
    max_translation: float = 0.1  # fraction of each extent
    max_rotation_deg: float = 10.0  # in the (h, w) plane
    flip_prob: float = 0.5
    flip_axes: tuple[str, ...] = ("h", "w")
    noise_sigma: float = 0.01

    def __post_init__(self):
        if not self.window_low < self.window_high:
            raise ConfigError("window_low must be below window_high")
        if len(self.target_shape) != 3 or min(self.target_shape) < 1:
            raise ConfigError(f"bad target shape {self.target_shape}")
        if set(self.flip_axes) - {"h", "w"}:
            raise ConfigError(f"only h and w can be flipped, got {self.flip_axes}")
        if not 0.0 <= self.flip_prob <= 1.0:
            raise ConfigError(f"flip_prob must lie in [0, 1], got {self.flip_prob}")
        if min(self.max_translation, self.max_rotation_deg, self.noise_sigma) < 0:
            raise ConfigError("augmentation magnitudes must be non-negative")


def window_normalize(v: Volume, low: float = -100.0, high: float = 200.0) -> Volume:
    """Clamp CT numbers to ``[low, high]`` and map that window onto ``[0, 1]``."""
    if not low < high:
        raise ConfigError("low must be below high")
    x = np.asarray(v.voxels, dtype=np.float64)
    if not np.isfinite(x).all():
        raise NumericError("non-finite CT number")
    return Volume((np.clip(x, low, high) - low) / (high - low))


def _axis_weights(src: int, dst: int):
    if dst == 1:
        pos = np.array([(src - 1) / 2.0])
    else:
        pos = np.arange(dst) * ((src - 1) / (dst - 1))
    lo = np.minimum(np.floor(pos).astype(int), src - 1)
    hi = np.minimum(lo + 1, src - 1)
    return lo, hi, pos - lo


def resize_trilinear(v: Volume, target: tuple[int, int, int]) -> Volume:
    """Align-corners trilinear resampling, done as three separable 1D passes."""
    target = tuple(int(t) for t in target)
    if len(target) != 3 or min(target) < 1:
        raise ConfigError(f"bad target shape {target}")
    x = np.asarray(v.voxels, dtype=np.float64)
    for axis, dst in enumerate(target):
        lo, hi, frac = _axis_weights(x.shape[axis], dst)
        shape = [1, 1, 1]
        shape[axis] = dst
        frac = frac.reshape(shape)
        x = np.take(x, lo, axis=axis) * (1.0 - frac) + np.take(x, hi, axis=axis) * frac
    return Volume(x)


def _shift(x: np.ndarray, offsets) -> np.ndarray:
    out = np.zeros_like(x)
    src, dst = [], []
    for off, n in zip(offsets, x.shape):
        if off >= 0:
            src.append(slice(0, n - off))
            dst.append(slice(off, n))
        else:
            src.append(slice(-off, n))
            dst.append(slice(0, n + off))
    out[tuple(dst)] = x[tuple(src)]
    return out


def augment(v: Volume, cfg: PreprocessConfig, seed: int) -> Volume:
    """Translate, rotate in-plane, flip, add noise, clamp; deterministic in ``seed``."""
    rng = np.random.default_rng(seed)
    x = np.asarray(v.voxels, dtype=np.float64)

    offsets = []
    for n in x.shape:
        lim = int(np.floor(cfg.max_translation * n))
        offsets.append(int(rng.integers(-lim, lim + 1)) if lim > 0 else 0)
    if any(offsets):
        x = _shift(x, offsets)

    angle = rng.uniform(-cfg.max_rotation_deg, cfg.max_rotation_deg) if cfg.max_rotation_deg > 0 else 0.0
    if angle != 0.0:
        x = ndimage.rotate(x, angle, axes=(1, 2), reshape=False, order=1, mode="constant", cval=0.0)

    for name, axis in (("h", 1), ("w", 2)):
        if name in cfg.flip_axes and rng.random() < cfg.flip_prob:
            x = np.flip(x, axis=axis)

    if cfg.noise_sigma > 0:
        x = x + rng.normal(0.0, cfg.noise_sigma, size=x.shape)
    return Volume(np.clip(x, 0.0, 1.0))


def prepare(v: Volume, cfg: PreprocessConfig, window: bool = True) -> Volume:
    """Model-ready volume: optional windowing, then resampling to the target shape."""
    if window:
        v = window_normalize(v, cfg.window_low, cfg.window_high)
    return resize_trilinear(v, cfg.target_shape)
