"""Residual 3D convolutional backbone, two-way softmax head and cross-entropy."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping

import numpy as np

from muval import tensor as T
from muval.errors import ConfigError, ContractError, DimensionError

BN_EPS = 1e-5
BN_MOMENTUM = 0.1


@dataclass(frozen=True)
class BackboneConfig:
    """Stem plus basic-block stages; ``n`` is the last stage width."""

    stem_kernel: tuple[int, int, int] = (3, 3, 3)
    stem_stride: tuple[int, int, int] = (1, 1, 1)
    blocks: tuple[int, ...] = (1, 1, 1, 1)
    widths: tuple[int, ...] = (8, 16, 32, 64)
    stage_strides: tuple[int, ...] = (1, 2, 2, 2)
    norm: str = "batch"
    max_pool: bool = True
    in_channels: int = 1

    def __post_init__(self):
        if not (len(self.blocks) == len(self.widths) == len(self.stage_strides)) or not self.blocks:
            raise ConfigError("blocks, widths and stage_strides must have the same non-zero length")
        if self.norm not in ("batch", "none"):
            raise ConfigError(f"unknown norm mode {self.norm!r}")
        if min(self.blocks) < 1 or min(self.widths) < 1:
            raise ConfigError("every stage needs at least one block and one channel")

    @property
    def n(self) -> int:
        return self.widths[-1]

    @property
    def stem_padding(self) -> tuple[int, int, int]:
        return tuple(k // 2 for k in self.stem_kernel)


DESK = BackboneConfig()
CANONICAL = BackboneConfig(stem_kernel=(7, 7, 7), stem_stride=(2, 2, 2), blocks=(3, 4, 6, 3),
                           widths=(64, 128, 256, 512))


def _block_plan(cfg: BackboneConfig):
    """Yield (prefix, c_in, c_out, stride, projected) for every basic block."""
    c_in = cfg.widths[0]
    for s, (nb, width, stride) in enumerate(zip(cfg.blocks, cfg.widths, cfg.stage_strides), start=1):
        for b in range(nb):
            st = stride if b == 0 else 1
            yield f"layer{s}.{b}", c_in, width, st, (st != 1 or c_in != width)
            c_in = width


def backbone_shapes(cfg: BackboneConfig) -> tuple[dict[str, tuple], dict[str, tuple]]:
    """(learnable parameter shapes, running-statistic buffer shapes), in forward order."""
    params, buffers = {}, {}

    def norm(prefix, c):
        if cfg.norm == "batch":
            params[f"{prefix}.gamma"] = (c,)
            params[f"{prefix}.beta"] = (c,)
            buffers[f"{prefix}.running_mean"] = (c,)
            buffers[f"{prefix}.running_var"] = (c,)

    params["stem.conv"] = (cfg.widths[0], cfg.in_channels, *cfg.stem_kernel)
    norm("stem.bn", cfg.widths[0])
    for prefix, c_in, c_out, _, projected in _block_plan(cfg):
        params[f"{prefix}.conv1"] = (c_out, c_in, 3, 3, 3)
        norm(f"{prefix}.bn1", c_out)
        params[f"{prefix}.conv2"] = (c_out, c_out, 3, 3, 3)
        norm(f"{prefix}.bn2", c_out)
        if projected:
            params[f"{prefix}.down.conv"] = (c_out, c_in, 1, 1, 1)
            norm(f"{prefix}.down.bn", c_out)
    return params, buffers


def _ext(n, k, s, p):
    return (n + 2 * p - k) // s + 1


def feature_extents(cfg: BackboneConfig, shape: tuple[int, int, int]) -> list[tuple[str, tuple[int, int, int]]]:
    """Spatial extents after the stem, pool and each stage; ConfigError names the failing stage."""
    sp = tuple(_ext(n, k, s, p) for n, k, s, p in zip(shape, cfg.stem_kernel, cfg.stem_stride, cfg.stem_padding))
    out = [("stem", sp)]
    if min(sp) < 1:
        raise ConfigError(f"input {shape} underflows at stem: {sp}")
    if cfg.max_pool:
        sp = tuple(_ext(n, 3, 2, 1) for n in sp)
        out.append(("pool", sp))
    for s, stride in enumerate(cfg.stage_strides, start=1):
        sp = tuple(_ext(n, 3, stride, 1) for n in sp)
        if min(sp) < 1:
            raise ConfigError(f"input {shape} underflows at layer{s}: {sp}")
        out.append((f"layer{s}", sp))
    return out


def _norm(x, params, buffers, prefix, train, stats):
    if f"{prefix}.gamma" not in params:
        return x
    g, b = params[f"{prefix}.gamma"], params[f"{prefix}.beta"]
    if train:
        y, mu, var = T.batch_norm(x, g, b, BN_EPS)
        stats[prefix] = (mu, var, x.data.size // x.shape[1])
        return y
    return T.affine_norm(x, g, b, buffers[f"{prefix}.running_mean"], buffers[f"{prefix}.running_var"], BN_EPS)


def backbone_forward(x, params: Mapping, cfg: BackboneConfig, train_mode: bool,
                     buffers: Mapping[str, np.ndarray] | None = None):
    """Features ``(N, n)`` for a batch ``(N, C_in, D, H, W)``.

    Returns ``(features, stats)``; in training mode ``stats`` holds each
    norm layer's batch mean, biased variance and element count so the caller
    can advance running statistics with :func:`update_running_stats`.
    """
    x = T.tensor(x)
    if x.ndim != 5 or x.shape[1] != cfg.in_channels:
        raise DimensionError(f"backbone expects (N, {cfg.in_channels}, D, H, W), got {x.shape}")
    feature_extents(cfg, x.shape[2:])
    if not train_mode and cfg.norm == "batch" and buffers is None:
        raise ContractError("evaluation mode needs running statistics")
    stats: dict = {}
    h = T.conv3d(x, params["stem.conv"], cfg.stem_stride, cfg.stem_padding)
    h = T.relu(_norm(h, params, buffers, "stem.bn", train_mode, stats))
    if cfg.max_pool:
        h = T.max_pool3d(h, 3, 2, 1)
    for prefix, _, _, stride, projected in _block_plan(cfg):
        out = T.conv3d(h, params[f"{prefix}.conv1"], stride, 1)
        out = T.relu(_norm(out, params, buffers, f"{prefix}.bn1", train_mode, stats))
        out = T.conv3d(out, params[f"{prefix}.conv2"], 1, 1)
        out = _norm(out, params, buffers, f"{prefix}.bn2", train_mode, stats)
        if projected:
            short = T.conv3d(h, params[f"{prefix}.down.conv"], stride, 0)
            short = _norm(short, params, buffers, f"{prefix}.down.bn", train_mode, stats)
        else:
            short = h
        h = T.relu(out + short)
    return h.mean(axis=(2, 3, 4)), stats


def update_running_stats(buffers: dict[str, np.ndarray], stats: Mapping, momentum: float = BN_MOMENTUM) -> None:
    """Exponential running averages; variance uses the unbiased batch estimate."""
    for prefix, (mu, var, count) in stats.items():
        rm, rv = f"{prefix}.running_mean", f"{prefix}.running_var"
        unbiased = var * count / max(count - 1, 1)
        buffers[rm] = ((1 - momentum) * buffers[rm] + momentum * mu).astype(buffers[rm].dtype)
        buffers[rv] = ((1 - momentum) * buffers[rv] + momentum * unbiased).astype(buffers[rv].dtype)


def classify(f, W) -> T.Tensor:
    """Softmax over ``W @ f``; ``W`` is (2, n). Batched ``f`` is (N, n)."""
    f, W = T.tensor(f), T.tensor(W)
    if W.ndim != 2 or W.shape[0] != 2:
        raise DimensionError(f"head must be (2, n), got {W.shape}")
    rows = f.reshape(1, -1) if f.ndim == 1 else f
    if rows.shape[1] != W.shape[1]:
        raise DimensionError(f"features of length {rows.shape[1]} do not fit head {W.shape}")
    p = T.softmax(T.matmul(rows, T.transpose(W)), axis=-1)
    return p.reshape(2) if f.ndim == 1 else p


def one_hot(labels) -> np.ndarray:
    labels = np.asarray(labels, dtype=int)
    out = np.zeros((labels.size, 2))
    out[np.arange(labels.size), labels] = 1.0
    return out


def cross_entropy(p, y) -> T.Tensor:
    """Mean negative log-likelihood with ``log`` clamped at 1e-12."""
    p = T.tensor(p)
    y = np.asarray(y.data if isinstance(y, T.Tensor) else y, dtype=np.float64)
    if p.ndim == 1:
        p, y = p.reshape(1, -1), y.reshape(1, -1)
    if p.shape[0] == 0:
        raise ContractError("cross-entropy of an empty batch")
    if p.shape != y.shape:
        raise DimensionError(f"probabilities {p.shape} vs targets {y.shape}")
    if np.abs(p.data.sum(axis=1) - 1.0).max() > 1e-5:
        raise ContractError("probability rows must sum to 1")
    if not (np.isin(y, (0.0, 1.0)).all() and (y.sum(axis=1) == 1).all()):
        raise ContractError("targets must be one-hot rows")
    ll = (T.log(T.clamp_min(p, 1e-12)) * y).sum()
    return ll * (-1.0 / p.shape[0])
