"""Multi-view slice attention.

A volume ``I`` of shape (d, h, w) is squeezed into one mean per slice along
each axis (transverse, coronal, sagittal). Each of those vectors goes through
a bias-free bottleneck ``sigmoid(W2 relu(W1 f))`` and the three resulting
slice weights are averaged at every voxel to rescale ``I``.

All functions accept either a single volume (d, h, w) or a batch
(N, d, h, w); weights act along the last three axes.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping

import numpy as np

from muval import tensor as T
from muval.errors import ConfigError, DimensionError

MODES = ("multi-view", "single-view", "off")
VIEWS = ("t", "c", "s")  # transverse (depth), coronal (height), sagittal (width)


def attention_shapes(shape: tuple[int, int, int], r: int, mode: str = "multi-view") -> dict[str, tuple[int, int]]:
    """Parameter names and shapes for the active views; fails fast if ``r`` does not divide."""
    if mode not in MODES:
        raise ConfigError(f"unknown attention mode {mode!r}")
    if mode == "off":
        return {}
    views = VIEWS if mode == "multi-view" else VIEWS[:1]
    out = {}
    for view, m in zip(views, shape):
        if r < 1 or m % r:
            raise ConfigError(f"reduction ratio {r} does not divide extent {m} ({view} view)")
        out[f"attn.{view}1"] = (m // r, m)
        out[f"attn.{view}2"] = (m, m // r)
    return out


@dataclass
class AttentionParams:
    """Bottleneck matrices for each view, validated against the volume shape."""

    shape: tuple[int, int, int]
    r: int
    weights: dict[str, np.ndarray]
    mode: str = "multi-view"

    def __post_init__(self):
        expected = attention_shapes(self.shape, self.r, self.mode)
        if set(expected) != set(self.weights):
            raise ConfigError(f"expected attention parameters {sorted(expected)}, got {sorted(self.weights)}")
        for name, shp in expected.items():
            if tuple(np.shape(self.weights[name])) != shp:
                raise DimensionError(f"{name} has shape {np.shape(self.weights[name])}, expected {shp}")

    @classmethod
    def zeros(cls, shape, r, mode="multi-view"):
        return cls(tuple(shape), r, {k: np.zeros(s) for k, s in attention_shapes(shape, r, mode).items()}, mode)

    def count(self) -> int:
        return sum(int(np.prod(w.shape)) for w in self.weights.values())


@dataclass
class ViewFeatures:
    f_t: T.Tensor
    f_c: T.Tensor
    f_s: T.Tensor


def pool_views(I) -> ViewFeatures:
    """Per-slice means along depth, height and width."""
    I = T.tensor(I)
    if I.ndim not in (3, 4):
        raise DimensionError(f"expected (d,h,w) or (N,d,h,w), got {I.shape}")
    a = I.ndim - 3
    return ViewFeatures(I.mean(axis=(a + 1, a + 2)), I.mean(axis=(a, a + 2)), I.mean(axis=(a, a + 1)))


def view_attention(f, W1, W2) -> T.Tensor:
    """``sigmoid(W2 @ relu(W1 @ f))`` for a vector ``f`` or each row of a batch."""
    f, W1, W2 = T.tensor(f), T.tensor(W1), T.tensor(W2)
    m = f.shape[-1]
    if W1.ndim != 2 or W2.ndim != 2 or W1.shape[1] != m or W2.shape != (m, W1.shape[0]):
        raise DimensionError(f"attention shapes W1 {W1.shape}, W2 {W2.shape} do not fit length {m}")
    rows = f.reshape(1, m) if f.ndim == 1 else f
    hidden = T.relu(T.matmul(rows, T.transpose(W1)))
    alpha = T.sigmoid(T.matmul(hidden, T.transpose(W2)))
    return alpha.reshape(m) if f.ndim == 1 else alpha


def _along(alpha: T.Tensor, axis: int, batched: bool) -> T.Tensor:
    # lift a per-slice weight vector to broadcast along one volume axis
    shape = [1, 1, 1]
    shape[axis] = alpha.shape[-1]
    return alpha.reshape((alpha.shape[0], *shape) if batched else tuple(shape))


def fuse_reweight(I, alpha_t, alpha_c, alpha_s) -> T.Tensor:
    """``I(i,j,k) * (alpha_t(i) + alpha_c(j) + alpha_s(k)) / 3``."""
    I = T.tensor(I)
    alpha_t, alpha_c, alpha_s = T.tensor(alpha_t), T.tensor(alpha_c), T.tensor(alpha_s)
    batched = I.ndim == 4
    lengths = tuple(a.shape[-1] for a in (alpha_t, alpha_c, alpha_s))
    if lengths != I.shape[-3:]:
        raise DimensionError(f"attention lengths {lengths} do not match volume {I.shape[-3:]}")
    gate = _along(alpha_t, 0, batched) + _along(alpha_c, 1, batched) + _along(alpha_s, 2, batched)
    return I * (gate * (1.0 / 3.0))


def muval_forward(I, params: Mapping, mode: str = "multi-view") -> T.Tensor:
    """Reweighted volume for one of the three attention modes.

    ``params`` maps ``attn.*`` names to tensors or arrays. ``single-view``
    scales by the transverse weights alone; ``off`` returns ``I`` untouched.
    """
    I = T.tensor(I)
    if mode == "off":
        return I
    if mode not in MODES:
        raise ConfigError(f"unknown attention mode {mode!r}")
    feats = pool_views(I)
    alpha_t = view_attention(feats.f_t, params["attn.t1"], params["attn.t2"])
    if mode == "single-view":
        return I * _along(alpha_t, 0, I.ndim == 4)
    alpha_c = view_attention(feats.f_c, params["attn.c1"], params["attn.c2"])
    alpha_s = view_attention(feats.f_s, params["attn.s1"], params["attn.s2"])
    return fuse_reweight(I, alpha_t, alpha_c, alpha_s)
