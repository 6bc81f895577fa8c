"""Full classifier: slice attention, backbone, head. Parameters live in plain dicts."""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from muval import tensor as T
from muval.attention import attention_shapes, muval_forward
from muval.backbone import CANONICAL, DESK, BackboneConfig, backbone_forward, backbone_shapes, classify, cross_entropy, one_hot
from muval.errors import ConfigError

STORAGE = np.float32


@dataclass(frozen=True)
class ModelConfig:
    shape: tuple[int, int, int] = (16, 32, 32)
    r: int = 8
    attention: str = "multi-view"  # multi-view | single-view | off
    backbone: BackboneConfig = field(default_factory=BackboneConfig)

    def with_attention(self, mode: str) -> "ModelConfig":
        return replace(self, attention=mode)


PRESETS = {
    "desk": ModelConfig((16, 32, 32), 8, "multi-view", DESK),
    "canonical": ModelConfig((64, 256, 256), 8, "multi-view", CANONICAL),
}


def preset(name: str, attention: str = "multi-view") -> ModelConfig:
    try:
        return PRESETS[name].with_attention(attention)
    except KeyError:
        raise ConfigError(f"unknown model config {name!r}; choose from {sorted(PRESETS)}") from None


def param_shapes(cfg: ModelConfig) -> dict[str, tuple]:
    shapes = dict(attention_shapes(cfg.shape, cfg.r, cfg.attention))
    shapes.update(backbone_shapes(cfg.backbone)[0])
    shapes["head.W"] = (2, cfg.backbone.n)
    return shapes


def buffer_shapes(cfg: ModelConfig) -> dict[str, tuple]:
    return backbone_shapes(cfg.backbone)[1]


def count_params(cfg: ModelConfig) -> int:
    """Exact number of learnable scalars (shapes only, nothing is allocated)."""
    return sum(int(np.prod(s)) for s in param_shapes(cfg).values())


def init_params(cfg: ModelConfig, seed: int, scheme: str = "he") -> tuple[dict[str, np.ndarray], dict[str, np.ndarray]]:
    """Gaussian initialisation; returns ``(params, buffers)`` in float32 storage.

    ``he``: conv kernels ~ N(0, 2/fan_in). ``plain``: conv kernels ~ N(0, 0.01^2).
    Attention matrices and the head are N(0, 0.01^2) under both; norm scales 1,
    offsets 0, running mean 0, running variance 1.
    """
    if scheme not in ("he", "plain"):
        raise ConfigError(f"unknown init scheme {scheme!r}")
    rng = np.random.default_rng(seed)
    params = {}
    for name, shp in param_shapes(cfg).items():
        if name.endswith(".gamma"):
            arr = np.ones(shp)
        elif name.endswith(".beta"):
            arr = np.zeros(shp)
        elif len(shp) == 5:
            std = np.sqrt(2.0 / int(np.prod(shp[1:]))) if scheme == "he" else 0.01
            arr = rng.normal(0.0, std, size=shp)
        else:
            arr = rng.normal(0.0, 0.01, size=shp)
        params[name] = arr.astype(STORAGE)
    buffers = {name: (np.zeros(shp) if name.endswith("running_mean") else np.ones(shp)).astype(STORAGE)
               for name, shp in buffer_shapes(cfg).items()}
    return params, buffers


def forward(volumes, params, cfg: ModelConfig, train: bool, buffers=None):
    """Class probabilities ``(N, 2)`` for ``(N, d, h, w)`` volumes, plus norm batch stats."""
    volumes = T.tensor(volumes)
    reweighted = muval_forward(volumes, params, cfg.attention)
    x = reweighted.reshape(volumes.shape[0], 1, *volumes.shape[1:])
    f, stats = backbone_forward(x, params, cfg.backbone, train, buffers)
    return classify(f, params["head.W"]), stats


def loss_fn(volumes, labels, params, cfg: ModelConfig, train: bool = True, buffers=None):
    p, stats = forward(volumes, params, cfg, train, buffers)
    return cross_entropy(p, one_hot(labels)), p, stats


def as_tensors(params) -> dict[str, T.Tensor]:
    return {k: T.parameter(k, v) for k, v in params.items()}


def model_grad_check(cfg: ModelConfig, seed: int = 1, epsilon: float = 2e-6, max_per_tensor: int = 64) -> float:
    """Finite-difference check of the whole training-mode loss on one phantom per class."""
    from muval.volume_io import BlobSpec, generate_synthetic

    params, _ = init_params(cfg, seed)
    # Move off the initial point. Near-constant gates are a uniform rescale that
    # batch norm cancels, leaving attention gradients at the rounding floor of
    # the differences; non-negative entry weights keep every bottleneck unit
    # well clear of its ReLU kink (slice means are non-negative).
    rng = np.random.default_rng([seed, 2])
    for k, v in params.items():
        if k.endswith((".gamma", ".beta")):
            params[k] = v + rng.normal(0.0, 0.1, v.shape)
        elif k.startswith("attn.") and k.endswith("1"):
            params[k] = np.abs(rng.normal(0.0, 1.0, v.shape))
        elif k.startswith("attn."):
            params[k] = rng.normal(0.0, 0.5, v.shape)
        elif k == "head.W":
            params[k] = rng.normal(0.0, 1.0 / np.sqrt(v.shape[1]), v.shape)
    params = {k: np.asarray(v, dtype=np.float64) for k, v in params.items()}
    vols = np.stack([generate_synthetic(BlobSpec(), cfg.shape, label, seed * 10 + label).volume.voxels
                     for label in (0, 1)]).astype(np.float64)

    def model_eval(p):
        loss, _, _ = loss_fn(vols, [0, 1], p, cfg, train=True)
        return loss

    return T.grad_check(model_eval, params, epsilon, max_per_tensor, seed)
