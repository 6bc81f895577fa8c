"""Training loop: seeded batching, augmentation, AdamW, early stopping on validation loss."""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from muval import tensor as T
from muval.backbone import update_running_stats
from muval.errors import ConfigError
from muval.model import ModelConfig, buffer_shapes, forward, init_params, loss_fn, param_shapes
from muval.optim import OptimizerState, adamw_step, lr_schedule
from muval.preprocess import PreprocessConfig, augment
from muval.volume_io import Sample

log = logging.getLogger(__name__)

ABLATION_MODES = {"full": "multi-view", "single-view": "single-view", "no-attention": "off"}


@dataclass(frozen=True)
class TrainConfig:
    lr0: float = 1e-4
    gamma: float = 0.99
    batch_size: int = 10
    epochs: int = 60
    patience: int = 40
    weight_decay: float = 0.01
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    seed: int = 0
    mode: str = "full"
    init: str = "he"
    val_fraction: float = 0.2
    augment: bool = True
    augmentation: PreprocessConfig = field(default_factory=PreprocessConfig)

    def __post_init__(self):
        if not 0 < self.gamma <= 1:
            raise ConfigError("gamma must lie in (0, 1]")
        if self.patience < 1 or self.batch_size < 1 or self.epochs < 1:
            raise ConfigError("patience, batch_size and epochs must be >= 1")
        if self.mode not in ABLATION_MODES:
            raise ConfigError(f"unknown mode {self.mode!r}; choose from {sorted(ABLATION_MODES)}")
        if not 0 <= self.val_fraction < 1:
            raise ConfigError("val_fraction must lie in [0, 1)")


@dataclass
class TrainHistory:
    epoch: list[int] = field(default_factory=list)  # 1-based
    train_loss: list[float] = field(default_factory=list)
    val_loss: list[float] = field(default_factory=list)
    lr: list[float] = field(default_factory=list)
    best_epoch: int = 0
    stop_reason: str = "max-epochs"

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["epoch", "train_loss", "val_loss", "lr"])
            for row in zip(self.epoch, self.train_loss, self.val_loss, self.lr):
                w.writerow([row[0], repr(row[1]), repr(row[2]), repr(row[3])])


@dataclass
class TrainResult:
    params: dict[str, np.ndarray]
    buffers: dict[str, np.ndarray]
    history: TrainHistory
    model: ModelConfig

    def tensors(self) -> dict[str, np.ndarray]:
        return {**self.params, **self.buffers}


def stratified_split(labels: Sequence[int], fraction: float, seed: int) -> tuple[list[int], list[int]]:
    """Seeded per-class split; returns (train indices, validation indices)."""
    rng = np.random.default_rng(seed)
    labels = np.asarray(labels)
    train_idx, val_idx = [], []
    for c in (0, 1):
        idx = np.flatnonzero(labels == c)
        idx = idx[rng.permutation(idx.size)]
        n_val = int(round(fraction * idx.size))
        val_idx.extend(idx[:n_val].tolist())
        train_idx.extend(idx[n_val:].tolist())
    return sorted(train_idx), sorted(val_idx)


def _stack(samples: Sequence[Sample]) -> tuple[np.ndarray, np.ndarray]:
    return (np.stack([s.volume.voxels for s in samples]).astype(np.float64),
            np.array([s.label for s in samples]))


def predict(samples: Sequence[Sample], params, buffers, model: ModelConfig, batch_size: int = 10) -> np.ndarray:
    """R0 probability per sample, evaluation-mode normalisation."""
    out = []
    for start in range(0, len(samples), batch_size):
        vols, _ = _stack(samples[start:start + batch_size])
        p, _ = forward(vols, params, model, train=False, buffers=buffers)
        out.append(p.data[:, 1])
    return np.concatenate(out) if out else np.zeros(0)


def evaluate_loss(samples: Sequence[Sample], params, buffers, model: ModelConfig, batch_size: int = 10) -> float:
    total = 0.0
    for start in range(0, len(samples), batch_size):
        vols, labels = _stack(samples[start:start + batch_size])
        loss, _, _ = loss_fn(vols, labels, params, model, train=False, buffers=buffers)
        total += loss.item() * len(labels)
    return total / len(samples)


def train(samples: Sequence[Sample], cfg: TrainConfig, model: ModelConfig,
          val_samples: Sequence[Sample] | None = None) -> TrainResult:
    """Fit the classifier; returns the best-epoch weights and the loss history.

    With ``val_fraction == 0`` and no explicit ``val_samples`` the epoch
    training loss is monitored instead of a held-out loss.
    """
    model = replace(model, attention=ABLATION_MODES[cfg.mode])
    labels = [s.label for s in samples]
    if len(set(labels)) < 2:
        raise ConfigError("training set contains a single class")
    for s in samples:
        if s.volume.shape != tuple(model.shape):
            raise ConfigError(f"volume shape {s.volume.shape} does not match model shape {model.shape}")

    if val_samples is not None:
        train_set, val_set = list(samples), list(val_samples)
    elif cfg.val_fraction > 0:
        tr, va = stratified_split(labels, cfg.val_fraction, cfg.seed)
        train_set, val_set = [samples[i] for i in tr], [samples[i] for i in va]
    else:
        train_set, val_set = list(samples), []
    counts = np.bincount([s.label for s in train_set], minlength=2)
    if counts.min() < 2:
        raise ConfigError(f"need >= 2 training samples per class after the split, have {counts.tolist()}")

    params, buffers = init_params(model, cfg.seed, cfg.init)
    state = OptimizerState()
    rng = np.random.default_rng([cfg.seed, 1])
    hist = TrainHistory()
    best = (np.inf, params, buffers)
    wait = 0

    for epoch in range(cfg.epochs):
        lr = lr_schedule(cfg.lr0, cfg.gamma, epoch)
        order = rng.permutation(len(train_set))
        batch_losses = []
        for start in range(0, len(order), cfg.batch_size):
            batch = [train_set[i] for i in order[start:start + cfg.batch_size]]
            seeds = rng.integers(0, 2 ** 63, size=len(batch))
            if cfg.augment:
                vols = np.stack([augment(s.volume, cfg.augmentation, int(sd)).voxels for s, sd in zip(batch, seeds)])
            else:
                vols = np.stack([s.volume.voxels for s in batch])
            tp = {k: T.parameter(k, v) for k, v in params.items()}
            loss, _, stats = loss_fn(vols.astype(np.float64), [s.label for s in batch], tp, model, train=True)
            rec = T.backward(loss)
            params, state = adamw_step(params, rec.grads, state, lr, cfg.betas, cfg.eps, cfg.weight_decay)
            buffers = dict(buffers)
            update_running_stats(buffers, stats)
            batch_losses.append((rec.loss, len(batch)))
        train_loss = sum(l * n for l, n in batch_losses) / len(train_set)
        val_loss = evaluate_loss(val_set, params, buffers, model, cfg.batch_size) if val_set else train_loss
        hist.epoch.append(epoch + 1)
        hist.train_loss.append(train_loss)
        hist.val_loss.append(val_loss)
        hist.lr.append(lr)
        log.info("epoch %d lr %.3g train %.5f val %.5f", epoch + 1, lr, train_loss, val_loss)
        if val_loss < best[0]:
            best = (val_loss, params, buffers)
            hist.best_epoch = epoch + 1
            wait = 0
        else:
            wait += 1
            if wait >= cfg.patience:
                hist.stop_reason = "early-stop"
                break
    return TrainResult(best[1], best[2], hist, model)


def expected_tensors(model: ModelConfig) -> dict[str, tuple]:
    return {**param_shapes(model), **buffer_shapes(model)}
