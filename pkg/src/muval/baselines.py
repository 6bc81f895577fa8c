"""Histogram features and the two classical baselines (logistic regression, kNN)."""
from __future__ import annotations

import numpy as np

from muval.errors import ContractError, DimensionError
from muval.tensor import _stable_sigmoid
from muval.volume_io import Volume

N_BINS = 256


def gray_histogram(v: Volume, bins: int = N_BINS) -> np.ndarray:
    """Normalised intensity histogram over [0, 1]; the last bin is closed at 1.0."""
    x = np.asarray(v.voxels, dtype=np.float64).ravel()
    if x.min() < 0 or x.max() > 1:
        raise ContractError("histogram input must lie in [0, 1]")
    idx = np.minimum((x * bins).astype(int), bins - 1)
    return np.bincount(idx, minlength=bins) / x.size


def _check(train_x, train_y, test_x):
    train_x, test_x = np.atleast_2d(np.asarray(train_x, float)), np.atleast_2d(np.asarray(test_x, float))
    train_y = np.asarray(train_y, dtype=int)
    if train_x.shape[0] == 0:
        raise ContractError("empty training set")
    if train_x.shape[0] != train_y.size:
        raise DimensionError("features and labels differ in length")
    if train_x.shape[1] != test_x.shape[1]:
        raise DimensionError(f"feature dimension {train_x.shape[1]} vs {test_x.shape[1]}")
    return train_x, train_y, test_x


def baseline_lr(train_x, train_y, test_x, lr: float = 0.5, epochs: int = 2000) -> np.ndarray:
    """Logistic regression fit by full-batch gradient descent on mean cross-entropy."""
    X, y, Xt = _check(train_x, train_y, test_x)
    w, b = np.zeros(X.shape[1]), 0.0
    for _ in range(epochs):
        err = _stable_sigmoid(X @ w + b) - y
        w -= lr * (X.T @ err) / len(y)
        b -= lr * err.mean()
    return _stable_sigmoid(Xt @ w + b)


def baseline_knn(train_x, train_y, test_x, k: int = 5) -> np.ndarray:
    """Share of the ``k`` nearest (Euclidean) training points labelled 1.

    Distance ties go to the earlier training point.
    """
    X, y, Xt = _check(train_x, train_y, test_x)
    if not 1 <= k <= len(y):
        raise ContractError(f"k={k} must lie in [1, {len(y)}]")
    d2 = ((Xt[:, None, :] - X[None, :, :]) ** 2).sum(axis=2)
    nearest = np.argsort(d2, axis=1, kind="stable")[:, :k]
    return y[nearest].mean(axis=1)
