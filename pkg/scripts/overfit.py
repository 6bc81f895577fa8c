"""Fit 8 phantoms (4 per class) with the desk model and report training accuracy and loss."""
import argparse
import time

import numpy as np

from muval.model import preset
from muval.train import TrainConfig, predict, train
from muval.volume_io import BlobSpec, generate_synthetic


def overfit_samples(seed0=0):
    return [generate_synthetic(BlobSpec(), (16, 32, 32), i % 2, seed0 + i) for i in range(8)]


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--lr", type=float, default=1e-3)
    ap.add_argument("--epochs", type=int, default=200)
    ap.add_argument("--no-augment", action="store_true")
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    samples = overfit_samples()
    cfg = TrainConfig(lr0=args.lr, epochs=args.epochs, patience=args.epochs, val_fraction=0.0,
                      augment=not args.no_augment, seed=args.seed)
    t0 = time.time()
    result = train(samples, cfg, preset("desk"))
    scores = predict(samples, result.params, result.buffers, result.model)
    acc = float(np.mean((scores >= 0.5) == np.array([s.label for s in samples])))
    h = result.history
    print(f"epochs run {h.epoch[-1]}, best epoch {h.best_epoch}, final train loss {h.train_loss[-1]:.5f}, "
          f"best {min(h.train_loss):.5f}")
    print(f"train accuracy {acc:.3f}  ({time.time() - t0:.0f} s)")


if __name__ == "__main__":
    main()
