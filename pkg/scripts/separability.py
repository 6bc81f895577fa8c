"""Train on 60 phantoms, score 20 held-out ones and print ACC/F1/AUC."""
import argparse
import time

from muval.metrics import evaluate
from muval.model import preset
from muval.train import TrainConfig, predict, train
from muval.volume_io import BlobSpec, generate_synthetic


def split(n_train=60, n_test=20, shape=(16, 32, 32)):
    train_set = [generate_synthetic(BlobSpec(), shape, i % 2, 1000 + i) for i in range(n_train)]
    test_set = [generate_synthetic(BlobSpec(), shape, i % 2, 5000 + i) for i in range(n_test)]
    return train_set, test_set


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--mode", choices=["full", "single-view", "no-attention"], default="full")
    ap.add_argument("--lr", type=float, default=1e-4)
    ap.add_argument("--epochs", type=int, default=60)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--roc", help="optional CSV path for the ROC points")
    args = ap.parse_args()

    train_set, test_set = split()
    t0 = time.time()
    result = train(train_set, TrainConfig(lr0=args.lr, epochs=args.epochs, mode=args.mode, seed=args.seed),
                   preset("desk"))
    report = evaluate(predict(test_set, result.params, result.buffers, result.model), [s.label for s in test_set])
    if args.roc:
        report.roc_to_csv(args.roc)
    h = result.history
    print(f"{args.mode}: best epoch {h.best_epoch} ({h.stop_reason}), {time.time() - t0:.0f} s")
    print(f"held-out acc {report.accuracy:.4f} f1 {report.f1:.4f} auc {report.auc:.4f}")


if __name__ == "__main__":
    main()
