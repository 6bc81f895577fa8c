"""Four-variant ablation plus the two histogram baselines on the separability split."""
import argparse
import csv
import sys
from dataclasses import replace

import numpy as np

from muval.baselines import baseline_knn, baseline_lr, gray_histogram
from muval.cli import run_ablation
from muval.metrics import evaluate
from muval.model import preset
from muval.train import TrainConfig

sys.path.insert(0, __file__.rsplit("/", 1)[0])
from separability import split  # noqa: E402


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--epochs", type=int, default=60)
    ap.add_argument("--lr", type=float, default=1e-4)
    ap.add_argument("--out", default="ablation.csv")
    args = ap.parse_args()

    train_set, test_set = split()
    base = replace(TrainConfig(), lr0=args.lr, epochs=args.epochs)
    rows = run_ablation(train_set, test_set, base, preset("desk"))

    xtr = np.stack([gray_histogram(s.volume) for s in train_set])
    xte = np.stack([gray_histogram(s.volume) for s in test_set])
    ytr, yte = [s.label for s in train_set], [s.label for s in test_set]
    baselines = [("histogram-lr", baseline_lr(xtr, ytr, xte), xtr.shape[1] + 1),
                 ("histogram-knn", baseline_knn(xtr, ytr, xte), 0)]
    for name, scores, n_params in baselines:
        r = evaluate(scores, yte)
        rows.append({"model": name, "acc": r.accuracy, "f1": r.f1, "auc": r.auc, "params": n_params})

    with open(args.out, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=["model", "acc", "f1", "auc", "params"], lineterminator="\n")
        w.writeheader()
        w.writerows(rows)
    for r in rows:
        print(f"{r['model']:<24} acc {r['acc']:.4f} f1 {r['f1']:.4f} auc {r['auc']:.4f} params {r['params']}")


if __name__ == "__main__":
    main()
