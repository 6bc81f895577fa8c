"""``muval`` command line.

Exit codes: 0 success, 1 validation or contract failure, 2 I/O or file-format error.
"""
from __future__ import annotations

import argparse
import csv
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from muval.baselines import baseline_knn, baseline_lr, gray_histogram
from muval.checkpoint import load_checkpoint, save_checkpoint
from muval.errors import FormatError, MuvalError
from muval.metrics import evaluate
from muval.model import count_params, model_grad_check, preset
from muval.preprocess import PreprocessConfig, prepare
from muval.train import ABLATION_MODES, TrainConfig, expected_tensors, predict, train
from muval.volume_io import BlobSpec, generate_synthetic, load_manifest, load_samples, read_volume, write_manifest, write_volume

log = logging.getLogger("muval")

ATTENTION_ALIASES = {"full": "multi-view", "no-attention": "off",
                     "multi-view": "multi-view", "single-view": "single-view", "off": "off"}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _shape(text: str) -> tuple[int, int, int]:
    try:
        parts = tuple(int(p) for p in text.lower().split("x"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"shape must look like 16x32x32, got {text!r}") from None
    if len(parts) != 3 or min(parts) < 1:
        raise argparse.ArgumentTypeError(f"shape must be three positive extents, got {text!r}")
    return parts


def _add_train_flags(p: argparse.ArgumentParser) -> None:
    d = TrainConfig()
    p.add_argument("--config", choices=["desk", "canonical"], default="desk")
    p.add_argument("--lr", type=float, default=d.lr0, help="initial learning rate")
    p.add_argument("--gamma", type=float, default=d.gamma, help="per-epoch exponential decay")
    p.add_argument("--batch-size", type=int, default=d.batch_size)
    p.add_argument("--epochs", type=int, default=d.epochs)
    p.add_argument("--patience", type=int, default=d.patience)
    p.add_argument("--weight-decay", type=float, default=d.weight_decay)
    p.add_argument("--val-fraction", type=float, default=d.val_fraction)
    p.add_argument("--no-augment", action="store_true", help="disable training-time augmentation")
    p.add_argument("--seed", type=int, default=0)


def _train_config(args, **overrides) -> TrainConfig:
    return replace(TrainConfig(lr0=args.lr, gamma=args.gamma, batch_size=args.batch_size, epochs=args.epochs,
                               patience=args.patience, weight_decay=args.weight_decay,
                               val_fraction=args.val_fraction, augment=not args.no_augment, seed=args.seed),
                   **overrides)


def build_parser() -> argparse.ArgumentParser:
    fmt = argparse.ArgumentDefaultsHelpFormatter
    root = _Parser(prog="muval", description="Multi-view slice attention classifier for 3D volumes.")
    root.add_argument("-v", "--verbose", action="store_true", help="log per-epoch progress")
    sub = root.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("synth", help="generate blob phantoms and a manifest", formatter_class=fmt)
    p.add_argument("--out", required=True, type=Path)
    p.add_argument("--per-class", type=int, default=30)
    p.add_argument("--shape", type=_shape, default=(16, 32, 32))
    p.add_argument("--noise-sigma", type=float, default=BlobSpec().noise_sigma)
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("preprocess", help="window and resample every volume in a manifest", formatter_class=fmt)
    cfg = PreprocessConfig()
    p.add_argument("--manifest", required=True, type=Path)
    p.add_argument("--out", required=True, type=Path)
    p.add_argument("--shape", type=_shape, default=cfg.target_shape)
    p.add_argument("--window-low", type=float, default=cfg.window_low)
    p.add_argument("--window-high", type=float, default=cfg.window_high)
    p.add_argument("--skip-window", action="store_true", help="inputs are already in [0, 1]")

    p = sub.add_parser("train", help="train a classifier on a manifest", formatter_class=fmt)
    p.add_argument("--manifest", required=True, type=Path)
    p.add_argument("--out", required=True, type=Path, help="output directory")
    p.add_argument("--mode", choices=list(ABLATION_MODES), default="full")
    p.add_argument("--init", choices=["he", "plain"], default="he")
    p.add_argument("--force", action="store_true", help="allow training the canonical config")
    _add_train_flags(p)

    p = sub.add_parser("eval", help="score a checkpoint on a manifest", formatter_class=fmt)
    p.add_argument("--checkpoint", required=True, type=Path)
    p.add_argument("--manifest", required=True, type=Path)
    p.add_argument("--config", choices=["desk", "canonical"], default="desk")
    p.add_argument("--out-json", type=Path, default=Path("metrics.json"))
    p.add_argument("--out-roc", type=Path, default=Path("roc.csv"))

    p = sub.add_parser("ablate", help="train the four ablation variants and tabulate them", formatter_class=fmt)
    p.add_argument("--train-manifest", required=True, type=Path)
    p.add_argument("--test-manifest", required=True, type=Path)
    p.add_argument("--out", type=Path, default=Path("ablation.csv"))
    _add_train_flags(p)

    p = sub.add_parser("gradcheck", help="finite-difference check of the full model", formatter_class=fmt)
    p.add_argument("--config", choices=["desk"], default="desk")
    p.add_argument("--mode", choices=["multi-view", "single-view", "off"], default="multi-view")
    p.add_argument("--epsilon", type=float, default=2e-6)
    p.add_argument("--max-per-tensor", type=int, default=64)
    p.add_argument("--tolerance", type=float, default=1e-4)
    p.add_argument("--seed", type=int, default=1)

    p = sub.add_parser("params", help="count learnable parameters", formatter_class=fmt)
    p.add_argument("--config", choices=["desk", "canonical"], default="canonical")
    p.add_argument("--mode", choices=sorted(ATTENTION_ALIASES), default="multi-view")

    p = sub.add_parser("baseline", help="histogram + logistic regression or kNN", formatter_class=fmt)
    p.add_argument("--model", choices=["lr", "knn"], required=True)
    p.add_argument("--train-manifest", required=True, type=Path)
    p.add_argument("--test-manifest", required=True, type=Path)
    p.add_argument("--k", type=int, default=5)
    p.add_argument("--lr", type=float, default=0.5)
    p.add_argument("--epochs", type=int, default=2000)
    p.add_argument("--out-json", type=Path, default=Path("baseline.json"))
    p.add_argument("--out-roc", type=Path, default=Path("baseline_roc.csv"))
    for sp in sub.choices.values():
        for action in sp._actions:
            if action.help is None:
                action.help = action.dest.replace("_", " ")
    return root


def cmd_synth(args) -> int:
    args.out.mkdir(parents=True, exist_ok=True)
    spec = replace(BlobSpec(), noise_sigma=args.noise_sigma)
    seeds = np.random.default_rng(args.seed).integers(0, 2 ** 63, size=2 * args.per_class)
    entries = []
    for i, s in enumerate(seeds):
        label = i % 2
        sample = generate_synthetic(spec, args.shape, label, int(s))
        name = f"vol_{i:04d}.rvol"
        write_volume(sample.volume, args.out / name)
        entries.append((name, label))
    write_manifest(entries, args.out / "manifest.csv")
    print(f"wrote {len(entries)} volumes and {args.out / 'manifest.csv'}")
    return 0


def cmd_preprocess(args) -> int:
    cfg = PreprocessConfig(window_low=args.window_low, window_high=args.window_high, target_shape=args.shape)
    args.out.mkdir(parents=True, exist_ok=True)
    root = args.manifest.parent
    entries = []
    for path, label in load_manifest(args.manifest):
        src = Path(path) if Path(path).is_absolute() else root / path
        write_volume(prepare(read_volume(src), cfg, window=not args.skip_window), args.out / Path(path).name)
        entries.append((Path(path).name, label))
    write_manifest(entries, args.out / "manifest.csv")
    print(f"preprocessed {len(entries)} volumes into {args.out}")
    return 0


def _model_for(config: str, shape) -> object:
    model = preset(config)
    return replace(model, shape=tuple(shape)) if config == "desk" else model


def cmd_train(args) -> int:
    if args.config == "canonical" and not args.force:
        print("refusing to train the canonical configuration without --force", file=sys.stderr)
        return 1
    samples = load_samples(args.manifest)
    model = _model_for(args.config, samples[0].volume.shape if samples else (16, 32, 32))
    result = train(samples, _train_config(args, mode=args.mode, init=args.init), model)
    args.out.mkdir(parents=True, exist_ok=True)
    save_checkpoint(result.tensors(), args.out / "checkpoint.mvck")
    result.history.to_csv(args.out / "history.csv")
    h = result.history
    print(f"best epoch {h.best_epoch} of {h.epoch[-1]} ({h.stop_reason}); "
          f"val loss {min(h.val_loss):.6f}; wrote {args.out / 'checkpoint.mvck'}")
    return 0


def _attention_from(tensors) -> str:
    if "attn.c1" in tensors:
        return "multi-view"
    return "single-view" if "attn.t1" in tensors else "off"


def cmd_eval(args) -> int:
    samples = load_samples(args.manifest)
    raw = load_checkpoint(args.checkpoint)
    model = _model_for(args.config, samples[0].volume.shape).with_attention(_attention_from(raw))
    tensors = load_checkpoint(args.checkpoint, expected_tensors(model))
    params = {k: tensors[k] for k in expected_tensors(model) if not k.endswith(("running_mean", "running_var"))}
    buffers = {k: v for k, v in tensors.items() if k not in params}
    scores = predict(samples, params, buffers, model)
    report = evaluate(scores, [s.label for s in samples])
    report.to_json(args.out_json)
    report.roc_to_csv(args.out_roc)
    print(f"acc {report.accuracy:.4f} f1 {report.f1:.4f} auc {report.auc:.4f}")
    return 0


ABLATION_ROWS = [
    ("no-attention", dict(mode="no-attention", init="he")),
    ("no-attention-alt-init", dict(mode="no-attention", init="plain")),
    ("single-view", dict(mode="single-view", init="he")),
    ("full", dict(mode="full", init="he")),
]


def run_ablation(train_samples, test_samples, base: TrainConfig, model):
    rows = []
    truth = [s.label for s in test_samples]
    for name, overrides in ABLATION_ROWS:
        result = train(train_samples, replace(base, **overrides), model)
        report = evaluate(predict(test_samples, result.params, result.buffers, result.model), truth)
        rows.append({"model": name, "acc": report.accuracy, "f1": report.f1, "auc": report.auc,
                     "params": count_params(result.model)})
        log.info("%s: %s", name, rows[-1])
    return rows


def cmd_ablate(args) -> int:
    train_samples, test_samples = load_samples(args.train_manifest), load_samples(args.test_manifest)
    model = _model_for(args.config, train_samples[0].volume.shape)
    rows = run_ablation(train_samples, test_samples, _train_config(args), model)
    with open(args.out, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=["model", "acc", "f1", "auc", "params"], lineterminator="\n")
        w.writeheader()
        w.writerows(rows)
    for r in rows:
        print(f"{r['model']:<24} acc {r['acc']:.4f} f1 {r['f1']:.4f} auc {r['auc']:.4f} params {r['params']}")
    return 0


def cmd_gradcheck(args) -> int:
    err = model_grad_check(preset(args.config, args.mode), args.seed, args.epsilon, args.max_per_tensor)
    ok = err < args.tolerance
    print(f"max relative error {err:.3e} ({'pass' if ok else 'FAIL'} at {args.tolerance:g})")
    return 0 if ok else 1


def cmd_params(args) -> int:
    model = preset(args.config, ATTENTION_ALIASES[args.mode])
    total = count_params(model)
    attention = count_params(model) - count_params(model.with_attention("off"))
    head = 2 * model.backbone.n
    print(f"attention {attention}")
    print(f"backbone {total - attention - head}")
    print(f"head {head}")
    print(f"total {total}")
    return 0


def cmd_baseline(args) -> int:
    train_samples, test_samples = load_samples(args.train_manifest), load_samples(args.test_manifest)
    xtr = np.stack([gray_histogram(s.volume) for s in train_samples])
    xte = np.stack([gray_histogram(s.volume) for s in test_samples])
    ytr = [s.label for s in train_samples]
    if args.model == "lr":
        scores = baseline_lr(xtr, ytr, xte, lr=args.lr, epochs=args.epochs)
    else:
        scores = baseline_knn(xtr, ytr, xte, k=args.k)
    report = evaluate(scores, [s.label for s in test_samples])
    report.to_json(args.out_json)
    report.roc_to_csv(args.out_roc)
    print(f"{args.model}: acc {report.accuracy:.4f} f1 {report.f1:.4f} auc {report.auc:.4f}")
    return 0


COMMANDS = {"synth": cmd_synth, "preprocess": cmd_preprocess, "train": cmd_train, "eval": cmd_eval,
            "ablate": cmd_ablate, "gradcheck": cmd_gradcheck, "params": cmd_params, "baseline": cmd_baseline}


def run(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return 1
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return COMMANDS[args.command](args)
    except (FormatError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except MuvalError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
