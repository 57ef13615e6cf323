"""Command-line entry point: gen-data, train-ae, train-clf, eval, bench, info."""

from __future__ import annotations

import argparse
import sys

import numpy as np

from . import bench as bench_mod
from . import checkpoint as ckpt
from . import pipeline
from .data import SplitSpec, gen_synthetic, load_dataset
from .metrics import report_csv, report_text


def _build_parser():
    p = argparse.ArgumentParser(prog="ssmdet",
                                description="One-class SSM autoencoder + residual classifier")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="write the synthetic texture dataset")
    g.add_argument("--out", required=True)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--n", type=int, default=200, help="images per class")
    g.add_argument("--classes", type=int, default=2, choices=(2, 5))
    g.add_argument("--size", type=int, default=64)

    t1 = sub.add_parser("train-ae", help="phase 1: train the autoencoder on the target class")
    t1.add_argument("--config")
    t1.add_argument("--data", required=True)
    t1.add_argument("--out-ckpt", required=True)
    t1.add_argument("--curve-csv", help="default: <out-ckpt>.curve.csv")

    t2 = sub.add_parser("train-clf", help="phase 2: train the classifier on residuals")
    t2.add_argument("--config")
    t2.add_argument("--data", required=True)
    t2.add_argument("--ae-ckpt", required=True)
    t2.add_argument("--out-ckpt", required=True)
    t2.add_argument("--curve-csv", help="default: <out-ckpt>.curve.csv (+ .acc.csv)")

    ev = sub.add_parser("eval", help="evaluate on the validation split")
    ev.add_argument("--config")
    ev.add_argument("--data", required=True)
    ev.add_argument("--ae-ckpt", required=True)
    ev.add_argument("--clf-ckpt", required=True)
    ev.add_argument("--out-report", required=True, help="text report; CSV written alongside")

    b = sub.add_parser("bench", help="scan vs attention scaling benchmark")
    b.add_argument("--n-min", type=int, default=256)
    b.add_argument("--n-max", type=int, default=8192)
    b.add_argument("--d", type=int, default=16)
    b.add_argument("--repeats", type=int, default=5)
    b.add_argument("--out-csv", required=True)

    i = sub.add_parser("info", help="print checkpoint metadata and parameter count")
    i.add_argument("ckpt")
    return p


def _load_config(path) -> pipeline.Config:
    return pipeline.Config.from_file(path) if path else pipeline.Config()


def _load_split(data_root, cfg: pipeline.Config):
    ds = load_dataset(data_root, (cfg.image_size, cfg.image_size), cfg.channels)
    return split_pair(ds, cfg)


def split_pair(ds, cfg):
    from .data import split
    return split(ds, SplitSpec(seed=cfg.seed))


def _cmd_gen_data(args):
    classes = gen_synthetic(args.out, seed=args.seed, n_per_class=args.n,
                            num_classes=args.classes, size=args.size)
    print(f"wrote {args.n} images for each of {classes} under {args.out}")
    return 0


def _cmd_train_ae(args):
    cfg = _load_config(args.config)
    train_ds, val_ds = _load_split(args.data, cfg)
    model, curve = pipeline.train_phase1(train_ds, val_ds, cfg, log=print)
    pipeline.save_model(args.out_ckpt, model, cfg, "ae", cfg.epochs_ae, curve[-1][1])
    pipeline.write_curve_csv(args.curve_csv or f"{args.out_ckpt}.curve.csv", curve)
    print(f"saved {args.out_ckpt}; final train loss {curve[-1][1]:.6g}")
    return 0


def _cmd_train_clf(args):
    cfg = _load_config(args.config)
    train_ds, val_ds = _load_split(args.data, cfg)
    ae, _ = pipeline.load_ae(args.ae_ckpt)
    model, loss_curve, acc_curve = pipeline.train_phase2(ae, train_ds, val_ds, cfg, log=print)
    pipeline.save_model(args.out_ckpt, model, cfg, "clf", cfg.epochs_clf, loss_curve[-1][1])
    base = args.curve_csv or f"{args.out_ckpt}.curve.csv"
    pipeline.write_curve_csv(base, loss_curve)
    pipeline.write_curve_csv(f"{base}.acc.csv", acc_curve)
    print(f"saved {args.out_ckpt}; final val accuracy {acc_curve[-1][2]:.4f}")
    return 0


def _cmd_eval(args):
    ae, ae_cfg = pipeline.load_ae(args.ae_ckpt)
    clf, _ = pipeline.load_clf(args.clf_ckpt)
    cfg = pipeline.Config.from_file(args.config) if args.config else ae_cfg
    _, val_ds = _load_split(args.data, cfg)
    cm, report = pipeline.evaluate(ae, clf, val_ds, cfg)
    text = report_text(report)
    pipeline._atomic_write(args.out_report, text)
    pipeline._atomic_write(f"{args.out_report}.csv", report_csv(report))
    print(text, end="")
    return 0


def _cmd_bench(args):
    n_list = []
    n = args.n_min
    while n <= args.n_max:
        n_list.append(n)
        n *= 2
    records, slopes = bench_mod.scaling_run(n_list, d=args.d, repeats=args.repeats)
    pipeline._atomic_write(args.out_csv, bench_mod.records_csv(records))
    summary = "".join(f"{impl}: log-log slope {s:.3f}\n" for impl, s in slopes.items())
    pipeline._atomic_write(f"{args.out_csv}.summary.txt", summary)
    print(summary, end="")
    return 0


def _cmd_info(args):
    meta, tensors = ckpt.load(args.ckpt)
    total = sum(int(np.prod(t.shape)) for t in tensors.values())
    print(f"checkpoint: {args.ckpt}")
    print(f"format version: {ckpt.VERSION}")
    for k, v in sorted(meta.items()):
        print(f"{k}: {v}")
    print(f"tensors: {len(tensors)}")
    print(f"param count: {total}")
    return 0


_COMMANDS = {
    "gen-data": _cmd_gen_data,
    "train-ae": _cmd_train_ae,
    "train-clf": _cmd_train_clf,
    "eval": _cmd_eval,
    "bench": _cmd_bench,
    "info": _cmd_info,
}


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    try:
        return _COMMANDS[args.command](args)
    except (OSError, ValueError, FloatingPointError, ckpt.CheckpointError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
