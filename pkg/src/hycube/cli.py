"""Command-line entry point.

Subcommands:

    hycube train   --data DIR --out DIR [model/config flags]
    hycube eval    --checkpoint FILE --data DIR --split {valid,test}
    hycube stats   --data DIR
    hycube extract-fixed-arity --data DIR --arity N --out DIR

Exit codes: 0 success, 1 usage error, 2 data/checkpoint error,
3 numeric divergence during training.
"""

import argparse
import dataclasses
import os
import sys

from .checkpoint import load_checkpoint, save_checkpoint
from .config import RunConfig
from .data import dataset_stats, extract_fixed_arity, load_dataset
from .errors import (
    CheckpointError,
    DataError,
    DivergenceError,
    HycubeError,
    UsageError,
)
from .evaluate import evaluate_split
from .model import param_count
from .training import train

__all__ = ["main", "build_parser"]


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def build_parser():
    parser = _Parser(prog="hycube", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="train a model and write a checkpoint")
    p_train.add_argument("--data", required=True, help="dataset directory")
    p_train.add_argument("--out", required=True, help="output directory")
    p_train.add_argument("--config", help="key=value config file (flags override)")
    p_train.add_argument(
        "--variant", choices=["hycube", "hycube-plus", "hyplane"], default=None
    )
    p_train.add_argument("--stack", choices=["alternate", "standard"], default=None)
    p_train.add_argument("--padding", choices=["circular", "zero"], default=None)
    p_train.add_argument("--d", type=int, default=None)
    p_train.add_argument("--batch", type=int, default=None)
    p_train.add_argument("--lr", type=float, default=None)
    p_train.add_argument("--lr-decay", type=float, default=None)
    p_train.add_argument(
        "--dropout", default=None, help="input[,feature] dropout rate(s)"
    )
    p_train.add_argument(
        "--kernel-pad", type=int, default=None, help="circular padding p; kernel = 2p+1"
    )
    p_train.add_argument("--channels", type=int, default=None)
    p_train.add_argument("--seed", type=int, default=None)
    p_train.add_argument("--max-epochs", type=int, default=None)
    p_train.add_argument("--patience", type=int, default=None)
    p_train.add_argument("--neg-mode", choices=["full", "sampled"], default=None)
    p_train.add_argument("--neg-rate", type=int, default=None)

    p_eval = sub.add_parser("eval", help="evaluate a checkpoint on a split")
    p_eval.add_argument("--checkpoint", required=True)
    p_eval.add_argument("--data", required=True)
    p_eval.add_argument("--split", choices=["valid", "test"], required=True)
    p_eval.add_argument("--out", help="directory for the metrics file")

    p_stats = sub.add_parser("stats", help="print dataset statistics")
    p_stats.add_argument("--data", required=True)

    p_ext = sub.add_parser(
        "extract-fixed-arity", help="write a fixed-arity subset of a dataset"
    )
    p_ext.add_argument("--data", required=True)
    p_ext.add_argument("--arity", type=int, required=True)
    p_ext.add_argument("--out", required=True)

    return parser


def _config_from_flags(args):
    if args.config:
        if not os.path.isfile(args.config):
            raise UsageError(f"config file not found: {args.config}")
        with open(args.config, encoding="utf-8") as fh:
            cfg = RunConfig.from_text(fh.read())
    else:
        cfg = RunConfig()
    overrides = {}
    mapping = {
        "variant": args.variant.replace("-", "_") if args.variant else None,
        "stack": args.stack,
        "padding_mode": args.padding,
        "d": args.d,
        "batch_size": args.batch,
        "lr": args.lr,
        "lr_decay": args.lr_decay,
        "channels": args.channels,
        "seed": args.seed,
        "max_epochs": args.max_epochs,
        "patience": args.patience,
        "neg_mode": args.neg_mode,
        "neg_rate": args.neg_rate,
    }
    for key, value in mapping.items():
        if value is not None:
            overrides[key] = value
    if args.kernel_pad is not None:
        overrides["pad"] = args.kernel_pad
        overrides["kernel"] = 2 * args.kernel_pad + 1
    if args.dropout is not None:
        rates = args.dropout.split(",")
        try:
            rates = [float(r) for r in rates]
        except ValueError:
            raise UsageError(f"bad --dropout value: {args.dropout!r}") from None
        if len(rates) == 1:
            rates = rates * 2
        if len(rates) != 2:
            raise UsageError("--dropout takes one or two comma-separated rates")
        overrides["dropout_input"], overrides["dropout_feature"] = rates
    cfg = dataclasses.replace(cfg, **overrides)
    if args.d is not None and args.config is None:
        # explicit --d discards the default 400 factorization
        cfg = dataclasses.replace(cfg, d1=0, d2=0)
    return cfg.resolved()


def _write(path, text):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(text)


def _cmd_train(args):
    cfg = _config_from_flags(args)  # flag validation happens before data loads
    dataset = load_dataset(args.data)
    os.makedirs(args.out, exist_ok=True)
    _write(
        os.path.join(args.out, "config.txt"),
        f"# data={os.path.abspath(args.data)}\n" + cfg.to_text(),
    )
    log_path = os.path.join(args.out, "epochs.log")
    log_fh = open(log_path, "w", encoding="utf-8")

    def log_fn(record):
        line = record.to_line()
        log_fh.write(line + "\n")
        log_fh.flush()
        print(line)

    try:
        params, report = train(dataset, cfg, log_fn=log_fn)
    finally:
        log_fh.close()

    save_checkpoint(params, os.path.join(args.out, "best.ckpt"))
    filter_index = None
    for split in ("valid", "test"):
        metrics = evaluate_split(params, dataset, split, filter_index)
        _write(os.path.join(args.out, f"metrics_{split}.txt"), metrics.to_text())
        print(f"--- {split} ---")
        print(metrics.table())
    print(
        f"stopped: {report.stop_reason} after {len(report.records)} epoch(s); "
        f"best epoch {report.best_epoch} (MRR {report.best_mrr:.4f}); "
        f"{param_count(params)} trainable parameters"
    )
    if report.stop_reason == "divergence":
        raise DivergenceError(
            f"training diverged at epoch {report.divergence_epoch}",
            epoch=report.divergence_epoch,
        )
    return 0


def _cmd_eval(args):
    params = load_checkpoint(args.checkpoint)
    dataset = load_dataset(args.data)
    if params.n_entities != dataset.n_entities or params.n_relations != dataset.n_relations:
        raise DataError(
            f"checkpoint vocabulary ({params.n_entities} entities, "
            f"{params.n_relations} relations) does not match dataset "
            f"({dataset.n_entities}, {dataset.n_relations})"
        )
    metrics = evaluate_split(params, dataset, args.split)
    out_dir = args.out or os.path.dirname(os.path.abspath(args.checkpoint))
    os.makedirs(out_dir, exist_ok=True)
    _write(os.path.join(out_dir, f"metrics_{args.split}.txt"), metrics.to_text())
    print(metrics.table())
    return 0


def _cmd_stats(args):
    stats = dataset_stats(load_dataset(args.data))
    print(stats.table())
    print()
    print(stats.to_text(), end="")
    return 0


def _cmd_extract(args):
    counts = extract_fixed_arity(args.data, args.arity, args.out)
    for name, n in counts.items():
        print(f"{name}: {n} tuple(s)")
    return 0


_COMMANDS = {
    "train": _cmd_train,
    "eval": _cmd_eval,
    "stats": _cmd_stats,
    "extract-fixed-arity": _cmd_extract,
}


def main(argv=None):
    try:
        args = build_parser().parse_args(argv)
        return _COMMANDS[args.command](args)
    except UsageError as err:
        print(f"usage error: {err}", file=sys.stderr)
        return 1
    except (DataError, CheckpointError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 2
    except DivergenceError as err:
        print(f"divergence: {err}", file=sys.stderr)
        return 3
    except HycubeError as err:
        print(f"error: {err}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
