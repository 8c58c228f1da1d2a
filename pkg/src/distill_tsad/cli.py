"""Command-line pipeline: train, score, eval, synth, sweep.

Commands compose through files only (checkpoints, trace CSVs, metric JSON),
so each stage can be inspected and cross-checked independently.  Exit codes:
0 success, 1 usage error, 2 data error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np
import torch

from . import data_io, detect, evaluate
from .augment import AugmentSpec
from .core import Config, DataError, NumericError
from .preprocess import window
from .teacher import load_pretrained
from .training import load_checkpoint, save_checkpoint, train

USAGE_EXIT, DATA_EXIT, NUMERIC_EXIT = 1, 2, 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):                          # usage errors exit 1, not 2
        self.print_usage(sys.stderr)
        self.exit(USAGE_EXIT, f"{self.prog}: error: {message}\n")


def _load_synth_spec(text: str) -> dict:
    if text.lstrip().startswith("{"):
        return json.loads(text)
    with open(text, "r", encoding="utf-8") as fh:
        return json.load(fh)


def _load_split(args, split: str):
    """Resolve --data/--synth (+ optional --labels) to the requested split."""
    if getattr(args, "synth", None):
        spec = _load_synth_spec(args.synth)
        seed = spec.get("seed", getattr(args, "seed", None) or 0)
        pair = data_io.synth_pair(spec, seed)
        return pair[0] if split == "train" else pair[1]
    if not getattr(args, "data", None):
        raise DataError("either --data or --synth is required")
    path = Path(args.data)
    try:
        data_io.parse_ucr_name(path.name, index_base=getattr(args, "index_base", 1))
        is_ucr = True
    except DataError:
        is_ucr = False
    if is_ucr:
        pair = data_io.load_ucr(path, index_base=getattr(args, "index_base", 1))
        return pair[0] if split == "train" else pair[1]
    labels = getattr(args, "labels", None)
    return data_io.load_multivariate(path, labels_csv=labels, split=split)


def _load_config(args) -> Config:
    config = Config.load(args.config) if getattr(args, "config", None) else Config()
    if getattr(args, "seed", None) is not None:
        config = replace(config, seed=args.seed)
    return config


def cmd_train(args) -> int:
    config = _load_config(args)
    dataset = _load_split(args, "train")
    stride = args.train_stride or config.window_size
    batch = window(dataset, config.window_size, stride)
    backbone = None
    if args.backbone:
        backbone = load_pretrained(args.backbone, config)
    log_path = args.log or f"{args.out}.log.jsonl"
    state = train(batch, config, strategy=args.strategy, backbone=backbone,
                  log_path=log_path)
    save_checkpoint(state, args.out)
    print(f"checkpoint written to {args.out} (epochs={state.epoch}, "
          f"best_loss={state.best_loss:.6g}, log={log_path})")
    return 0


def cmd_score(args) -> int:
    state = load_checkpoint(args.ckpt)
    dataset = _load_split(args, "test")
    trace = detect.score_series(state, dataset, stride=args.stride,
                                aggregate=args.aggregate)
    detect.write_trace_csv(trace, args.out)
    if args.svg:
        detect.render_svg(trace, args.svg)
    print(f"trace written to {args.out} ({trace.length} points)")
    return 0


def cmd_eval(args) -> int:
    scores, trace_labels = detect.read_trace_csv(args.trace)
    if args.truth:
        labels = data_io._read_labels_column(Path(args.truth))
        if len(labels) != len(scores):
            raise DataError(
                f"{args.truth}: {len(labels)} labels vs {len(scores)} trace points"
            )
    elif trace_labels is not None:
        labels = trace_labels
    else:
        raise DataError("no truth labels: pass --truth or use a labeled trace")

    cut = np.quantile(scores, args.quantile)
    preds = (scores > cut).astype(np.int64)
    truth_events = evaluate.EventSet.from_binary(labels)
    pred_events = evaluate.EventSet.from_binary(preds)
    affiliation = evaluate.affiliation_metrics(pred_events, truth_events, len(scores))
    point_preds = evaluate.point_adjust(preds, truth_events) if args.point_adjust else preds
    precision, recall, f1 = evaluate.point_metrics(point_preds, labels)

    report = {
        "dataset": args.dataset,
        "AP": affiliation.precision,
        "AR": affiliation.recall,
        "AF1": affiliation.f1,
        "P": precision,
        "R": recall,
        "F1": f1,
        "adjusted": bool(args.point_adjust),
        "ap_undefined": affiliation.precision_undefined,
    }
    if len(truth_events) == 1:
        report["accuracy"] = evaluate.ucr_accuracy(
            [(scores, truth_events)], margin=args.margin
        )
    text = json.dumps(report, indent=2, sort_keys=True)
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(text + "\n")
    print(text)
    return 0


def cmd_synth(args) -> int:
    spec = _load_synth_spec(args.spec)
    seed = spec.get("seed", args.seed or 0)
    train_ds, test_ds = data_io.synth_pair(spec, seed)
    prefix = Path(args.out_prefix)
    prefix.parent.mkdir(parents=True, exist_ok=True)
    paths = {}
    for role, ds in (("train", train_ds), ("test", test_ds)):
        path = Path(f"{prefix}_{role}.csv")
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(",".join(f"c{i}" for i in range(ds.channels)) + "\n")
            for t in range(ds.length):
                fh.write(",".join(f"{v:.9g}" for v in ds.values[:, t]) + "\n")
        paths[role] = path
    labels_path = Path(f"{prefix}_test_labels.csv")
    with open(labels_path, "w", encoding="utf-8") as fh:
        fh.write("label\n")
        for v in test_ds.labels:
            fh.write(f"{int(v)}\n")
    print(f"wrote {paths['train']}, {paths['test']}, {labels_path}")
    return 0


_SWEEP_PARAMS = {
    "window": "window_size",
    "layers": "student_layers",
    "prototypes": "prototype_count",
    "aug": "augmentation",
}


def _sweep_config(base: Config, param: str, value: str) -> Config:
    field_name = _SWEEP_PARAMS[param]
    if param == "aug":
        kinds = tuple(value.split("+"))
        return replace(base, augmentation=AugmentSpec(
            kinds=kinds,
            segment_fraction=base.augmentation.segment_fraction,
            jitter_sigma=base.augmentation.jitter_sigma,
            scale_range=base.augmentation.scale_range,
            warp_knots=base.augmentation.warp_knots,
        ))
    return replace(base, **{field_name: int(value)})


def cmd_sweep(args) -> int:
    base = _load_config(args)
    train_ds = _load_split(args, "train")
    test_ds = _load_split(args, "test")
    if test_ds.labels is None:
        raise DataError("sweep needs labeled test data")
    rows = []
    for value in args.values.split(","):
        value = value.strip()
        row = {"param": args.param, "value": value, "status": "ok",
               "acc": "", "ap": "", "ar": "", "af1": ""}
        try:
            config = _sweep_config(base, args.param, value)
            batch = window(train_ds, config.window_size, config.window_size)
            state = train(batch, config, strategy=args.strategy)
            trace = detect.score_series(state, test_ds, stride=1)
            _, pred_events = detect.threshold(trace, config.threshold_quantile)
            truth_events = evaluate.EventSet.from_binary(test_ds.labels)
            result = evaluate.affiliation_metrics(pred_events, truth_events, trace.length)
            row.update(ap=f"{result.precision:.6f}", ar=f"{result.recall:.6f}",
                       af1=f"{result.f1:.6f}")
            if len(truth_events) == 1:
                acc = evaluate.ucr_accuracy([(trace.point_scores, truth_events)],
                                            margin=config.window_size)
                row["acc"] = f"{acc:.6f}"
        except Exception as exc:                       # keep sweeping past failures
            row.update(status=f"error: {exc}")
        rows.append(row)
    with open(args.out, "w", encoding="utf-8", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=["param", "value", "status",
                                                "acc", "ap", "ar", "af1"])
        writer.writeheader()
        writer.writerows(rows)
    print(f"sweep results written to {args.out} ({len(rows)} rows)")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="distill-tsad",
                     description="knowledge-distillation time series anomaly detection")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_data_args(p, with_labels=True):
        p.add_argument("--data", help="UCR-named .txt/.csv file or a values CSV")
        p.add_argument("--synth", help="synthetic dataset spec (inline JSON or a path)")
        p.add_argument("--index-base", type=int, default=1, choices=(0, 1),
                       help="index base of UCR filename fields")
        if with_labels:
            p.add_argument("--labels", help="label CSV aligned with a values CSV")

    p_train = sub.add_parser("train", parents=[], help="train a detector")
    p_train.add_argument("--config", help="JSON config path (defaults used otherwise)")
    add_data_args(p_train, with_labels=False)
    p_train.add_argument("--out", required=True, help="checkpoint output path")
    p_train.add_argument("--strategy", default="full",
                         choices=("full", "nonaug", "noct", "wcs"))
    p_train.add_argument("--seed", type=int, help="override the config seed")
    p_train.add_argument("--train-stride", type=int,
                         help="window stride for training (default: window size)")
    p_train.add_argument("--backbone", help="pretrained backbone container file")
    p_train.add_argument("--log", help="training log JSONL path")
    p_train.set_defaults(func=cmd_train)

    p_score = sub.add_parser("score", help="score a series with a checkpoint")
    p_score.add_argument("--ckpt", required=True)
    add_data_args(p_score)
    p_score.add_argument("--stride", type=int, default=1)
    p_score.add_argument("--aggregate", default="mean", choices=("mean", "max"))
    p_score.add_argument("--out", required=True, help="trace CSV output path")
    p_score.add_argument("--svg", help="optional SVG plot path")
    p_score.add_argument("--seed", type=int, help="seed for --synth data")
    p_score.set_defaults(func=cmd_score)

    p_eval = sub.add_parser("eval", help="evaluate a trace CSV")
    p_eval.add_argument("--trace", required=True)
    p_eval.add_argument("--truth", help="label CSV (default: labels in the trace)")
    p_eval.add_argument("--quantile", type=float, default=0.99)
    p_eval.add_argument("--point-adjust", action="store_true")
    p_eval.add_argument("--margin", type=int, default=100,
                        help="argmax tolerance for the accuracy metric")
    p_eval.add_argument("--dataset", default="", help="dataset name for the report")
    p_eval.add_argument("--out", help="metrics JSON output path")
    p_eval.set_defaults(func=cmd_eval)

    p_synth = sub.add_parser("synth", help="generate a synthetic dataset")
    p_synth.add_argument("--spec", required=True, help="inline JSON or a path")
    p_synth.add_argument("--seed", type=int, default=None)
    p_synth.add_argument("--out-prefix", required=True)
    p_synth.set_defaults(func=cmd_synth)

    p_sweep = sub.add_parser("sweep", help="train+eval across one parameter")
    p_sweep.add_argument("--config")
    add_data_args(p_sweep)
    p_sweep.add_argument("--param", required=True, choices=sorted(_SWEEP_PARAMS))
    p_sweep.add_argument("--values", required=True, help="comma-separated values")
    p_sweep.add_argument("--strategy", default="full",
                         choices=("full", "nonaug", "noct", "wcs"))
    p_sweep.add_argument("--seed", type=int)
    p_sweep.add_argument("--out", required=True, help="results CSV path")
    p_sweep.set_defaults(func=cmd_sweep)
    return parser


def main(argv=None) -> int:
    threads = os.environ.get("DISTILL_TSAD_THREADS")
    if threads:
        try:
            torch.set_num_threads(max(1, int(threads)))
        except ValueError:
            print(f"ignoring invalid DISTILL_TSAD_THREADS={threads!r}", file=sys.stderr)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except DataError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return DATA_EXIT
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return DATA_EXIT
    except (ValueError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return DATA_EXIT
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return NUMERIC_EXIT


if __name__ == "__main__":
    sys.exit(main())
