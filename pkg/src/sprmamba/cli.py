"""``sprmamba`` command line: gen-data, train, predict, eval, selfcheck.

Exit codes: 0 success, 1 a check failed, 2 usage or data error.
"""

from __future__ import annotations

import argparse
import dataclasses
import logging
import sys
from pathlib import Path

import numpy as np

from .checkpoint import load_checkpoint, save_checkpoint
from .config import RunConfig, resolve_seed
from .data import (FEATURE_SUFFIX, gen_synthetic, list_sequences, load_dir, phase_totals, read_features,
                   read_labels_csv, read_predictions, write_features, write_predictions)
from .exceptions import DataError, DimensionError, SprMambaError, UsageError
from .metrics import evaluate
from .ribbon import ribbon_block, svg_ribbons
from .selfcheck import run_selfcheck
from .tensor import no_grad
from .training import train

logger = logging.getLogger("sprmamba")

EXIT_OK, EXIT_CHECK, EXIT_USAGE = 0, 1, 2
PRED_SUFFIX = ".pred.csv"


def _load_config(args) -> RunConfig:
    return RunConfig.load(args.config).with_seed(args.seed)


def cmd_gen_data(args) -> int:
    config = _load_config(args)
    synth = config.synth
    if args.count is not None:
        if args.count < 1:
            raise UsageError("--count must be >= 1")
        synth = dataclasses.replace(synth, num_sequences=args.count)
    out = Path(args.out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise UsageError(f"cannot create output directory {out}: {exc.strerror}") from None
    sequences = gen_synthetic(synth)
    for seq in sequences:
        write_features(out / f"{seq.video_id}{FEATURE_SUFFIX}", seq)
    totals = phase_totals(sequences, synth.num_classes)
    print(f"{'phase':<8}{'frames':>10}{'share %':>10}")
    for c, n in enumerate(totals):
        print(f"{c:<8}{n:>10}{100.0 * n / totals.sum():>10.2f}")
    print(f"{'total':<8}{totals.sum():>10}{100.0:>10.2f}")
    print(f"wrote {len(sequences)} sequences to {out}")
    return EXIT_OK


def cmd_train(args) -> int:
    config = _load_config(args)
    data_dir = Path(args.data_dir)
    if not data_dir.is_dir():
        raise UsageError(f"data directory {data_dir} does not exist")
    sequences = load_dir(data_dir)
    if not sequences:
        raise UsageError(f"no {FEATURE_SUFFIX} files in {data_dir}")
    dims = {s.feature_dim for s in sequences}
    if len(dims) != 1:
        raise DataError(f"sequences disagree on feature dimension: {sorted(dims)}")
    (dim,) = dims
    model_config = config.model
    if not config.is_set("model.input_dim"):
        logger.info("model.input_dim taken from the data: %d", dim)
        model_config = model_config.with_(input_dim=dim)
    elif model_config.input_dim != dim:
        raise DimensionError(f"model.input_dim={model_config.input_dim} but the data has D={dim}")
    top = max(int(s.labels.max()) for s in sequences)
    if top >= model_config.num_classes:
        raise DataError(f"label {top} outside [0, {model_config.num_classes})")
    validation = load_dir(args.val_dir) if args.val_dir else None

    def progress(record):
        logger.info("epoch %d lr=%.3g loss=%.4f train_acc=%.2f", record.epoch, record.lr, record.total_loss,
                    record.train_acc)

    model, history = train(sequences, model_config, config.train, validation=validation, progress=progress)
    out = Path(args.out)
    save_checkpoint(out, model)
    history_path = Path(args.history) if args.history else out.with_name(out.name + ".history.csv")
    history.write_csv(history_path)
    print(f"checkpoint: {out}\nhistory: {history_path}")
    return EXIT_OK


def cmd_predict(args) -> int:
    model = load_checkpoint(args.checkpoint)
    stages = model.config.stages
    stage = stages if args.stage is None else args.stage
    if not 1 <= stage <= stages:
        raise UsageError(f"--stage must lie in [1, {stages}], got {stage}")
    source = Path(args.features)
    paths = list_sequences(source) if source.is_dir() else [source]
    if not paths:
        raise UsageError(f"no {FEATURE_SUFFIX} files in {source}")
    out = Path(args.out)
    if source.is_dir():
        out.mkdir(parents=True, exist_ok=True)
    for path in paths:
        seq = read_features(path)
        if seq.feature_dim != model.config.input_dim:
            raise DimensionError(f"{path}: expected feature dim D={model.config.input_dim}, got D={seq.feature_dim}")
        with no_grad():
            probs = model(seq.features.astype(np.float64))[stage - 1].probs.data
        target = out / f"{seq.video_id}{PRED_SUFFIX}" if source.is_dir() else out
        write_predictions(target, probs, true=seq.labels)
        print(f"{seq.video_id}: {len(seq)} frames -> {target}")
    return EXIT_OK


def _eval_pairs(pred_arg: str, labels_arg: str | None):
    pred_path = Path(pred_arg)
    files = sorted(pred_path.glob("*" + PRED_SUFFIX)) if pred_path.is_dir() else [pred_path]
    if not files:
        raise UsageError(f"no prediction files in {pred_path}")
    pairs = []
    for f in files:
        video_id = f.name[: -len(PRED_SUFFIX)] if f.name.endswith(PRED_SUFFIX) else f.stem
        preds = read_predictions(f)
        if labels_arg is None:
            gt = preds.true
            if np.any(gt < 0):
                raise DataError(f"{f}: no ground truth in the file; pass --labels")
        else:
            labels = Path(labels_arg)
            if labels.is_dir():
                labels = labels / f"{video_id}.labels.csv"
            gt = read_labels_csv(labels)
        if gt.size != preds.pred.size:
            raise DataError(f"{video_id}: {preds.pred.size} predictions but {gt.size} labels")
        pairs.append((video_id, preds.pred, gt, preds.probs.shape[1]))
    return pairs


def cmd_eval(args) -> int:
    pairs = _eval_pairs(args.pred, args.labels)
    num_classes = max(p[3] for p in pairs)
    triples = [(v, p, g) for v, p, g, _ in pairs]
    reports = [evaluate(triples, num_classes)]
    if args.relaxed:
        reports.append(evaluate(triples, num_classes, relaxed=True, fps=args.fps,
                                window_seconds=args.window_seconds))
    for report in reports:
        print(report.to_text())
        print()
    for video_id, pred, gt in triples:
        print(ribbon_block(video_id, gt, pred, args.ribbon_width))
    if args.csv:
        Path(args.csv).write_text("".join(r.to_csv() if i == 0 else r.to_csv().split("\n", 1)[1]
                                          for i, r in enumerate(reports)))
    if args.svg:
        rows = []
        for video_id, pred, gt in triples:
            rows += [(f"{video_id} gt", gt), (f"{video_id} pred", pred)]
        Path(args.svg).write_text(svg_ribbons(rows))
    return EXIT_OK


def cmd_selfcheck(args) -> int:
    results = run_selfcheck(corrupt_kernel=args.inject_fault)
    for r in results:
        print(f"[{'PASS' if r.passed else 'FAIL'}] {r.name}: {r.detail} ({r.seconds:.2f}s)")
    failed = sum(not r.passed for r in results)
    print(f"{len(results) - failed}/{len(results)} checks passed")
    return EXIT_OK if failed == 0 else EXIT_CHECK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sprmamba", description="Surgical phase recognition with SPRMamba.")
    parser.add_argument("-q", "--quiet", action="store_true", help="only log warnings and errors")
    sub = parser.add_subparsers(dest="command", required=True)

    def command(name, func, help_text):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--seed", type=int, default=None, help="global seed (the SPRM_SEED variable overrides it)")
        p.set_defaults(func=func)
        return p

    p = command("gen-data", cmd_gen_data, "write synthetic feature/label files")
    p.add_argument("--config")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--count", type=int)

    p = command("train", cmd_train, "train a model on a directory of sequences")
    p.add_argument("--config")
    p.add_argument("--data-dir", required=True)
    p.add_argument("--out", required=True, help="checkpoint path")
    p.add_argument("--history", help="history CSV (default: <out>.history.csv)")
    p.add_argument("--val-dir", help="validation sequences; keeps the best epoch")

    p = command("predict", cmd_predict, "write per-frame predictions")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--features", required=True, help="an .sprf file or a directory of them")
    p.add_argument("--out", required=True, help="CSV path, or a directory when --features is one")
    p.add_argument("--stage", type=int, help="1-based stage whose output is written (default: last)")

    p = command("eval", cmd_eval, "score prediction files")
    p.add_argument("--pred", required=True, help="a prediction CSV or a directory of *.pred.csv")
    p.add_argument("--labels", help="labels CSV or directory (default: the 'true' column)")
    p.add_argument("--fps", type=float, default=1.0)
    p.add_argument("--relaxed", action="store_true", help="also report the boundary-relaxed protocol")
    p.add_argument("--window-seconds", type=float, default=10.0)
    p.add_argument("--ribbon-width", type=int, default=80)
    p.add_argument("--csv", help="write metric,mean,std rows here")
    p.add_argument("--svg", help="write segment ribbons as SVG here")

    p = command("selfcheck", cmd_selfcheck, "run the embedded invariant suite")
    p.add_argument("--inject-fault", action="store_true", help=argparse.SUPPRESS)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        args.seed = resolve_seed(args.seed)
        return args.func(args)
    except (SprMambaError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
