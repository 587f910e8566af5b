"""Command-line interface.

Exit codes: 0 success, 1 usage error, 2 data error.
"""

from __future__ import annotations

import argparse
import csv
import os
import sys

import numpy as np
import torch

from . import bundled_score_table
from .checkpoint import load_checkpoint, save_checkpoint
from .detection import (
    ScoreSeries,
    ThresholdSpec,
    save_detection,
    score,
    threshold,
)
from .errors import MalformedFile, PipelineError
from .evaluation import (
    ablate_sampling,
    confusion,
    dunn_posthoc,
    f1,
    fnr,
    fpr,
    friedman_test,
    load_score_table,
    point_adjust,
    save_ablation,
)
from .model import ModelConfig, ReconstructionTransformer
from .signalio import (
    generate_synthetic,
    generator_config_from_file,
    load_signal,
    load_truth,
    save_signal,
    save_truth,
)
from .training import (
    TrainConfig,
    TrainMode,
    split_train_val,
    train,
    train_config_from_file,
)
from .vitals import (
    NormStats,
    compute_vitals,
    detect_beats,
    load_vitals,
    make_windows,
    normalize,
    save_vitals,
    stress_point_labels,
)


class _Parser(argparse.ArgumentParser):
    # argparse exits 2 on usage errors; the CLI contract wants 1
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"error: {message}", file=sys.stderr)
        raise SystemExit(1)


def _default_seed() -> int:
    return int(os.environ.get("STRESSMON_SEED", "0"))


def _add_model_flags(p: argparse.ArgumentParser):
    p.add_argument("--window-len", type=int, default=5)
    p.add_argument("--patch-size", type=int, default=1)
    p.add_argument("--embed-dim", type=int, default=128)
    p.add_argument("--blocks", type=int, default=3)
    p.add_argument("--heads", type=int, default=4)
    p.add_argument("--prompt", type=int, default=4)


def _model_config(args, n_vars: int = 2) -> ModelConfig:
    return ModelConfig(
        n_vars=n_vars, window_len=args.window_len, patch_size=args.patch_size,
        embed_dim=args.embed_dim, n_blocks=args.blocks, n_heads=args.heads,
        n_prompt=args.prompt, seed=args.seed)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="stressmon",
                     description="Stress-as-anomaly-detection pipeline")
    parser.add_argument("--seed", type=int, default=_default_seed(),
                        help="global RNG seed (env STRESSMON_SEED)")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic signal + truth")
    p.add_argument("--config", required=True)
    p.add_argument("--out-signal", required=True)
    p.add_argument("--out-truth", required=True)

    p = sub.add_parser("extract", help="signal -> HR/HRV vitals CSV")
    p.add_argument("--in", dest="inp", required=True)
    p.add_argument("--step", type=float, default=10.0)
    p.add_argument("--lookback", type=float, default=60.0)
    p.add_argument("--truth", help="truth CSV; adds a label column")
    p.add_argument("--out", required=True)

    p = sub.add_parser("train", help="fit the reconstruction model")
    p.add_argument("--vitals", required=True)
    p.add_argument("--config", help="key=value training config file")
    p.add_argument("--mode", choices=[m.value for m in TrainMode])
    p.add_argument("--out", required=True)
    p.add_argument("--report", help="write epoch,train_loss,val_loss CSV")
    _add_model_flags(p)

    p = sub.add_parser("detect", help="score a vitals CSV with a checkpoint")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--vitals", required=True)
    p.add_argument("--calib", default="ckpt",
                   help="'ckpt' (stored val errors), 'self', or a vitals CSV")
    p.add_argument("--low", type=float, default=3.0)
    p.add_argument("--high", type=float, default=97.0)
    p.add_argument("--one-sided", action="store_true")
    p.add_argument("--out", required=True)

    p = sub.add_parser("eval", help="point-wise F1/FPR/FNR of labels")
    p.add_argument("--pred", required=True)
    p.add_argument("--truth", required=True)
    p.add_argument("--point-adjust", action="store_true")

    p = sub.add_parser("ablate", help="F1 vs vitals sampling interval")
    p.add_argument("--signal", required=True)
    p.add_argument("--truth", required=True)
    p.add_argument("--intervals", default="10,20,30,60")
    p.add_argument("--lookback", type=float, default=60.0)
    p.add_argument("--config", help="key=value training config file")
    p.add_argument("--out", required=True)
    _add_model_flags(p)

    p = sub.add_parser("stats", help="Friedman + Dunn on a score table")
    p.add_argument("--table", help="method x dataset F1 CSV (default: bundled)")
    p.add_argument("--control", default="UniTS")
    p.add_argument("--methods", help="comma-separated subset")
    p.add_argument("--adjust", choices=["bonferroni", "holm"])

    return parser


def _read_label_column(path) -> np.ndarray:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise MalformedFile(f"{path}: empty file")
        header = [h.strip().lower() for h in header]
        if "label" not in header:
            raise MalformedFile(f"{path}: no label column")
        idx = header.index("label")
        return np.array([int(row[idx]) for row in reader])


def _cmd_synth(args) -> int:
    config = generator_config_from_file(args.config)
    if args.seed:
        import dataclasses
        config = dataclasses.replace(config, seed=args.seed)
    signal, truth = generate_synthetic(config)
    save_signal(signal, args.out_signal)
    save_truth(truth, args.out_truth)
    print(f"wrote {len(signal.samples)} samples, {len(truth.beat_times)} beats, "
          f"{len(truth.stress_intervals)} stress episodes")
    return 0


def _cmd_extract(args) -> int:
    signal = load_signal(args.inp, "csv")
    beats = detect_beats(signal)
    vitals = compute_vitals(beats, step_s=args.step, lookback_s=args.lookback)
    labels = None
    if args.truth:
        labels = stress_point_labels(vitals, load_truth(args.truth))
    save_vitals(vitals, args.out, labels)
    print(f"wrote {len(vitals)} vitals points (step {args.step} s)")
    return 0


def _cmd_train(args) -> int:
    series, labels = load_vitals(args.vitals)
    tconf = train_config_from_file(args.config) if args.config else TrainConfig()
    import dataclasses
    if args.mode:
        tconf = dataclasses.replace(tconf, mode=TrainMode(args.mode))
    if args.seed and tconf.seed == 0:
        tconf = dataclasses.replace(tconf, seed=args.seed)

    mconf = _model_config(args)
    windows = make_windows(series, mconf.window_len, labels=labels)
    train_split, _ = split_train_val(windows, tconf.split_fraction)
    _, stats = normalize(train_split)
    windows_norm, _ = normalize(windows, stats)

    torch.manual_seed(mconf.seed)
    model = ReconstructionTransformer(mconf)
    model, report = train(windows_norm, tconf, model)

    _, val_norm = split_train_val(windows_norm, tconf.split_fraction)
    calib = score(model, val_norm)
    save_checkpoint(model, args.out, extras={
        "norm_mean": stats.mean, "norm_std": stats.std,
        "calib_scores": calib.scores,
    })
    if args.report:
        with open(args.report, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["epoch", "train_loss", "val_loss"])
            val_map = dict(report.val_losses)
            for e, tl in enumerate(report.train_losses):
                w.writerow([e, f"{tl:.6g}",
                            f"{val_map[e]:.6g}" if e in val_map else ""])
    print(f"final train loss {report.train_losses[-1]:.6g}, "
          f"best epoch {report.best_epoch}")
    return 0


def _cmd_detect(args) -> int:
    model, extras = load_checkpoint(args.ckpt)
    series, _ = load_vitals(args.vitals)
    stats = None
    if "norm_mean" in extras and "norm_std" in extras:
        stats = NormStats(extras["norm_mean"].astype(np.float64),
                          extras["norm_std"].astype(np.float64))
    batch = make_windows(series, model.config.window_len)
    batch, _ = normalize(batch, stats)
    s = score(model, batch)

    if args.calib == "self":
        calib = s
    elif args.calib == "ckpt":
        if "calib_scores" not in extras:
            raise MalformedFile("checkpoint has no stored calibration scores; "
                                "use --calib self or a vitals CSV")
        cs = extras["calib_scores"].astype(np.float64)
        calib = ScoreSeries(cs, cs[:, None])
    else:
        other, _ = load_vitals(args.calib)
        ob = make_windows(other, model.config.window_len)
        ob, _ = normalize(ob, stats)
        calib = score(model, ob)

    spec = ThresholdSpec(low_pct=args.low, high_pct=args.high,
                         two_sided=not args.one_sided)
    result = threshold(s, calib, spec)
    save_detection(result, args.out)
    print(f"{int(result.labels.sum())} / {len(result.labels)} points anomalous "
          f"(tau_low {result.tau_low:.4g}, tau_high {result.tau_high:.4g})")
    return 0


def _cmd_eval(args) -> int:
    pred = _read_label_column(args.pred)
    true = _read_label_column(args.truth)
    if args.point_adjust:
        pred = point_adjust(pred, true)
    c = confusion(pred, true)
    print(f"F1={f1(c):.4f} FPR={fpr(c):.4f} FNR={fnr(c):.4f} "
          f"(tp={c.tp} fp={c.fp} tn={c.tn} fn={c.fn})")
    return 0


def _cmd_ablate(args) -> int:
    signal = load_signal(args.signal, "csv")
    truth = load_truth(args.truth)
    intervals = [float(v) for v in args.intervals.split(",")]
    tconf = train_config_from_file(args.config) if args.config else TrainConfig()
    mconf = _model_config(args)
    report = ablate_sampling(signal, truth, intervals, mconf, tconf,
                             lookback_s=args.lookback)
    save_ablation(report, args.out)
    for row in report.rows:
        print(f"interval {row.interval_s:g} s: F1 {row.f1:.4f} "
              f"({row.drop_pct:+.1f}%)")
    return 0


def _cmd_stats(args) -> int:
    table = load_score_table(args.table) if args.table else bundled_score_table()
    if args.methods:
        table = table.subset([m.strip() for m in args.methods.split(",")])
    stat, p = friedman_test(table)
    print(f"Friedman: statistic={stat:.4f} p={p:.4g} "
          f"({len(table.methods)} methods, {len(table.datasets)} datasets)")
    for name, pv in dunn_posthoc(table, args.control, adjust=args.adjust).items():
        print(f"Dunn vs {args.control}: {name} p={pv:.4g}")
    return 0


_COMMANDS = {
    "synth": _cmd_synth,
    "extract": _cmd_extract,
    "train": _cmd_train,
    "detect": _cmd_detect,
    "eval": _cmd_eval,
    "ablate": _cmd_ablate,
    "stats": _cmd_stats,
}


def cli_main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else 1
    try:
        return _COMMANDS[args.command](args)
    except PipelineError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


def main():
    raise SystemExit(cli_main())


if __name__ == "__main__":
    main()
