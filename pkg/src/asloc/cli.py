"""Command-line front end: synth, train, localize, eval, diagnose, gradcheck.

Configuration comes from flags plus an optional ``--config`` file of
``key=value`` lines (keys use the flag names with dashes or underscores);
flags override the file, the file overrides built-in defaults, and unknown
keys are rejected. Every command is deterministic under a fixed seed.

Exit codes: 0 success, 2 configuration error, 3 input/output error,
4 numeric failure.
"""

from __future__ import annotations

import argparse
import csv
import os
import sys

import numpy as np

from . import data as data_mod
from . import evaluation as eval_mod
from . import inference as inf_mod
from . import model as model_mod
from . import training as train_mod
from .errors import ConfigError, DataError, NumericError
from .gradcheck import gradcheck_case

EXIT_CONFIG = 2
EXIT_IO = 3
EXIT_NUMERIC = 4


def _load_config_file(path: str) -> dict[str, str]:
    if not os.path.isfile(path):
        raise DataError(f"config file not found: {path}")
    values = {}
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{line_no}: expected key=value, got {line!r}")
            key, value = line.split("=", 1)
            values[key.strip().replace("-", "_")] = value.strip()
    return values


def _merge_config(args: argparse.Namespace, parser: argparse.ArgumentParser) -> argparse.Namespace:
    """Overlay config-file values under explicitly passed flags."""
    if not getattr(args, "config", None):
        return args
    file_values = _load_config_file(args.config)
    known = {a.dest for a in parser._actions}
    for key, raw in file_values.items():
        if key not in known or key in ("config", "help"):
            raise ConfigError(f"unknown config key {key!r}")
        if getattr(args, key) is not None:
            continue  # flag wins
        action = next(a for a in parser._actions if a.dest == key)
        if action.type is not None:
            setattr(args, key, action.type(raw))
        elif isinstance(action, argparse._StoreTrueAction):
            setattr(args, key, raw.lower() in ("1", "true", "yes"))
        else:
            setattr(args, key, raw)
    return args


def _fill_defaults(args: argparse.Namespace, defaults: dict) -> argparse.Namespace:
    for key, value in defaults.items():
        if getattr(args, key, None) is None:
            setattr(args, key, value)
    return args


def _parse_alphas(text: str) -> tuple[float, ...]:
    return tuple(float(x) for x in text.split(","))


def _parse_rates(text: str) -> tuple[float, ...]:
    return tuple(float(x) for x in text.split(","))


# ---------------------------------------------------------------- commands

SYNTH_DEFAULTS = dict(
    seed=0, classes=5, dim=20, instances=64, videos_train=200, videos_test=100,
    noise_sigma=0.3, action_fraction=0.2, context_fraction=0.25, max_classes=2,
)


def cmd_synth(args) -> int:
    cfg = data_mod.SyntheticConfig(
        num_classes=args.classes,
        feature_dim=args.dim,
        num_instances=args.instances,
        videos_train=args.videos_train,
        videos_test=args.videos_test,
        noise_sigma=args.noise_sigma,
        action_fraction=args.action_fraction,
        context_fraction=args.context_fraction,
        max_classes_per_video=args.max_classes,
        seed=args.seed,
    )
    train_set, test_set = data_mod.generate_synthetic(cfg)
    os.makedirs(args.out, exist_ok=True)
    data_mod.save_dataset(train_set, os.path.join(args.out, "train.manifest"))
    data_mod.save_dataset(test_set, os.path.join(args.out, "test.manifest"))
    total = sum(r.num_instances for r in train_set.records) or 1
    action = sum(int(r.gt_mask().sum()) for r in train_set.records)
    print(f"videos: {len(train_set.records)} train / {len(test_set.records)} test")
    print(f"classes: {cfg.num_classes}  feature_dim: {cfg.feature_dim}")
    print(f"action fraction (train): {action / total:.4f}")
    return 0


TRAIN_DEFAULTS = dict(
    seed=0, epochs=100, batch_size=16, lr=1e-4, weight_decay=1e-4, q=0.7, beta=0.5,
    k_ratio=0.125, hidden=512, schedule="joint", actionness_loss="gce",
    class_rate_cap=None, early_stop=None,
)


def cmd_train(args) -> int:
    dataset = data_mod.load_dataset(args.data)
    config = train_mod.TrainConfig(
        epochs=args.epochs,
        batch_size=args.batch_size,
        lr=args.lr,
        weight_decay=args.weight_decay,
        schedule=args.schedule,
        seed=args.seed,
        q=args.q,
        beta=args.beta,
        k_ratio=args.k_ratio,
        hidden=args.hidden,
        actionness_loss=args.actionness_loss,
        class_rate_cap=args.class_rate_cap,
        early_stop=bool(args.early_stop),
    )
    model, logs = train_mod.train(dataset, config)
    os.makedirs(args.out, exist_ok=True)
    model_mod.save_checkpoint(model, os.path.join(args.out, "checkpoint.bin"))
    train_mod.write_epoch_log(logs, os.path.join(args.out, "epoch_log.csv"))
    if logs:
        print(f"epoch {logs[-1].epoch}: l_cls={logs[-1].mean_l_cls:.4f} "
              f"l_asl={logs[-1].mean_l_asl:.4f}")
    print(f"checkpoint: {os.path.join(args.out, 'checkpoint.bin')}")
    return 0


LOCALIZE_DEFAULTS = dict(mode="asl", nms_iou=0.4, alphas=inf_mod.DEFAULT_ALPHAS)


def cmd_localize(args) -> int:
    model = model_mod.load_checkpoint(args.checkpoint)
    dataset = data_mod.load_dataset(args.data)
    config = inf_mod.InferenceConfig(
        alphas=tuple(args.alphas), nms_iou=args.nms_iou, mode=args.mode
    )
    proposals = inf_mod.localize_dataset(model, dataset, config)
    inf_mod.write_proposals(proposals, dataset.class_names, args.out)
    print(f"{len(proposals)} proposals -> {args.out}")
    return 0


EVAL_DEFAULTS = dict(grid="thumos", recall_n=100)


def cmd_eval(args) -> int:
    dataset = data_mod.load_dataset(args.data)
    proposals = inf_mod.read_proposals(args.proposals)
    grid = eval_mod.THUMOS_GRID if args.grid == "thumos" else eval_mod.ANET_GRID
    config = eval_mod.EvalConfig(iou_thresholds=grid)
    report = eval_mod.evaluate(proposals, dataset, config, recall_n=args.recall_n)
    os.makedirs(args.out, exist_ok=True)
    eval_mod.write_ap_table(report, config, dataset.class_names, os.path.join(args.out, "ap_table.csv"))
    eval_mod.write_summary(report, config, os.path.join(args.out, "summary.txt"))
    print(f"mAP: {report.map:.4f}")
    tp, fp, fn, tn = report.confusion
    print(f"instance confusion: TP={tp} FP={fp} FN={fn} TN={tn}")
    return 0


DIAGNOSE_DEFAULTS = dict(recall_n=100, sweep=None, sweep_epochs=20, seed=0, log=None,
                         train_data=None)


def cmd_diagnose(args) -> int:
    model = model_mod.load_checkpoint(args.checkpoint)
    dataset = data_mod.load_dataset(args.data)
    if all(rec.gt_segments is None for rec in dataset.records):
        raise DataError("diagnose needs ground-truth segments in the dataset")

    rows: list[tuple[str, str]] = []
    fracs, accs = [], []
    pooled_a, pooled_gt = [], []
    for rec in dataset.records:
        state = model_mod.run_forward(model, rec)
        accs.append(train_mod.g_membership_accuracy(state.actionness, state.t_pos, state.t_neg))
        if state.t_pos.size:
            fracs.append(float(np.mean(rec.gt_mask()[state.t_pos])))
        pooled_a.append(state.actionness)
        pooled_gt.append(rec.gt_mask())
    recall, used = eval_mod.recall_at_n(
        np.concatenate(pooled_a), np.concatenate(pooled_gt), args.recall_n
    )
    rows.append(("tpos_action_fraction", repr(float(np.mean(fracs))) if fracs else "absent"))
    rows.append(("g_membership_accuracy", repr(float(np.mean(accs)))))
    rows.append((f"recall@{used}", repr(recall)))

    if args.log:
        for log in train_mod.read_epoch_log(args.log):
            value = "absent" if log.tpos_iou_mean is None else repr(log.tpos_iou_mean)
            rows.append((f"tpos_iou_epoch_{log.epoch}", value))
    else:
        rows.append(("tpos_iou_series", "absent"))

    if args.sweep:
        if not args.train_data:
            raise ConfigError("--sweep requires --train-data")
        train_set = data_mod.load_dataset(args.train_data)
        for rate in args.sweep:
            config = train_mod.TrainConfig(
                epochs=args.sweep_epochs,
                seed=args.seed,
                hidden=model.classifier.hidden_dim,
                beta=model.beta,
                k_ratio=model.k_ratio,
                q=model.q,
                actionness_loss=model.actionness_loss,
                class_rate_cap=rate,
            )
            swept_model, _ = train_mod.train(train_set, config)
            a = np.concatenate(
                [model_mod.compute_actionness(swept_model.actionness, rec.features)
                 for rec in dataset.records]
            )
            sweep_recall, _ = eval_mod.recall_at_n(a, np.concatenate(pooled_gt), args.recall_n)
            rows.append((f"sweep_rate_{rate}", repr(sweep_recall)))

    with open(args.out, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["metric", "value"])
        writer.writerows(rows)
    for key, value in rows[:3]:
        print(f"{key}: {value}")
    return 0


GRADCHECK_DEFAULTS = dict(seed=0, trials=25, tolerance=1e-4)


def cmd_gradcheck(args) -> int:
    worst = 0.0
    for trial in range(args.trials):
        err = gradcheck_case(args.seed * 100_000 + trial)
        worst = max(worst, err)
        print(f"trial {trial}: max relative error {err:.3e}")
    print(f"worst: {worst:.3e} (tolerance {args.tolerance:.1e})")
    if worst >= args.tolerance:
        raise NumericError(f"gradient check failed: {worst:.3e} >= {args.tolerance:.1e}")
    return 0


# ---------------------------------------------------------------- wiring

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="asloc",
        description="Weakly supervised temporal action localization toolkit",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p):
        p.add_argument("--seed", type=int)
        p.add_argument("--config", help="key=value config file; flags override it")

    p = sub.add_parser("synth", help="generate a synthetic corpus")
    add_common(p)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--classes", type=int)
    p.add_argument("--dim", type=int)
    p.add_argument("--instances", type=int)
    p.add_argument("--videos-train", type=int)
    p.add_argument("--videos-test", type=int)
    p.add_argument("--noise-sigma", type=float)
    p.add_argument("--action-fraction", type=float)
    p.add_argument("--context-fraction", type=float)
    p.add_argument("--max-classes", type=int)
    p.set_defaults(func=cmd_synth, defaults=SYNTH_DEFAULTS, parser_ref=p)

    p = sub.add_parser("train", help="train a model")
    add_common(p)
    p.add_argument("--data", required=True, help="training manifest")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--weight-decay", type=float)
    p.add_argument("--q", type=float)
    p.add_argument("--beta", type=float)
    p.add_argument("--k-ratio", type=float)
    p.add_argument("--hidden", type=int)
    p.add_argument("--schedule", help="joint | f-then-g | alt:<n>:<m>")
    p.add_argument("--actionness-loss", choices=["gce", "bce"])
    p.add_argument("--class-rate-cap", type=float)
    p.add_argument("--early-stop", action="store_true", default=None)
    p.set_defaults(func=cmd_train, defaults=TRAIN_DEFAULTS, parser_ref=p)

    p = sub.add_parser("localize", help="generate proposals from a checkpoint")
    add_common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True, help="proposal CSV path")
    p.add_argument("--mode", choices=list(inf_mod.MODES))
    p.add_argument("--nms-iou", type=float)
    p.add_argument("--alphas", type=_parse_alphas, help="comma-separated thresholds")
    p.set_defaults(func=cmd_localize, defaults=LOCALIZE_DEFAULTS, parser_ref=p)

    p = sub.add_parser("eval", help="score proposals against ground truth")
    add_common(p)
    p.add_argument("--proposals", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--grid", choices=["thumos", "anet"])
    p.add_argument("--recall-n", type=int)
    p.set_defaults(func=cmd_eval, defaults=EVAL_DEFAULTS, parser_ref=p)

    p = sub.add_parser("diagnose", help="selection diagnostics for a checkpoint")
    add_common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True, help="manifest with ground truth")
    p.add_argument("--out", required=True, help="diagnostics CSV path")
    p.add_argument("--log", help="epoch log CSV from training")
    p.add_argument("--recall-n", type=int)
    p.add_argument("--sweep", type=_parse_rates, help="class-rate cap values to sweep")
    p.add_argument("--sweep-epochs", type=int)
    p.add_argument("--train-data", help="training manifest for the sweep")
    p.set_defaults(func=cmd_diagnose, defaults=DIAGNOSE_DEFAULTS, parser_ref=p)

    p = sub.add_parser("gradcheck", help="finite-difference gradient verification")
    add_common(p)
    p.add_argument("--trials", type=int)
    p.add_argument("--tolerance", type=float)
    p.set_defaults(func=cmd_gradcheck, defaults=GRADCHECK_DEFAULTS, parser_ref=p)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        args = _merge_config(args, args.parser_ref)
        args = _fill_defaults(args, dict(args.defaults, seed=args.defaults.get("seed", 0)))
        if getattr(args, "seed", None) is None:
            args.seed = 0
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, OSError) as exc:
        print(f"input/output error: {exc}", file=sys.stderr)
        return EXIT_IO
    except NumericError as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
