"""Command line entry point: ``hybridqc <subcommand>``.

Subcommands: gen-data, train, eval, attack, expressibility, report, run.
Every subcommand accepts ``--seed``, ``--config`` and ``--out`` and exits
non-zero on any error.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from ..attacks import AttackConfig, evaluate_under_attack
from ..exceptions import HybridQCError
from ..model import accuracy, load_checkpoint, save_checkpoint
from ..vqc import registry
from ..xpress import expressibility
from .config import ExperimentConfig
from .data import export_adversarial, generate_synthetic, load_directory, load_feature_csv, save_directory, split
from .experiment import build_model, load_data, output_lock, run_experiment
from .report import emit_report, parse_report, render_table


def _load_config(args) -> ExperimentConfig:
    cfg = ExperimentConfig.from_file(args.config) if args.config else ExperimentConfig()
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    if args.out is not None:
        cfg = replace(cfg, out=args.out)
    return cfg


def _labeled_data(path: str):
    p = Path(path)
    ds = load_feature_csv(p) if p.is_file() else load_directory(p)
    return ds.images, ds.labels


def cmd_gen_data(args) -> int:
    cfg = _load_config(args)
    count = args.count if args.count is not None else cfg.data.count
    h = args.height if args.height is not None else cfg.data.height
    w = args.width if args.width is not None else cfg.data.width
    ds = generate_synthetic(count, h, w, seed=cfg.seed)
    save_directory(args.out or cfg.out, ds.images, ds.labels, prefix="patch")
    print(f"wrote {len(ds)} patches to {args.out or cfg.out}")
    return 0


def cmd_train(args) -> int:
    cfg = _load_config(args)
    if args.data:
        p = Path(args.data)
        cfg = replace(cfg, data=replace(cfg.data, source="features" if p.is_file() else "directory", path=str(p)))
    out = Path(cfg.out)
    with output_lock(out):
        ds = split(load_data(cfg), cfg.train.split, seed=cfg.seed)
        X, y = ds.subset("train")
        ev = ds.subset("val") if "val" in ds.split_sizes() else None
        model = build_model(cfg).fit(X, y, eval_set=ev)
        save_checkpoint(model, out / "model.ckpt")
        (out / "history.json").write_text(json.dumps(model.history_, indent=2, sort_keys=True) + "\n")
        Xt, yt = ds.subset("test")
        print(f"test_accuracy={accuracy(model, Xt, yt):.4f}")
    return 0


def cmd_eval(args) -> int:
    model = load_checkpoint(args.model)
    X, y = _labeled_data(args.data)
    print(f"accuracy={accuracy(model, X, y):.4f}")
    return 0


def cmd_attack(args) -> int:
    cfg = _load_config(args)
    model = load_checkpoint(args.model)
    X, y = _labeled_data(args.data)
    acfg = AttackConfig(args.attack, args.eps, args.pgd_steps, args.pgd_alpha, args.pgd_random_start,
                        args.deepfool_max_iter, args.deepfool_overshoot, seed=cfg.seed)
    res = evaluate_under_attack(model, X, y, acfg)
    print(f"attack={acfg.kind} eps={acfg.epsilon:g} clean_accuracy={res.clean_accuracy:.4f} "
          f"accuracy={res.accuracy:.4f} success_rate={res.success_rate:.4f} "
          f"mean_linf={res.mean_linf:.6f} max_linf={res.max_linf:.6f}")
    if args.out:
        export_adversarial(args.out, X, res.batch.perturbed, y)
    return 0


def cmd_expressibility(args) -> int:
    cfg = _load_config(args)
    tmpl = registry(args.template)
    res = expressibility(tmpl, args.samples, args.bins, seed=cfg.seed)
    row = [tmpl.template_id, tmpl.n_qubits, res.samples, res.bins, repr(res.kl)]
    if args.out:
        with open(args.out, "w", newline="") as fh:
            wr = csv.writer(fh, lineterminator="\n")
            wr.writerow(["template", "n_qubits", "samples", "bins", "kl"])
            wr.writerow(row)
    csv.writer(sys.stdout, lineterminator="\n").writerow(row)
    return 0


def cmd_report(args) -> int:
    rows = [r for path in args.inputs for r in parse_report(path)]
    if args.out:
        emit_report(rows, args.out)
    sys.stdout.write(render_table(rows))
    return 0


def cmd_run(args) -> int:
    cfg = _load_config(args)
    res = run_experiment(cfg)
    sys.stdout.write(render_table(res.rows))
    return 0


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="override the config seed")
    common.add_argument("--config", default=None, help="experiment config JSON")
    common.add_argument("--out", default=None, help="output path")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="hybridqc", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", parents=[common], help="write a synthetic PPM patch directory")
    p.add_argument("--count", type=int)
    p.add_argument("--height", type=int)
    p.add_argument("--width", type=int)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", parents=[common], help="train a model per the config")
    p.add_argument("--data", help="PPM directory or feature CSV (overrides config)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", parents=[common], help="clean accuracy of a checkpoint")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("attack", parents=[common], help="accuracy under one attack; --out exports PPMs")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--attack", choices=["fgsm", "pgd", "deepfool"], required=True)
    p.add_argument("--eps", type=float, required=True)
    p.add_argument("--pgd-steps", type=int, default=10)
    p.add_argument("--pgd-alpha", type=float, default=None)
    p.add_argument("--pgd-random-start", action="store_true")
    p.add_argument("--deepfool-max-iter", type=int, default=50)
    p.add_argument("--deepfool-overshoot", type=float, default=0.02)
    p.set_defaults(func=cmd_attack)

    p = sub.add_parser("expressibility", parents=[common], help="KL expressibility of a registry template")
    p.add_argument("--template", type=int, required=True)
    p.add_argument("--samples", type=int, default=5000)
    p.add_argument("--bins", type=int, default=75)
    p.set_defaults(func=cmd_expressibility)

    p = sub.add_parser("report", parents=[common], help="merge and print report CSVs")
    p.add_argument("inputs", nargs="+")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("run", parents=[common], help="full experiment")
    p.set_defaults(func=cmd_run)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    np.seterr(all="raise", under="ignore")
    try:
        return args.func(args)
    except (HybridQCError, OSError, FloatingPointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
