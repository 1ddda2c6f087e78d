"""Command line entry point: ``mtlseg {gen-data,train,eval,sweep,ablation}``.

Exit codes: 0 success, 1 usage or configuration error, 2 runtime error
(including training divergence).
"""

import argparse
import glob
import logging
import os
import sys
from dataclasses import replace

from . import pipeline
from .config import gen_config_from, parse_grid, read_config, run_config_from, sweep_grid_from
from .data import write_dataset
from .errors import ConfigError, DivergenceError, MTLSegError

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2
DATASET_PATTERNS = ("img_*.ppm", "img_*.pgm", "seg_*.pgm", "bnd_*.pgm", "split.csv", "gen_config.txt")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _build_parser():
    p = _Parser(prog="mtlseg", description="Multi-task building footprint segmentation.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("gen-data", help="generate a synthetic dataset directory")
    g.add_argument("--config", required=True)
    g.add_argument("--out")
    g.add_argument("--seed", type=int)
    g.add_argument("--force", action="store_true", help="overwrite an existing dataset directory")

    t = sub.add_parser("train", help="train one configuration")
    t.add_argument("--config", required=True)
    t.add_argument("--out")
    t.add_argument("--seed", type=int, help="override all three seeds")

    e = sub.add_parser("eval", help="score a checkpoint or saved predictions")
    src = e.add_mutually_exclusive_group(required=True)
    src.add_argument("--checkpoint")
    src.add_argument("--predictions", help="directory with pred_seg_<id>.pgm / pred_bnd_<id>.pgm")
    e.add_argument("--dataset", required=True)
    e.add_argument("--subset", default="test", choices=("train", "val", "test"))
    e.add_argument("--postprocess", action="store_true")
    e.add_argument("--se-radius", type=int, default=1)
    e.add_argument("--experiment", help="row label (default: derived from the checkpoint's tasks)")
    e.add_argument("--save-predictions", metavar="DIR")
    e.add_argument("--out", required=True, help="report CSV path")

    s = sub.add_parser("sweep", help="hand-tuned auxiliary weight sweep")
    s.add_argument("--config", required=True)
    s.add_argument("--grid", help="override [sweep] grid, e.g. '0:0,0.5:0.1'")
    s.add_argument("--out")
    s.add_argument("--seed", type=int)

    a = sub.add_parser("ablation", help="task-subset ablation table")
    a.add_argument("--config", required=True)
    a.add_argument("--out")
    a.add_argument("--seed", type=int)
    return p


def _run_config(args):
    cfg = run_config_from(read_config(args.config))
    if args.out:
        cfg = replace(cfg, out=args.out)
    if args.seed is not None:
        cfg = cfg.with_seed(args.seed)
    if not cfg.out:
        raise ConfigError("no output directory: pass --out or set [run] out")
    return cfg


def cmd_gen_data(args):
    gen = gen_config_from(read_config(args.config))
    out = args.out or gen.out
    if not out:
        raise ConfigError("no output directory: pass --out or set [data] out")
    scene, split = gen.scene, gen.split
    if args.seed is not None:
        scene = replace(scene, seed=args.seed)
        split = replace(split, seed=args.seed)
    if os.path.isdir(out) and os.listdir(out):
        if not args.force:
            raise UsageError(f"{out} exists and is not empty; use --force to overwrite")
        for pattern in DATASET_PATTERNS:
            for path in glob.glob(os.path.join(out, pattern)):
                os.remove(path)
    try:
        subsets = write_dataset(out, scene, gen.n, split)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    print(f"wrote {gen.n} scenes to {out} (train/val/test = {'/'.join(str(len(s)) for s in subsets)})")


def cmd_train(args):
    cfg = _run_config(args)
    art = pipeline.train(cfg)
    r = art.test_report
    print(f"{pipeline.experiment_label(cfg.tasks)}: {art.steps} steps, best epoch {art.best_epoch}, test iou {r.iou:.4f} f1 {r.f1:.4f}")


def cmd_eval(args):
    if args.predictions:
        report = pipeline.evaluate_predictions(args.predictions, args.dataset, args.subset, args.postprocess, args.se_radius)
        label = args.experiment or ("predictions+P" if args.postprocess else "predictions")
        seeds = {}
    else:
        ckpt, report = pipeline.evaluate_checkpoint(args.checkpoint, args.dataset, args.subset, args.postprocess, args.se_radius)
        letters = {"seg": "S", "bnd": "B", "rec": "R"}
        label = args.experiment or pipeline.experiment_label([letters[t] for t in ckpt.tasks], args.postprocess)
        seeds = dict(zip(pipeline.SEED_FIELDS, ckpt.seeds))
        if args.save_predictions:
            pipeline.save_predictions(args.checkpoint, args.dataset, args.subset, args.save_predictions)
    out_dir = os.path.dirname(os.path.abspath(args.out))
    os.makedirs(out_dir, exist_ok=True)
    pipeline.write_report(args.out, [(label, args.subset, seeds, report)])
    print(f"{label} {args.subset}: iou {report.iou:.4f} f1 {report.f1:.4f}")


def cmd_sweep(args):
    cfg = _run_config(args)
    grid = parse_grid(args.grid) if args.grid else sweep_grid_from(read_config(args.config))
    path, rows = pipeline.sweep(cfg, grid, cfg.out)
    print(f"wrote {len(rows)} sweep points to {path}")


def cmd_ablation(args):
    cfg = _run_config(args)
    path, rows = pipeline.ablation(cfg, cfg.out)
    for label, _, _, report in rows:
        print(f"{label:8s} iou {report.iou:.4f} f1 {report.f1:.4f}")
    print(f"wrote {path}")


COMMANDS = {
    "gen-data": cmd_gen_data,
    "train": cmd_train,
    "eval": cmd_eval,
    "sweep": cmd_sweep,
    "ablation": cmd_ablation,
}


def main(argv=None):
    try:
        args = _build_parser().parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        COMMANDS[args.command](args)
    except (UsageError, ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DivergenceError as exc:
        print(f"training diverged at step {exc.step}: {exc}", file=sys.stderr)
        if exc.breakdown is not None:
            print(f"loss breakdown: {exc.breakdown}", file=sys.stderr)
        return EXIT_RUNTIME
    except (MTLSegError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
