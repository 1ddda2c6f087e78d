"""Training, evaluation, weight sweeps and the task ablation.

These functions back the command line subcommands and are usable directly.
A run is deterministic given its config: model initialisation, sample order
and augmentation each draw from their own seeded generator.
"""

import csv
import logging
import math
import os
from dataclasses import dataclass, replace

import numpy as np

from . import data as data_mod
from .config import RunConfig
from .errors import ConfigError, DivergenceError, ShapeError
from .evaluation import confusion, ConfusionCounts, fuse_postprocess, metrics, threshold
from .losses import (
    LossBreakdown,
    UncertaintyParams,
    bce_loss,
    fixed_breakdown,
    joint_loss_fixed,
    joint_loss_uncertainty,
    mae_loss,
)
from .nn import ModelConfig, build_model, load_checkpoint, save_checkpoint
from .tensor import Tensor, _stable_sigmoid, backward, sgd_step

log = logging.getLogger(__name__)

SEED_FIELDS = ("model_seed", "data_seed", "shuffle_seed")
REPORT_FIELDS = ("experiment", "subset", *SEED_FIELDS, "tp", "fp", "fn", "tn", "iou", "f1")
ABLATION_ROWS = (("S", "S", False), ("S+R", "SR", False), ("S+B", "SB", False), ("S+B+R", "SBR", False), ("S+B+R+P", "SBR", True))
EVAL_BATCH = 8


@dataclass
class RunArtifacts:
    out_dir: str
    checkpoint: str
    loss_csv: str
    val_csv: str
    test_report: object
    steps: int
    best_epoch: int


def _write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)


def _stack(samples, attr):
    return np.concatenate([getattr(s, attr) for s in samples], axis=0)


def _task_losses(model, batch, heads):
    x = Tensor(_stack(batch, "image"))
    seg, bnd, rec = model.forward(x, heads)
    l_seg = bce_loss(seg, _stack(batch, "seg_mask"))
    l_bnd = bce_loss(bnd, _stack(batch, "bnd_mask")) if bnd is not None else None
    l_rec = mae_loss(rec, x.data) if rec is not None else None
    return l_seg, l_bnd, l_rec


def predict(model, samples, heads=("seg", "bnd")):
    """Probability maps for ``samples``: ``{head: (N,1,H,W) array}``."""
    out = {h: [] for h in heads}
    for start in range(0, len(samples), EVAL_BATCH):
        chunk = samples[start : start + EVAL_BATCH]
        res = dict(zip(("seg", "bnd", "rec"), model.forward(_stack(chunk, "image"), heads)))
        for h in heads:
            vals = res[h].data
            out[h].append(vals if h == "rec" else _stable_sigmoid(vals))
    return {h: np.concatenate(v, axis=0) for h, v in out.items()}


def score_masks(seg_pred, gt, bnd_pred=None, postprocess=False, se_radius=1):
    """Confusion counts of binary predictions, optionally after boundary fusion."""
    if postprocess:
        if bnd_pred is None:
            raise ConfigError("post-processing needs a boundary prediction")
        seg_pred = fuse_postprocess(seg_pred, bnd_pred, se_radius)
    return confusion(seg_pred, gt)


def evaluate(model, samples, postprocess=False, se_radius=1, t=0.5):
    """Aggregate pixel metrics of the segmentation head over ``samples``."""
    if not samples:
        return metrics(ConfusionCounts())
    heads = ("seg", "bnd") if postprocess else ("seg",)
    probs = predict(model, samples, heads)
    counts = ConfusionCounts()
    for i, s in enumerate(samples):
        seg = threshold(probs["seg"][i : i + 1], t)
        bnd = threshold(probs["bnd"][i : i + 1], t) if postprocess else None
        counts = counts + score_masks(seg, s.seg_mask, bnd, postprocess, se_radius)
    return metrics(counts)


def _check_compatible(model_config, samples):
    if not samples:
        return
    c, h, w = next(iter(samples.values())).image.shape[1:]
    if c != model_config.in_channels:
        raise ShapeError(f"dataset images have {c} channels, model expects {model_config.in_channels}", dim="C")
    factor = 2**model_config.depth
    if h % factor or w % factor:
        raise ShapeError(f"dataset images {h}x{w} are not divisible by 2**depth={factor}", dim="H")


def train(cfg: RunConfig, samples=None, split=None):
    """Train one configuration and write its artifacts into ``cfg.out``.

    Writes ``checkpoint.bin`` (best validation IoU; training IoU when the
    validation subset is empty), ``losses.csv`` (one row per step),
    ``val_metrics.csv`` (one row per epoch) and ``test_metrics.csv``.
    """
    if samples is None:
        samples, split = data_mod.load_dataset(cfg.dataset)
    if not cfg.out:
        raise ConfigError("no output directory given")
    os.makedirs(cfg.out, exist_ok=True)
    train_ids = list(split["train"])
    if not train_ids:
        raise ConfigError("training subset is empty")
    in_channels = next(iter(samples.values())).image.shape[1]
    if cfg.crop % (2**cfg.depth):
        raise ConfigError(f"crop {cfg.crop} is not divisible by 2**depth={2**cfg.depth}")
    model_cfg = ModelConfig(in_channels=in_channels, depth=cfg.depth, widths=cfg.widths)
    _check_compatible(model_cfg, samples)
    model = build_model(model_cfg, cfg.model_seed)
    heads = cfg.heads
    uncertainty = UncertaintyParams(heads) if cfg.weighting == "uncertainty" else None
    params = model.parameters() + (uncertainty.parameters() if uncertainty else [])
    weights = cfg.weights if cfg.weighting == "fixed" else None

    policy = data_mod.AugmentPolicy(boundary_radius=cfg.boundary_radius)
    shuffle_rng = np.random.default_rng(cfg.shuffle_seed)
    data_rng = np.random.default_rng(cfg.data_seed)
    val_ids = list(split["val"]) or train_ids
    val_samples = [samples[i] for i in val_ids]

    ckpt_path = os.path.join(cfg.out, "checkpoint.bin")
    loss_path = os.path.join(cfg.out, "losses.csv")
    seed_values = [str(cfg.seeds[k]) for k in SEED_FIELDS]
    loss_rows, val_rows = [], []
    best_iou, best_epoch, step = -1.0, -1, 0
    for epoch in range(cfg.epochs):
        order = shuffle_rng.permutation(train_ids)
        for start in range(0, len(order), cfg.batch_size):
            batch = []
            for i in order[start : start + cfg.batch_size]:
                s = samples[int(i)]
                if cfg.augment:
                    s = data_mod.augment(s, data_rng, policy)
                if cfg.crop < s.image.shape[-1] or cfg.crop < s.image.shape[-2]:
                    s = data_mod.random_crop(s, cfg.crop, data_rng)
                batch.append(s)
            l_seg, l_bnd, l_rec = _task_losses(model, batch, heads)
            try:
                if uncertainty is not None:
                    joint, breakdown = joint_loss_uncertainty(l_seg, l_bnd, l_rec, uncertainty)
                else:
                    joint = joint_loss_fixed(l_seg, l_bnd, l_rec, weights)
                    breakdown = fixed_breakdown(l_seg, l_bnd, l_rec, weights, joint)
            except DivergenceError as exc:
                exc.step = step
                raise
            if not math.isfinite(breakdown.l_joint):
                _write_csv(loss_path, LossBreakdown.CSV_HEADER, loss_rows)
                raise DivergenceError(f"joint loss became {breakdown.l_joint} at step {step}: {breakdown}", breakdown, step)
            loss_rows.append(breakdown.csv_row(step))
            backward(joint)
            sgd_step(params, cfg.lr, cfg.momentum, cfg.weight_decay)
            step += 1
        report = evaluate(model, val_samples)
        val_rows.append([epoch, *report.csv_values()])
        if report.iou > best_iou:
            best_iou, best_epoch = report.iou, epoch
            save_checkpoint(ckpt_path, model, heads, uncertainty, [cfg.seeds[k] for k in SEED_FIELDS])
        log.info("epoch %d  step %d  loss %.4f  val iou %.4f", epoch, step, breakdown.l_joint, report.iou)

    _write_csv(loss_path, LossBreakdown.CSV_HEADER, loss_rows)
    val_path = os.path.join(cfg.out, "val_metrics.csv")
    _write_csv(val_path, ("epoch", *[f for f in REPORT_FIELDS if f not in ("experiment", "subset", *SEED_FIELDS)]), val_rows)
    best = load_checkpoint(ckpt_path).model
    test_report = evaluate(best, [samples[i] for i in split["test"]])
    _write_csv(
        os.path.join(cfg.out, "test_metrics.csv"),
        REPORT_FIELDS,
        [[experiment_label(cfg.tasks), "test", *seed_values, *test_report.csv_values()]],
    )
    return RunArtifacts(cfg.out, ckpt_path, loss_path, val_path, test_report, step, best_epoch)


def experiment_label(tasks, postprocess=False):
    label = "+".join(t for t in "SBR" if t in tasks)
    return label + "+P" if postprocess else label


def evaluate_checkpoint(checkpoint, dataset, subset="test", postprocess=False, se_radius=1):
    """Evaluate a saved model on one dataset subset."""
    ckpt = load_checkpoint(checkpoint)
    if postprocess and "bnd" not in ckpt.tasks:
        raise ConfigError("post-processing needs a model trained with the boundary task (B)")
    samples, split = data_mod.load_dataset(dataset) if isinstance(dataset, str) else dataset
    if subset not in split:
        raise ConfigError(f"unknown subset {subset!r}")
    _check_compatible(ckpt.model.config, samples)
    report = evaluate(ckpt.model, [samples[i] for i in split[subset]], postprocess, se_radius)
    return ckpt, report


def evaluate_predictions(pred_dir, dataset, subset="test", postprocess=False, se_radius=1):
    """Score saved prediction masks ``pred_seg_<id>.pgm`` (and ``pred_bnd_<id>.pgm``)."""
    samples, split = data_mod.load_dataset(dataset) if isinstance(dataset, str) else dataset
    counts = ConfusionCounts()
    for i in split[subset]:
        seg = (data_mod.read_netpbm(os.path.join(pred_dir, f"pred_seg_{i}.pgm")) > 0.5).astype(np.float32)
        bnd = None
        bnd_path = os.path.join(pred_dir, f"pred_bnd_{i}.pgm")
        if postprocess:
            if not os.path.exists(bnd_path):
                raise ConfigError(f"post-processing needs {bnd_path}")
            bnd = (data_mod.read_netpbm(bnd_path) > 0.5).astype(np.float32)
        counts = counts + score_masks(seg, samples[i].seg_mask, bnd, postprocess, se_radius)
    return metrics(counts)


def save_predictions(checkpoint, dataset, subset, out_dir):
    """Write thresholded seg/bnd predictions for ``subset`` as PGM files."""
    ckpt = load_checkpoint(checkpoint)
    samples, split = data_mod.load_dataset(dataset)
    os.makedirs(out_dir, exist_ok=True)
    ids = split[subset]
    probs = predict(ckpt.model, [samples[i] for i in ids])
    for k, i in enumerate(ids):
        data_mod.write_netpbm(os.path.join(out_dir, f"pred_seg_{i}.pgm"), threshold(probs["seg"][k : k + 1]))
        data_mod.write_netpbm(os.path.join(out_dir, f"pred_bnd_{i}.pgm"), threshold(probs["bnd"][k : k + 1]))


def write_report(path, rows):
    """Write evaluation rows ``(experiment, subset, seeds dict, MetricsReport)``."""
    out = []
    for experiment, subset, seeds, report in rows:
        out.append([experiment, subset, *[seeds.get(k, "") for k in SEED_FIELDS], *report.csv_values()])
    _write_csv(path, REPORT_FIELDS, out)


def sweep(base: RunConfig, grid, out_dir):
    """One train + test evaluation per ``(w_bnd, w_rec)`` point with ``w_seg = 1``."""
    grid = list(grid)
    if not grid:
        raise ConfigError("empty weight grid")
    samples, split = data_mod.load_dataset(base.dataset)
    rows = []
    for k, (w_bnd, w_rec) in enumerate(grid):
        tasks = "S" + ("B" if w_bnd > 0 else "") + ("R" if w_rec > 0 else "")
        cfg = replace(
            base,
            tasks=tuple(tasks),
            weighting="fixed",
            w_seg=1.0,
            w_bnd=float(w_bnd),
            w_rec=float(w_rec),
            out=os.path.join(out_dir, f"point_{k}"),
        )
        art = train(cfg, samples, split)
        rows.append([repr(float(w_bnd)), repr(float(w_rec)), f"{art.test_report.iou:.6f}", f"{art.test_report.f1:.6f}"])
    os.makedirs(out_dir, exist_ok=True)
    path = os.path.join(out_dir, "sweep.csv")
    _write_csv(path, ("w_bnd", "w_rec", "iou", "f1"), rows)
    return path, rows


def ablation(base: RunConfig, out_dir, subset="test"):
    """Train the four task subsets and report five rows incl. post-processing."""
    if base.weighting == "fixed" and (base.w_bnd == 0 or base.w_rec == 0):
        # with a zero weight the B and R rows would silently repeat the S row
        raise ConfigError("ablation in fixed weighting mode needs w_bnd > 0 and w_rec > 0")
    samples, split = data_mod.load_dataset(base.dataset)
    trained, rows = {}, []
    for label, tasks, post in ABLATION_ROWS:
        if tasks not in trained:
            cfg = replace(base.with_tasks(tuple(tasks)), out=os.path.join(out_dir, label.replace("+", "")))
            trained[tasks] = train(cfg, samples, split)
        _, report = evaluate_checkpoint(trained[tasks].checkpoint, (samples, split), subset, post)
        rows.append((label, subset, base.seeds, report))
    os.makedirs(out_dir, exist_ok=True)
    path = os.path.join(out_dir, "ablation.csv")
    write_report(path, rows)
    return path, rows
