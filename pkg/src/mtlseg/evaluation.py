"""Pixel-wise scoring, binary morphology and segmentation/boundary fusion."""

from dataclasses import dataclass

import numpy as np

from .errors import BinaryMaskError, ShapeError


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int = 0
    fp: int = 0
    fn: int = 0
    tn: int = 0

    def __add__(self, other):
        return ConfusionCounts(self.tp + other.tp, self.fp + other.fp, self.fn + other.fn, self.tn + other.tn)

    @property
    def total(self):
        return self.tp + self.fp + self.fn + self.tn


@dataclass(frozen=True)
class MetricsReport:
    counts: ConfusionCounts
    iou: float
    f1: float

    CSV_FIELDS = ("tp", "fp", "fn", "tn", "iou", "f1")

    def csv_values(self):
        c = self.counts
        return [c.tp, c.fp, c.fn, c.tn, f"{self.iou:.6f}", f"{self.f1:.6f}"]


def _binary(mask, what):
    m = np.asarray(mask)
    if not np.all((m == 0) | (m == 1)):
        raise BinaryMaskError(f"{what}: mask must contain only 0 and 1")
    return m.astype(bool)


def threshold(prob_map, t=0.5):
    """1 where ``prob_map >= t``."""
    if not 0 < t < 1:
        raise ValueError(f"threshold must lie in (0, 1), got {t}")
    return (np.asarray(prob_map) >= t).astype(np.float32)


def confusion(pred, gt):
    """Per-pixel confusion counts with building as the positive class."""
    p, g = np.asarray(pred), np.asarray(gt)
    if p.shape != g.shape:
        raise ShapeError(f"confusion: prediction shape {p.shape} != ground-truth shape {g.shape}", dim="shape")
    p, g = _binary(p, "confusion(pred)"), _binary(g, "confusion(gt)")
    tp = int(np.count_nonzero(p & g))
    fp = int(np.count_nonzero(p & ~g))
    fn = int(np.count_nonzero(~p & g))
    return ConfusionCounts(tp, fp, fn, p.size - tp - fp - fn)


def metrics(counts):
    """IoU and F1 of the positive class; both are 1 when nothing is positive anywhere."""
    denom = counts.tp + counts.fp + counts.fn
    if denom == 0:
        return MetricsReport(counts, 1.0, 1.0)
    return MetricsReport(counts, counts.tp / denom, 2 * counts.tp / (denom + counts.tp))


# -- morphology with a (2r+1) x (2r+1) square, pixels outside the image are 0 --


def _window_reduce(m, r, reduce_any):
    h, w = m.shape[-2:]
    padded = np.pad(m, [(0, 0)] * (m.ndim - 2) + [(r, r), (r, r)])
    # separable: rows then columns
    acc = padded[..., :, 0:w].copy()
    for dx in range(1, 2 * r + 1):
        sl = padded[..., :, dx : dx + w]
        acc = acc | sl if reduce_any else acc & sl
    out = acc[..., 0:h, :].copy()
    for dy in range(1, 2 * r + 1):
        sl = acc[..., dy : dy + h, :]
        out = out | sl if reduce_any else out & sl
    return out


def dilate(mask, se_radius=1):
    m = _binary(mask, "dilate")
    return _window_reduce(m, int(se_radius), True).astype(np.float32)


def erode(mask, se_radius=1):
    m = _binary(mask, "erode")
    return _window_reduce(m, int(se_radius), False).astype(np.float32)


def opening(mask, se_radius=1):
    return dilate(erode(mask, se_radius), se_radius)


def closing(mask, se_radius=1):
    return erode(dilate(mask, se_radius), se_radius)


def fuse_postprocess(seg_mask, bnd_mask, se_radius=1):
    """Carve predicted boundary pixels out of the footprint mask, then open it."""
    s, b = np.asarray(seg_mask), np.asarray(bnd_mask)
    if s.shape != b.shape:
        raise ShapeError(f"fuse_postprocess: shapes {s.shape} and {b.shape} differ", dim="shape")
    fused = _binary(s, "fuse(seg)") & ~_binary(b, "fuse(bnd)")
    return opening(fused.astype(np.float32), se_radius)
