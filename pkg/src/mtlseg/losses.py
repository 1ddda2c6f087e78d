"""Task losses and the two ways of combining them.

``joint_loss_fixed`` is a plain weighted sum with hand-picked weights.
``joint_loss_uncertainty`` learns one log-variance ``s = log sigma^2`` per task:
classification tasks contribute ``exp(-s) * L + s / 2`` and the regression
(reconstruction) task contributes ``0.5 * exp(-s) * L + s / 2``.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import BinaryMaskError, DivergenceError, ShapeError
from .tensor import Parameter, Tensor, _result, _wrap, exp, scale

TASKS = ("seg", "bnd", "rec")
# Tasks whose uncertainty term carries the extra 1/2 factor.
REGRESSION_TASKS = frozenset({"rec"})


def bce_loss(logits, target):
    """Mean binary cross-entropy on raw logits.

    Uses ``max(x, 0) - x*y + log(1 + exp(-|x|))`` so no logit can overflow.
    """
    logits = _wrap(logits)
    y = np.asarray(target.data if isinstance(target, Tensor) else target)
    if y.shape != logits.shape:
        raise ShapeError(f"bce_loss: target shape {y.shape} != logits shape {logits.shape}", dim="shape")
    if not np.all((y == 0) | (y == 1)):
        raise BinaryMaskError("bce_loss: target must contain only 0 and 1")
    x = logits.data
    y = y.astype(x.dtype)
    per_pixel = np.maximum(x, 0) - x * y + np.log1p(np.exp(-np.abs(x)))
    n = x.size
    value = np.asarray(per_pixel.sum(dtype=np.float64) / n, dtype=x.dtype).reshape(1, 1, 1, 1)

    def _backward(g):
        e = np.exp(-np.abs(x))
        p = np.where(x >= 0, 1 / (1 + e), e / (1 + e))
        return ((p - y) * (g.reshape(-1)[0] / n),)

    return _result(value, (logits,), _backward, "bce")


def mae_loss(recon, image):
    """Mean absolute error; the subgradient at zero difference is 0."""
    recon = _wrap(recon)
    ref = np.asarray(image.data if isinstance(image, Tensor) else image)
    if ref.shape != recon.shape:
        raise ShapeError(f"mae_loss: shapes {recon.shape} and {ref.shape} differ", dim="shape")
    diff = recon.data - ref.astype(recon.dtype)
    n = diff.size
    value = np.asarray(np.abs(diff).sum(dtype=np.float64) / n, dtype=recon.dtype).reshape(1, 1, 1, 1)
    return _result(value, (recon,), lambda g: (np.sign(diff) * (g.reshape(-1)[0] / n),), "mae")


@dataclass(frozen=True)
class TaskWeights:
    w_seg: float = 1.0
    w_bnd: float = 0.0
    w_rec: float = 0.0

    def __post_init__(self):
        ws = self.as_tuple()
        if any(not math.isfinite(w) or w < 0 for w in ws):
            raise ValueError(f"task weights must be finite and non-negative, got {ws}")
        if not any(w > 0 for w in ws):
            raise ValueError("at least one task weight must be positive")

    def as_tuple(self):
        return (self.w_seg, self.w_bnd, self.w_rec)


class UncertaintyParams:
    """Learnable log-variances, one per active task, all starting at exactly 0."""

    def __init__(self, tasks=TASKS):
        unknown = set(tasks) - set(TASKS)
        if unknown:
            raise ValueError(f"unknown tasks {sorted(unknown)}")
        self.params = {t: Parameter(np.zeros((1, 1, 1, 1)), decay_exempt=True, name=f"s_{t}") for t in TASKS if t in tasks}

    @property
    def tasks(self):
        return tuple(self.params)

    def parameters(self):
        return list(self.params.values())

    def values(self):
        return {t: float(p.data.reshape(-1)[0]) for t, p in self.params.items()}

    def __getitem__(self, task):
        return self.params[task]


@dataclass
class LossBreakdown:
    l_seg: float
    l_bnd: float
    l_rec: float
    l_joint: float
    effective_weights: tuple
    regularizer_terms: tuple
    s: tuple = field(default=(float("nan"),) * 3)

    CSV_HEADER = ("step", "l_seg", "l_bnd", "l_rec", "l_joint", "w_seg_eff", "w_bnd_eff", "w_rec_eff", "s_seg", "s_bnd", "s_rec")

    def csv_row(self, step):
        values = (self.l_seg, self.l_bnd, self.l_rec, self.l_joint, *self.effective_weights, *self.s)
        return [str(step)] + [repr(float(v)) for v in values]


def _scalar(x):
    return float(x.data.reshape(-1)[0]) if isinstance(x, Tensor) else float(x)


def _check_finite(losses):
    for name, loss in zip(TASKS, losses):
        if loss is not None and not math.isfinite(_scalar(loss)):
            raise DivergenceError(f"non-finite {name} loss: {_scalar(loss)}")


def _as_loss_tensor(loss):
    return loss if isinstance(loss, Tensor) else Tensor(np.full((1, 1, 1, 1), loss))


def _weighted_sum(terms):
    total = None
    for term in terms:
        total = term if total is None else total + term
    return total


def joint_loss_fixed(l_seg, l_bnd, l_rec, weights):
    """``w_seg*l_seg + w_bnd*l_bnd + w_rec*l_rec``.

    Terms with a zero weight are left out of the graph, so they contribute
    exactly nothing to the value and to any gradient. A loss may be ``None``
    when its weight is zero.
    """
    if not isinstance(weights, TaskWeights):
        weights = TaskWeights(*weights)
    terms = []
    for loss, w in zip((l_seg, l_bnd, l_rec), weights.as_tuple()):
        if w > 0:
            if loss is None:
                raise ValueError("a loss with a positive weight is missing")
            terms.append(scale(_as_loss_tensor(loss), w))
    return _weighted_sum(terms)


def joint_loss_uncertainty(l_seg, l_bnd, l_rec, u):
    """Homoscedastic-uncertainty weighted joint loss.

    Only tasks present in ``u`` take part; losses of other tasks may be
    ``None``. Returns the joint loss tensor and a :class:`LossBreakdown`
    whose effective weights and regularizers describe inactive tasks as 0.
    """
    losses = (l_seg, l_bnd, l_rec)
    _check_finite(losses)
    for t, p in u.params.items():
        if not np.all(np.isfinite(p.data)):
            raise DivergenceError(f"non-finite log-variance s_{t}")
    terms, eff, reg, svals = [], [], [], []
    for task, loss in zip(TASKS, losses):
        if task not in u.params:
            eff.append(0.0)
            reg.append(0.0)
            svals.append(float("nan"))
            continue
        if loss is None:
            raise ValueError(f"uncertainty weighting needs the {task} loss")
        s = u[task]
        half = 0.5 if task in REGRESSION_TASKS else 1.0
        precision = exp(-s)
        terms.append(scale(precision * _as_loss_tensor(loss), half))
        terms.append(scale(s, 0.5))
        s_val = float(s.data.reshape(-1)[0])
        eff.append(half * math.exp(-s_val))
        reg.append(0.5 * s_val)
        svals.append(s_val)
    total = _weighted_sum(terms)
    breakdown = LossBreakdown(
        *(_scalar(l) if l is not None else float("nan") for l in losses),
        l_joint=_scalar(total),
        effective_weights=tuple(eff),
        regularizer_terms=tuple(reg),
        s=tuple(svals),
    )
    return total, breakdown


def fixed_breakdown(l_seg, l_bnd, l_rec, weights, joint):
    ws = weights.as_tuple()
    return LossBreakdown(
        *(_scalar(l) if l is not None else float("nan") for l in (l_seg, l_bnd, l_rec)),
        l_joint=_scalar(joint),
        effective_weights=ws,
        regularizer_terms=(0.0, 0.0, 0.0),
    )


def optimal_s_for_constant_loss(loss, is_regression):
    """Stationary point of the uncertainty term for a frozen loss value.

    ``exp(-s)*L + s/2`` is minimised at ``ln(2L)``; the regression form
    ``exp(-s)*L/2 + s/2`` at ``ln(L)``.
    """
    if not loss > 0:
        raise ValueError(f"loss must be positive, got {loss}")
    return math.log(loss) if is_regression else math.log(2 * loss)
