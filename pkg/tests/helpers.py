"""Shared test utilities: gradient comparison and brute-force mask oracles."""

import numpy as np

from mtlseg.tensor import Tensor, backward, finite_diff_grad, mul, tensor_sum

EPS = 1e-3
REL_TOL = 1e-3
ABS_TOL = 1e-5
NEAR_ZERO = 1e-2


def grad_mismatch(analytic, numeric):
    """Elementwise violations of the gradient tolerance; empty when all agree."""
    a = np.asarray(analytic, dtype=np.float64).ravel()
    n = np.asarray(numeric, dtype=np.float64).ravel()
    bad = []
    for i, (x, y) in enumerate(zip(a, n)):
        if abs(y) < NEAR_ZERO:
            ok = abs(x - y) <= ABS_TOL
        else:
            ok = abs(x - y) <= REL_TOL * max(abs(x), abs(y))
        if not ok:
            bad.append((i, x, y))
    return bad


def check_op_gradients(op, inputs, rng, grad_inputs=None):
    """Compare backward() with central differences for ``sum(w * op(*inputs))``.

    ``inputs`` are float arrays; analytic gradients use single precision
    tensors, the numeric oracle evaluates in double precision. Returns a
    dict ``input index -> list of mismatches``.
    """
    grad_inputs = range(len(inputs)) if grad_inputs is None else grad_inputs
    tensors = [Tensor(x.astype(np.float32), requires_grad=True) for x in inputs]
    out = op(*tensors)
    w = rng.uniform(-1, 1, size=out.shape)
    backward(tensor_sum(mul(out, Tensor(w.astype(np.float32)))))
    failures = {}
    for i in grad_inputs:
        def f(t, i=i):
            args = [Tensor(x.astype(np.float64)) for x in inputs]
            args[i] = t
            y = op(*args)
            return float(np.sum(w * y.data))

        numeric = finite_diff_grad(f, inputs[i], EPS).data
        bad = grad_mismatch(tensors[i].grad, numeric)
        if bad:
            failures[i] = bad
    return failures


def away_from(x, points, margin, rng, low=-1.0, high=1.0):
    """Resample entries of ``x`` lying within ``margin`` of any kink in ``points``."""
    x = x.copy()
    for _ in range(100):
        close = np.zeros(x.shape, dtype=bool)
        for p in points:
            close |= np.abs(x - p) < margin
        if not close.any():
            return x
        x[close] = rng.uniform(low, high, size=int(close.sum()))
    raise RuntimeError("could not resample away from kinks")


# -- brute-force pixel oracles ------------------------------------------------


def brute_confusion(pred, gt):
    tp = fp = fn = tn = 0
    for p, g in zip(np.ravel(pred), np.ravel(gt)):
        if p and g:
            tp += 1
        elif p:
            fp += 1
        elif g:
            fn += 1
        else:
            tn += 1
    return tp, fp, fn, tn


def brute_metrics(pred, gt):
    tp, fp, fn, _ = brute_confusion(pred, gt)
    if tp + fp + fn == 0:
        return 1.0, 1.0
    return tp / (tp + fp + fn), 2 * tp / (2 * tp + fp + fn)


def brute_inner_boundary(mask):
    h, w = mask.shape
    out = np.zeros_like(mask)
    for y in range(h):
        for x in range(w):
            if not mask[y, x]:
                continue
            for dy, dx in ((-1, 0), (1, 0), (0, -1), (0, 1)):
                yy, xx = y + dy, x + dx
                if not (0 <= yy < h and 0 <= xx < w) or not mask[yy, xx]:
                    out[y, x] = 1
                    break
    return out


def brute_disk_dilate(mask, r):
    h, w = mask.shape
    out = np.zeros_like(mask)
    for y in range(h):
        for x in range(w):
            for yy in range(max(0, y - r), min(h, y + r + 1)):
                for xx in range(max(0, x - r), min(w, x + r + 1)):
                    if (yy - y) ** 2 + (xx - x) ** 2 <= r * r and mask[yy, xx]:
                        out[y, x] = 1
    return out


def brute_dilate(mask, r):
    h, w = mask.shape
    out = np.zeros_like(mask)
    for y in range(h):
        for x in range(w):
            out[y, x] = any(
                mask[yy, xx]
                for yy in range(y - r, y + r + 1)
                for xx in range(x - r, x + r + 1)
                if 0 <= yy < h and 0 <= xx < w
            )
    return out


def brute_erode(mask, r):
    h, w = mask.shape
    out = np.zeros_like(mask)
    for y in range(h):
        for x in range(w):
            out[y, x] = all(
                0 <= yy < h and 0 <= xx < w and mask[yy, xx]
                for yy in range(y - r, y + r + 1)
                for xx in range(x - r, x + r + 1)
            )
    return out


# -- acceptance report ----------------------------------------------------------

ACCEPTANCE_LINES = []


def report_criterion(number, name, ok, detail, gating=True):
    """Record and print one acceptance line; returns ``ok`` for asserting."""
    status = ("PASS" if ok else "FAIL") if gating else "INFO"
    line = f"[criterion {number}] {status} {name}: {detail}"
    ACCEPTANCE_LINES.append((number, line))
    print(line)
    return ok
