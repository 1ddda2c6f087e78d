"""Minimal reverse-mode automatic differentiation over NCHW arrays.

Every differentiable operation returns a new :class:`Tensor` that remembers
its parents and a closure mapping the output gradient to the parents'
gradients. :func:`backward` orders the recorded graph topologically (the
tape), walks it once in reverse and then drops the graph.

Values are single precision by default. Tensors built from ``float64``
arrays stay in double precision, which is what the finite-difference
gradient checks use.
"""

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import GradientError, ShapeError

__all__ = [
    "Tensor",
    "Parameter",
    "conv2d",
    "relu",
    "sigmoid",
    "exp",
    "max_pool2",
    "upsample2",
    "concat_channels",
    "slice_channels",
    "tensor_sum",
    "tensor_mean",
    "topological_order",
    "backward",
    "zero_grad",
    "sgd_step",
    "finite_diff_grad",
]

SCALAR_SHAPE = (1, 1, 1, 1)


def _as_array(data, dtype=None):
    if isinstance(data, Tensor):
        data = data.data
    if dtype is not None:
        return np.asarray(data, dtype=dtype)
    arr = np.asarray(data)
    if arr.dtype in (np.float32, np.float64):
        return arr
    return arr.astype(np.float32)


class Tensor:
    """Real array with an optional gradient and a link into the autodiff graph."""

    def __init__(self, data, requires_grad=False, dtype=None, _parents=(), _backward=None, op=""):
        self.data = _as_array(data, dtype)
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._parents = tuple(_parents)
        self._backward = _backward
        self.op = op

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def item(self):
        if self.data.size != 1:
            raise ShapeError(f"expected a single-element tensor, got shape {self.shape}", dim="size")
        return float(self.data.reshape(-1)[0])

    def numpy(self):
        return self.data

    def detach(self):
        return Tensor(self.data.copy())

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{flag})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, -other if isinstance(other, Tensor) else -float(other))

    def __neg__(self):
        return scale(self, -1.0)

    def __mul__(self, other):
        if isinstance(other, Tensor):
            return mul(self, other)
        return scale(self, float(other))

    __rmul__ = __mul__

    def backward(self):
        backward(self)


class Parameter(Tensor):
    """Learnable tensor with its SGD momentum buffer.

    The gradient starts as zeros, so a parameter that no loss reaches still
    carries a well-defined (all-zero) gradient.
    """

    def __init__(self, data, decay_exempt=False, name="", dtype=np.float32):
        super().__init__(data, requires_grad=True, dtype=dtype)
        self.data = np.ascontiguousarray(self.data)
        self.grad = np.zeros_like(self.data)
        self.momentum_buffer = np.zeros_like(self.data)
        self.decay_exempt = bool(decay_exempt)
        self.name = name

    def __repr__(self):
        return f"Parameter({self.name!r}, shape={self.shape})"


def _result(data, parents, backward_fn, op):
    parents = tuple(parents)
    if any(p.requires_grad for p in parents):
        return Tensor(data, requires_grad=True, _parents=parents, _backward=backward_fn, op=op)
    return Tensor(data, op=op)


def _check_same_shape(a, b, what):
    if a.shape != b.shape:
        for name, x, y in zip("NCHW", a.shape, b.shape):
            if x != y:
                raise ShapeError(f"{what}: dimension {name} differs ({x} vs {y})", dim=name)
        raise ShapeError(f"{what}: shapes {a.shape} and {b.shape} differ", dim="rank")


def _wrap(x):
    return x if isinstance(x, Tensor) else Tensor(x)


# -- elementwise algebra used by the loss functions --------------------------


def add(a, b):
    a = _wrap(a)
    if not isinstance(b, Tensor):
        c = float(b)
        return _result(a.data + a.data.dtype.type(c), (a,), lambda g: (g,), "add_const")
    _check_same_shape(a, b, "add")
    return _result(a.data + b.data, (a, b), lambda g: (g, g), "add")


def mul(a, b):
    a, b = _wrap(a), _wrap(b)
    _check_same_shape(a, b, "mul")
    return _result(a.data * b.data, (a, b), lambda g: (g * b.data, g * a.data), "mul")


def scale(a, c):
    a = _wrap(a)
    c = a.data.dtype.type(c)
    return _result(a.data * c, (a,), lambda g: (g * c,), "scale")


def exp(x):
    x = _wrap(x)
    out = np.exp(x.data)
    return _result(out, (x,), lambda g: (g * out,), "exp")


def tensor_sum(x):
    """Sum of all elements as a (1,1,1,1) tensor."""
    x = _wrap(x)
    shape, dtype = x.shape, x.dtype
    total = np.asarray(x.data.sum(dtype=np.float64), dtype=dtype).reshape(SCALAR_SHAPE)
    return _result(total, (x,), lambda g: (np.full(shape, g.reshape(-1)[0], dtype=dtype),), "sum")


def tensor_mean(x):
    x = _wrap(x)
    return scale(tensor_sum(x), 1.0 / x.size)


# -- network operations ------------------------------------------------------


def relu(x):
    x = _wrap(x)
    mask = x.data > 0
    return _result(np.where(mask, x.data, 0).astype(x.dtype), (x,), lambda g: (g * mask,), "relu")


def _stable_sigmoid(v):
    e = np.exp(-np.abs(v))
    return np.where(v >= 0, 1 / (1 + e), e / (1 + e)).astype(v.dtype)


def sigmoid(x):
    x = _wrap(x)
    out = _stable_sigmoid(x.data)
    return _result(out, (x,), lambda g: (g * out * (1 - out),), "sigmoid")


def conv2d(x, weight, bias, stride=1, padding=0):
    """Cross-correlation of ``x`` (N,Cin,H,W) with ``weight`` (Cout,Cin,k,k) plus bias.

    Implemented as im2col followed by one matrix product; the backward pass
    scatters column gradients back with one strided add per kernel offset.
    """
    x, weight, bias = _wrap(x), _wrap(weight), _wrap(bias)
    if x.data.ndim != 4:
        raise ShapeError(f"conv2d input must be rank 4 (N,C,H,W), got shape {x.shape}", dim="rank")
    if weight.data.ndim != 4 or weight.shape[2] != weight.shape[3]:
        raise ShapeError(f"conv2d weight must be (Cout,Cin,k,k), got {weight.shape}", dim="k")
    n, cin, h, w = x.shape
    cout, wcin, k, _ = weight.shape
    if wcin != cin:
        raise ShapeError(f"conv2d: input has C={cin} channels but weight expects Cin={wcin}", dim="C")
    if bias.size != cout:
        raise ShapeError(f"conv2d: bias has {bias.size} entries, weight has Cout={cout}", dim="Cout")
    if stride < 1 or padding < 0:
        raise ValueError("conv2d: stride must be positive and padding non-negative")
    for name, size in (("H", h), ("W", w)):
        span = size + 2 * padding - k
        if span < 0 or span % stride:
            raise ShapeError(
                f"conv2d: {name}={size} with k={k}, stride={stride}, padding={padding} "
                "does not give a positive integer output size",
                dim=name,
            )
    ho = (h + 2 * padding - k) // stride + 1
    wo = (w + 2 * padding - k) // stride + 1

    xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding))) if padding else x.data
    win = sliding_window_view(xp, (k, k), axis=(2, 3))[:, :, ::stride, ::stride]
    cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(n * ho * wo, cin * k * k)
    wmat = weight.data.reshape(cout, -1)
    out = cols @ wmat.T + bias.data.reshape(1, cout)
    out = out.reshape(n, ho, wo, cout).transpose(0, 3, 1, 2)

    def _backward(g):
        gmat = g.transpose(0, 2, 3, 1).reshape(n * ho * wo, cout)
        gw = (gmat.T @ cols).reshape(weight.shape) if weight.requires_grad else None
        gb = gmat.sum(axis=0).reshape(bias.shape) if bias.requires_grad else None
        gx = None
        if x.requires_grad:
            gcols = (gmat @ wmat).reshape(n, ho, wo, cin, k, k).transpose(0, 3, 1, 2, 4, 5)
            gxp = np.zeros(xp.shape, dtype=g.dtype)
            for i in range(k):
                for j in range(k):
                    gxp[:, :, i : i + stride * ho : stride, j : j + stride * wo : stride] += gcols[..., i, j]
            gx = gxp[:, :, padding : padding + h, padding : padding + w] if padding else gxp
        return gx, gw, gb

    return _result(np.ascontiguousarray(out), (x, weight, bias), _backward, "conv2d")


def max_pool2(x):
    """2x2 max pooling with stride 2; ties resolve to the first window element."""
    x = _wrap(x)
    n, c, h, w = x.shape
    if h % 2:
        raise ShapeError(f"max_pool2 needs an even height, got H={h}", dim="H")
    if w % 2:
        raise ShapeError(f"max_pool2 needs an even width, got W={w}", dim="W")
    blocks = x.data.reshape(n, c, h // 2, 2, w // 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, h // 2, w // 2, 4)
    idx = blocks.argmax(axis=-1)
    out = np.take_along_axis(blocks, idx[..., None], axis=-1)[..., 0]

    def _backward(g):
        gb = np.zeros(blocks.shape, dtype=g.dtype)
        np.put_along_axis(gb, idx[..., None], g[..., None], axis=-1)
        return (gb.reshape(n, c, h // 2, w // 2, 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, h, w),)

    return _result(out, (x,), _backward, "max_pool2")


def upsample2(x):
    """Nearest-neighbour 2x spatial upsampling."""
    x = _wrap(x)
    n, c, h, w = x.shape
    out = x.data.repeat(2, axis=2).repeat(2, axis=3)
    return _result(out, (x,), lambda g: (g.reshape(n, c, h, 2, w, 2).sum(axis=(3, 5)),), "upsample2")


def concat_channels(a, b):
    a, b = _wrap(a), _wrap(b)
    for name, i in (("N", 0), ("H", 2), ("W", 3)):
        if a.shape[i] != b.shape[i]:
            raise ShapeError(f"concat_channels: dimension {name} differs ({a.shape[i]} vs {b.shape[i]})", dim=name)
    ca = a.shape[1]
    out = np.concatenate([a.data, b.data], axis=1)
    return _result(out, (a, b), lambda g: (g[:, :ca], g[:, ca:]), "concat")


def slice_channels(x, start, stop):
    x = _wrap(x)
    shape = x.shape

    def _backward(g):
        gx = np.zeros(shape, dtype=g.dtype)
        gx[:, start:stop] = g
        return (gx,)

    return _result(x.data[:, start:stop].copy(), (x,), _backward, "slice")


# -- graph traversal ---------------------------------------------------------


def topological_order(output):
    """Return the tape: every node reachable from ``output``, parents first."""
    order, seen = [], set()
    stack = [(output, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if parent.requires_grad and id(parent) not in seen:
                stack.append((parent, False))
    return order


def backward(output):
    """Populate ``.grad`` on every requires_grad tensor that ``output`` depends on.

    Gradients from several consumers are summed. Leaf gradients accumulate
    into any existing ``.grad``; the graph is released afterwards.
    """
    if output.shape != SCALAR_SHAPE:
        raise GradientError(f"backward needs a scalar (1,1,1,1) output, got shape {output.shape}")
    if not output.requires_grad:
        raise GradientError("backward called on a tensor that was not recorded on the tape")
    tape = topological_order(output)
    pending = {id(output): np.ones(SCALAR_SHAPE, dtype=output.dtype)}
    for node in reversed(tape):
        g = pending.pop(id(node), None)
        if g is None:
            continue
        if node._backward is None:
            node.grad = g if node.grad is None else node.grad + g
            continue
        node.grad = g
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            pending[key] = pg if key not in pending else pending[key] + pg
        node._parents = ()
        node._backward = None


def zero_grad(params):
    for p in params:
        if p.grad is None:
            p.grad = np.zeros_like(p.data)
        else:
            p.grad.fill(0)


def sgd_step(params, lr, momentum=0.0, weight_decay=0.0):
    """One SGD step with heavy-ball momentum and L2 weight decay, then clear gradients."""
    for p in params:
        if p.grad is None:
            raise GradientError(f"parameter {getattr(p, 'name', '') or p!r} has no gradient")
        g = p.grad
        if weight_decay and not p.decay_exempt:
            g = g + weight_decay * p.data
        buf = p.momentum_buffer
        buf *= momentum
        buf += g
        p.data -= lr * buf
        p.grad = np.zeros_like(p.data)


def finite_diff_grad(f, x, eps=1e-3):
    """Central-difference estimate of the gradient of scalar ``f`` at ``x``.

    ``f`` receives a float64 Tensor holding the perturbed values and may
    return a float or a single-element Tensor. Evaluation is in double
    precision so that rounding stays far below the O(eps^2) truncation
    error. ``x`` is not modified.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    base = _as_array(x, np.float64).copy()
    flat = base.reshape(-1)
    out = np.empty(flat.shape, dtype=np.float64)

    def _eval():
        val = f(Tensor(base.copy()))
        return float(val.item() if isinstance(val, Tensor) else val)

    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        hi = _eval()
        flat[i] = orig - eps
        lo = _eval()
        flat[i] = orig
        out[i] = (hi - lo) / (2 * eps)
    return Tensor(out.reshape(base.shape))
