"""Three-headed encoder/decoder network and its checkpoint format.

One shared encoder feeds three decoders: segmentation and boundary decoders
concatenate the encoder feature map of matching resolution at every level,
the reconstruction decoder does not and has to rebuild the image from the
bottleneck alone.
"""

import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import FormatError, ShapeError
from .tensor import Parameter, Tensor, concat_channels, conv2d, max_pool2, relu, sigmoid, upsample2

HEADS = ("seg", "bnd", "rec")
MAGIC = b"MTLSEG1"
KERNEL = 3


@dataclass(frozen=True)
class ModelConfig:
    """Network shape.

    ``widths`` is decoder-ordered (deepest level first), e.g. the full-size
    ``(256, 128, 64, 32, 16)``. Encoder levels use the same widths reversed.
    """

    in_channels: int = 3
    depth: int = 3
    widths: tuple = (32, 16, 8)
    seg_skip: bool = True
    bnd_skip: bool = True
    rec_skip: bool = False

    def __post_init__(self):
        object.__setattr__(self, "widths", tuple(int(w) for w in self.widths))
        if self.in_channels < 1 or self.depth < 1:
            raise ValueError("in_channels and depth must be positive")
        if len(self.widths) != self.depth:
            raise ShapeError(f"widths has {len(self.widths)} entries but depth is {self.depth}", dim="depth")
        if any(w < 1 for w in self.widths):
            raise ValueError(f"widths must be positive, got {self.widths}")
        if not (self.seg_skip and self.bnd_skip):
            raise ValueError("segmentation and boundary decoders always use skip connections")
        if self.rec_skip:
            raise ValueError("the reconstruction decoder must not use skip connections")

    @property
    def encoder_widths(self):
        return self.widths[::-1]

    @property
    def bottleneck_width(self):
        return self.widths[0]

    def skip_for(self, head):
        return {"seg": self.seg_skip, "bnd": self.bnd_skip, "rec": self.rec_skip}[head]

    def out_channels(self, head):
        return self.in_channels if head == "rec" else 1


def _layer_shapes(config):
    """Ordered (name, weight shape) for every conv in the network."""
    k = KERNEL
    layers = []
    cin = config.in_channels
    for i, w in enumerate(config.encoder_widths):
        layers.append((f"enc{i}.conv0", (w, cin, k, k)))
        layers.append((f"enc{i}.conv1", (w, w, k, k)))
        cin = w
    b = config.bottleneck_width
    layers.append(("mid.conv0", (b, cin, k, k)))
    layers.append(("mid.conv1", (b, b, k, k)))
    enc = config.encoder_widths
    for head in HEADS:
        cin = b
        for j, w in enumerate(config.widths):
            skip = enc[config.depth - 1 - j] if config.skip_for(head) else 0
            layers.append((f"{head}.dec{j}", (w, cin + skip, k, k)))
            cin = w
        layers.append((f"{head}.out", (config.out_channels(head), cin, 1, 1)))
    return layers


def parameter_count(config, uncertainty_tasks=0):
    """Number of learnable scalars; add one per attached log-variance."""
    total = sum(int(np.prod(shape)) + shape[0] for _, shape in _layer_shapes(config))
    return total + int(uncertainty_tasks)


class Model:
    """Parameters of the three-headed network, stored in a flat ordered registry."""

    def __init__(self, config, params):
        self.config = config
        self.params = params  # dict name -> Parameter, registry order

    def parameters(self):
        return list(self.params.values())

    def named_parameters(self):
        return list(self.params.items())

    def head_parameters(self, head):
        return [p for n, p in self.params.items() if n.startswith(head + ".")]

    def _conv(self, name, x, padding=1):
        return conv2d(x, self.params[name + ".weight"], self.params[name + ".bias"], 1, padding)

    def encode(self, x):
        """Return the bottleneck feature map and the per-level skip features."""
        skips = []
        for i in range(self.config.depth):
            x = relu(self._conv(f"enc{i}.conv0", x))
            x = relu(self._conv(f"enc{i}.conv1", x))
            skips.append(x)
            x = max_pool2(x)
        x = relu(self._conv("mid.conv0", x))
        x = relu(self._conv("mid.conv1", x))
        return x, skips

    def decode(self, head, bottleneck, skips):
        """Run one decoder; returns logits (seg/bnd) or the sigmoid image (rec)."""
        x = bottleneck
        use_skip = self.config.skip_for(head)
        for j in range(self.config.depth):
            x = upsample2(x)
            if use_skip:
                x = concat_channels(x, skips[self.config.depth - 1 - j])
            x = relu(self._conv(f"{head}.dec{j}", x))
        out = self._conv(f"{head}.out", x, padding=0)
        return sigmoid(out) if head == "rec" else out

    def forward(self, batch, heads=HEADS):
        """Return ``(seg_logits, bnd_logits, recon)``; heads not requested are ``None``."""
        x = batch if isinstance(batch, Tensor) else Tensor(batch)
        if x.data.ndim != 4:
            raise ShapeError(f"expected an (N,C,H,W) batch, got shape {x.shape}", dim="rank")
        if x.shape[1] != self.config.in_channels:
            raise ShapeError(f"batch has {x.shape[1]} channels, model expects {self.config.in_channels}", dim="C")
        factor = 2**self.config.depth
        for name, size in (("H", x.shape[2]), ("W", x.shape[3])):
            if size % factor:
                raise ShapeError(
                    f"{name}={size} is not divisible by 2**depth={factor}", dim=name
                )
        bottleneck, skips = self.encode(x)
        return tuple(self.decode(h, bottleneck, skips) if h in heads else None for h in HEADS)

    __call__ = forward

    def state(self):
        return {n: p.data.copy() for n, p in self.params.items()}


def build_model(config, rng_seed=0):
    """Initialise a model deterministically: He-normal conv weights, zero biases."""
    rng = np.random.default_rng(rng_seed)
    params = {}
    for name, shape in _layer_shapes(config):
        fan_in = shape[1] * shape[2] * shape[3]
        w = rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)
        params[name + ".weight"] = Parameter(w.astype(np.float32), name=name + ".weight")
        params[name + ".bias"] = Parameter(np.zeros(shape[0], dtype=np.float32), name=name + ".bias")
    return Model(config, params)


def forward(model, batch, heads=HEADS):
    return model.forward(batch, heads)


# -- checkpoint file ---------------------------------------------------------
#
# magic "MTLSEG1", then little-endian int32: in_channels, depth, widths[depth],
# task bitmask (seg=1, bnd=2, rec=4), model/data/shuffle seeds, number of
# log-variances (0..3) followed
# by that many task codes, then all model parameters in registry order and
# the log-variances as little-endian float32.

TASK_BITS = {"seg": 1, "bnd": 2, "rec": 4}


def save_checkpoint(path, model, tasks=HEADS, uncertainty=None, seeds=(0, 0, 0)):
    cfg = model.config
    header = [cfg.in_channels, cfg.depth, *cfg.widths, sum(TASK_BITS[t] for t in tasks), *seeds]
    u_tasks = list(uncertainty.tasks) if uncertainty is not None else []
    header += [len(u_tasks)] + [TASK_BITS[t] for t in u_tasks]
    chunks = [MAGIC, struct.pack(f"<{len(header)}i", *header)]
    for p in model.parameters():
        chunks.append(p.data.astype("<f4").tobytes())
    for t in u_tasks:
        chunks.append(uncertainty[t].data.astype("<f4").tobytes())
    with open(path, "wb") as fh:
        fh.write(b"".join(chunks))


@dataclass
class Checkpoint:
    model: Model
    tasks: tuple
    uncertainty: dict = field(default_factory=dict)
    seeds: tuple = (0, 0, 0)


def load_checkpoint(path):
    """Read a checkpoint written by :func:`save_checkpoint`."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if not blob.startswith(MAGIC):
        raise FormatError(f"{path}: not an MTLSEG1 checkpoint")
    pos = len(MAGIC)

    def _ints(count):
        nonlocal pos
        end = pos + 4 * count
        if end > len(blob):
            raise FormatError(f"{path}: truncated header")
        vals = struct.unpack(f"<{count}i", blob[pos:end])
        pos = end
        return vals

    in_channels, depth = _ints(2)
    if depth < 1 or depth > 16:
        raise FormatError(f"{path}: implausible depth {depth}")
    widths = _ints(depth)
    (mask,) = _ints(1)
    seeds = _ints(3)
    (n_u,) = _ints(1)
    codes = _ints(n_u) if n_u else ()
    by_bit = {v: k for k, v in TASK_BITS.items()}
    tasks = tuple(t for t in HEADS if mask & TASK_BITS[t])
    u_tasks = [by_bit[c] for c in codes]
    config = ModelConfig(in_channels=in_channels, depth=depth, widths=widths)
    model = build_model(config, 0)
    needed = 4 * (parameter_count(config) + n_u)
    if len(blob) - pos != needed:
        raise FormatError(f"{path}: expected {needed} bytes of parameters, found {len(blob) - pos}")
    for p in model.parameters():
        n = p.size
        p.data[...] = np.frombuffer(blob, dtype="<f4", count=n, offset=pos).reshape(p.shape)
        pos += 4 * n
    uncertainty = {}
    for t in u_tasks:
        uncertainty[t] = float(np.frombuffer(blob, dtype="<f4", count=1, offset=pos)[0])
        pos += 4
    return Checkpoint(model=model, tasks=tasks, uncertainty=uncertainty, seeds=tuple(seeds))
