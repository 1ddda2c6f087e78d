"""Synthetic footprint scenes, boundary targets, augmentation and dataset I/O.

Scenes are textured backgrounds with rectangular, optionally rotated
"buildings". Every sample carries its image, the binary footprint mask and a
boundary mask derived from the footprint mask with :func:`extract_boundary`.
"""

import csv
import math
import os
from dataclasses import dataclass, fields, replace

import numpy as np

from .errors import BinaryMaskError, FormatError, ShapeError

__all__ = [
    "Sample",
    "SceneConfig",
    "SplitSpec",
    "AugmentPolicy",
    "generate_scene",
    "extract_boundary",
    "disk_offsets",
    "augment",
    "hflip",
    "vflip",
    "random_crop",
    "split_dataset",
    "read_netpbm",
    "write_netpbm",
    "write_dataset",
    "load_dataset",
    "SUBSETS",
]

SUBSETS = ("train", "val", "test")


@dataclass
class Sample:
    image: np.ndarray  # (1, C, H, W) float32 in [0, 1]
    seg_mask: np.ndarray  # (1, 1, H, W) float32 in {0, 1}
    bnd_mask: np.ndarray  # (1, 1, H, W) float32 in {0, 1}
    id: int = 0


@dataclass(frozen=True)
class SceneConfig:
    size: int = 64
    channels: int = 3
    count_min: int = 2
    count_max: int = 6
    size_min: int = 6
    size_max: int = 18
    texture: float = 0.15
    rotate_p: float = 0.5
    boundary_radius: int = 3
    seed: int = 0

    def __post_init__(self):
        if self.size < 1:
            raise ValueError("size must be positive")
        if self.channels not in (1, 3):
            raise ValueError(f"channels must be 1 or 3, got {self.channels}")
        if not 0 <= self.count_min <= self.count_max:
            raise ValueError(f"bad building count range ({self.count_min}, {self.count_max})")
        if not 3 <= self.size_min <= self.size_max:
            raise ValueError(f"building size range must start at >= 3 px, got ({self.size_min}, {self.size_max})")
        if self.boundary_radius < 0:
            raise ValueError("boundary_radius must be non-negative")


@dataclass(frozen=True)
class SplitSpec:
    ratios: tuple = (0.7, 0.2, 0.1)
    seed: int = 0

    def __post_init__(self):
        r = tuple(float(x) for x in self.ratios)
        object.__setattr__(self, "ratios", r)
        if len(r) != 3 or any(x < 0 for x in r):
            raise ValueError(f"need three non-negative ratios, got {r}")
        if abs(sum(r) - 1.0) > 1e-9:
            raise ValueError(f"ratios must sum to 1, got {sum(r)!r}")


def _check_binary(mask, what):
    if not np.all((mask == 0) | (mask == 1)):
        raise BinaryMaskError(f"{what}: mask must contain only 0 and 1")


# -- boundary extraction -----------------------------------------------------


def disk_offsets(radius):
    r = int(radius)
    return [(dy, dx) for dy in range(-r, r + 1) for dx in range(-r, r + 1) if dy * dy + dx * dx <= r * r]


def _shift_or(mask, offsets):
    """OR of ``mask`` shifted by every offset, zero fill at the borders."""
    h, w = mask.shape[-2:]
    r = max((max(abs(dy), abs(dx)) for dy, dx in offsets), default=0)
    padded = np.pad(mask, [(0, 0)] * (mask.ndim - 2) + [(r, r), (r, r)])
    out = np.zeros(mask.shape, dtype=bool)
    for dy, dx in offsets:
        out |= padded[..., r + dy : r + dy + h, r + dx : r + dx + w]
    return out


def extract_boundary(mask, dilation_radius=3):
    """Inner 4-connected boundary of a binary mask, dilated by a disk.

    A pixel is on the inner boundary when it is set and at least one of its
    4-neighbours is not (pixels outside the image count as unset).
    """
    m = np.asarray(mask)
    _check_binary(m, "extract_boundary")
    if dilation_radius < 0:
        raise ValueError("dilation_radius must be non-negative")
    on = m.astype(bool)
    p = np.pad(on, [(0, 0)] * (on.ndim - 2) + [(1, 1), (1, 1)])
    interior = p[..., :-2, 1:-1] & p[..., 2:, 1:-1] & p[..., 1:-1, :-2] & p[..., 1:-1, 2:]
    edge = on & ~interior
    if dilation_radius > 0:
        edge = _shift_or(edge, disk_offsets(dilation_radius))
    return edge.astype(m.dtype if m.dtype != bool else np.float32)


# -- scene generation --------------------------------------------------------


def _smooth_field(rng, size, cells):
    """Bilinearly upsampled coarse noise in roughly [-1, 1]."""
    coarse = rng.uniform(-1, 1, size=(cells + 1, cells + 1))
    t = (np.arange(size) + 0.5) / size * cells
    i = np.minimum(t.astype(int), cells - 1)
    f = t - i
    rows = coarse[i] * (1 - f)[:, None] + coarse[i + 1] * f[:, None]
    return rows[:, i] * (1 - f)[None, :] + rows[:, i + 1] * f[None, :]


def rasterize_rectangle(shape, cy, cx, height, width, angle):
    """Pixels whose centres fall inside a rotated rectangle, capped at its area.

    When the lattice holds more centres than ``height * width`` (possible
    for rotated rectangles), the surplus pixels nearest the rectangle's edge
    are dropped so the raster never outgrows the footprint it stands for.
    Returns the boolean mask and, per pixel, the signed across-axis
    coordinate used for roof shading.
    """
    yy, xx = np.mgrid[0 : shape[0], 0 : shape[1]] + 0.5
    c, s = math.cos(angle), math.sin(angle)
    u = (xx - cx) * c + (yy - cy) * s
    v = -(xx - cx) * s + (yy - cy) * c
    inside = (np.abs(u) < width / 2) & (np.abs(v) < height / 2)
    excess = int(inside.sum()) - height * width
    if excess > 0:
        depth = np.maximum(np.abs(u) / width, np.abs(v) / height)
        idx = np.flatnonzero(inside)
        order = np.argsort(-depth.reshape(-1)[idx], kind="stable")
        inside.reshape(-1)[idx[order[:excess]]] = False
    return inside, v


def generate_scene(config, index):
    """Render scene ``index``; identical ``(config, index)`` gives identical samples."""
    rng = np.random.default_rng([config.seed, index])
    n = config.size
    base = rng.uniform(0.25, 0.45, size=3) * np.array([0.9, 1.05, 0.85])
    texture = _smooth_field(rng, n, max(2, n // 16)) + 0.35 * _smooth_field(rng, n, max(2, n // 4))
    image = base[:, None, None] + config.texture * texture[None] * np.array([1.0, 1.1, 0.9])[:, None, None]

    seg = np.zeros((n, n), dtype=bool)
    count = int(rng.integers(config.count_min, config.count_max + 1))
    for _ in range(count):
        h, w = (int(x) for x in rng.integers(config.size_min, config.size_max + 1, size=2))
        angle = rng.uniform(0, math.pi / 2) if rng.random() < config.rotate_p else 0.0
        radius = 0.5 * math.hypot(h, w) if angle else 0.5 * max(h, w)
        lo, hi = min(radius, n / 2), max(n - radius, n / 2)
        cy, cx = rng.uniform(lo, hi, size=2)
        if not angle:
            # even sides sit on pixel corners, odd sides on pixel centres
            cy = math.floor(cy) + (h % 2) / 2
            cx = math.floor(cx) + (w % 2) / 2
        roof, across = rasterize_rectangle((n, n), cy, cx, h, w, angle)
        shadow = np.zeros_like(roof)
        shadow[2:, 2:] = roof[:-2, :-2]
        shadow &= ~seg & ~roof
        image[:, shadow] *= 0.55
        tone = rng.uniform(0.6, 0.92) * rng.uniform(0.9, 1.1, size=3)
        shade = np.where(across > 0, 0.85, 1.0)
        image[:, roof] = (tone[:, None] * shade[roof][None]).clip(0, 1)
        seg |= roof

    image += rng.normal(0, 0.01, size=image.shape)
    if config.channels == 1:
        image = image.mean(axis=0, keepdims=True)
    seg_mask = seg.astype(np.float32)[None, None]
    return Sample(
        image=image.clip(0, 1).astype(np.float32)[None],
        seg_mask=seg_mask,
        bnd_mask=extract_boundary(seg_mask, config.boundary_radius),
        id=int(index),
    )


# -- augmentation ------------------------------------------------------------


@dataclass(frozen=True)
class AugmentPolicy:
    """Magnitudes of the training-time transforms.

    Ranges are ``(low, high)`` and are sampled uniformly; probabilities are
    per-sample. :meth:`identity` disables everything.
    """

    hflip_p: float = 0.5
    vflip_p: float = 0.5
    noise_sigma: tuple = (0.0, 0.05)
    brightness: tuple = (-0.2, 0.2)
    gamma: tuple = (0.7, 1.4)
    contrast: tuple = (0.7, 1.3)
    blur_p: float = 0.25
    perspective: float = 0.05
    boundary_radius: int = 3

    @classmethod
    def identity(cls, boundary_radius=3):
        return cls(0.0, 0.0, (0.0, 0.0), (0.0, 0.0), (1.0, 1.0), (1.0, 1.0), 0.0, 0.0, boundary_radius)


def hflip(sample):
    return replace(
        sample,
        image=sample.image[..., ::-1].copy(),
        seg_mask=sample.seg_mask[..., ::-1].copy(),
        bnd_mask=sample.bnd_mask[..., ::-1].copy(),
    )


def vflip(sample):
    return replace(
        sample,
        image=sample.image[..., ::-1, :].copy(),
        seg_mask=sample.seg_mask[..., ::-1, :].copy(),
        bnd_mask=sample.bnd_mask[..., ::-1, :].copy(),
    )


def _homography(src, dst):
    """3x3 matrix mapping the four ``src`` points onto ``dst``."""
    a, b = [], []
    for (x, y), (u, v) in zip(src, dst):
        a.append([x, y, 1, 0, 0, 0, -u * x, -u * y])
        a.append([0, 0, 0, x, y, 1, -v * x, -v * y])
        b += [u, v]
    h = np.linalg.solve(np.array(a, dtype=np.float64), np.array(b, dtype=np.float64))
    return np.append(h, 1.0).reshape(3, 3)


def _perspective(image, masks, jitter):
    """Warp so the image corners move by ``jitter`` (4x2, pixels)."""
    hgt, wid = image.shape[-2:]
    corners = np.array([[0, 0], [wid, 0], [wid, hgt], [0, hgt]], dtype=np.float64)
    # output pixel -> input location
    m = _homography(corners, corners + jitter)
    yy, xx = np.mgrid[0:hgt, 0:wid] + 0.5
    pts = m @ np.stack([xx.ravel(), yy.ravel(), np.ones(xx.size)])
    sx = (pts[0] / pts[2]).reshape(hgt, wid) - 0.5
    sy = (pts[1] / pts[2]).reshape(hgt, wid) - 0.5

    x0 = np.floor(sx).astype(int)
    y0 = np.floor(sy).astype(int)
    fx, fy = sx - x0, sy - y0
    xa, xb = np.clip(x0, 0, wid - 1), np.clip(x0 + 1, 0, wid - 1)
    ya, yb = np.clip(y0, 0, hgt - 1), np.clip(y0 + 1, 0, hgt - 1)
    img = image[0]
    warped = (
        img[:, ya, xa] * ((1 - fx) * (1 - fy))
        + img[:, ya, xb] * (fx * (1 - fy))
        + img[:, yb, xa] * ((1 - fx) * fy)
        + img[:, yb, xb] * (fx * fy)
    )
    nx, ny = np.rint(sx).astype(int), np.rint(sy).astype(int)
    valid = (nx >= 0) & (nx < wid) & (ny >= 0) & (ny < hgt)
    nxc, nyc = np.clip(nx, 0, wid - 1), np.clip(ny, 0, hgt - 1)
    out_masks = [np.where(valid, mk[0, 0, nyc, nxc], 0)[None, None] for mk in masks]
    return warped[None].astype(image.dtype), out_masks


def _blur3(image):
    k = np.array([1.0, 2.0, 1.0]) / 4
    p = np.pad(image, ((0, 0), (0, 0), (1, 1), (1, 1)), mode="edge")
    rows = k[0] * p[..., :-2, :] + k[1] * p[..., 1:-1, :] + k[2] * p[..., 2:, :]
    return (k[0] * rows[..., :-2] + k[1] * rows[..., 1:-1] + k[2] * rows[..., 2:]).astype(image.dtype)


def augment(sample, rng, policy=AugmentPolicy()):
    """Random geometric and photometric transforms of one sample.

    Every call draws the same random numbers whatever the policy, so runs
    with different policies keep aligned random streams. Masks only see the
    geometric transforms; the boundary mask is rebuilt from the final
    footprint mask.
    """
    hgt, wid = sample.image.shape[-2:]
    do_h = rng.random() < policy.hflip_p
    do_v = rng.random() < policy.vflip_p
    jitter = rng.uniform(-1, 1, size=(4, 2)) * policy.perspective * np.array([wid, hgt])
    delta = rng.uniform(*policy.brightness)
    contrast = rng.uniform(*policy.contrast)
    gamma = rng.uniform(*policy.gamma)
    sigma = rng.uniform(*policy.noise_sigma)
    noise = rng.standard_normal(sample.image.shape)
    do_blur = rng.random() < policy.blur_p

    out = sample
    if do_h:
        out = hflip(out)
    if do_v:
        out = vflip(out)
    image, seg = out.image, out.seg_mask
    if policy.perspective > 0 and np.any(jitter):
        image, (seg,) = _perspective(image, [seg], jitter)
        seg = (seg > 0.5).astype(np.float32)
    if delta != 0:
        image = image + np.float32(delta)
    if contrast != 1:
        mean = image.mean(axis=(-2, -1), keepdims=True)
        image = (image - mean) * np.float32(contrast) + mean
    if gamma != 1:
        image = np.clip(image, 0, 1) ** np.float32(gamma)
    if sigma > 0:
        image = image + (sigma * noise).astype(image.dtype)
    if do_blur:
        image = _blur3(image)
    image = np.clip(image, 0, 1).astype(np.float32)
    changed = out is not sample or seg is not out.seg_mask
    bnd = extract_boundary(seg, policy.boundary_radius) if changed else sample.bnd_mask
    return Sample(image=image, seg_mask=seg, bnd_mask=bnd, id=sample.id)


def random_crop(sample, size, rng):
    """Cut the same ``size`` x ``size`` window out of the image and both masks."""
    hgt, wid = sample.image.shape[-2:]
    if size > hgt:
        raise ShapeError(f"crop size {size} exceeds image height {hgt}", dim="H")
    if size > wid:
        raise ShapeError(f"crop size {size} exceeds image width {wid}", dim="W")
    y = int(rng.integers(0, hgt - size + 1))
    x = int(rng.integers(0, wid - size + 1))
    win = (Ellipsis, slice(y, y + size), slice(x, x + size))
    return Sample(sample.image[win].copy(), sample.seg_mask[win].copy(), sample.bnd_mask[win].copy(), sample.id)


# -- splitting ---------------------------------------------------------------


def split_dataset(n, spec=SplitSpec()):
    """Shuffle ``range(n)`` by seed and cut it into train/val/test index lists.

    Each subset gets ``floor(ratio * n)`` indices; leftovers are dealt one at
    a time to train, val, test (skipping zero ratios), round robin.
    """
    active = [i for i, r in enumerate(spec.ratios) if r > 0]
    if n < max(len(active), 1):
        raise ValueError(f"cannot split {n} items over {len(active)} non-empty subsets")
    sizes = [math.floor(r * n + 1e-9) for r in spec.ratios]
    leftover = n - sum(sizes)
    k = 0
    while leftover > 0:
        sizes[active[k % len(active)]] += 1
        leftover -= 1
        k += 1
    perm = np.random.default_rng(spec.seed).permutation(n)
    cuts = np.cumsum([0] + sizes)
    return tuple(sorted(int(i) for i in perm[cuts[j] : cuts[j + 1]]) for j in range(3))


# -- netpbm ------------------------------------------------------------------


def write_netpbm(path, array):
    """Write a (1,C,H,W), (C,H,W) or (H,W) array in [0, 1] as binary P5 (C=1) or P6 (C=3)."""
    a = np.asarray(array.data if hasattr(array, "data") and not isinstance(array, np.ndarray) else array)
    if a.ndim == 4:
        if a.shape[0] != 1:
            raise ShapeError("write_netpbm takes a single image (N=1)", dim="N")
        a = a[0]
    if a.ndim == 2:
        a = a[None]
    c, h, w = a.shape
    if c not in (1, 3):
        raise ShapeError(f"netpbm holds 1 or 3 channels, got {c}", dim="C")
    q = np.clip(np.rint(np.asarray(a, dtype=np.float64) * 255), 0, 255).astype(np.uint8)
    magic = b"P5" if c == 1 else b"P6"
    with open(path, "wb") as fh:
        fh.write(magic + b"\n%d %d\n255\n" % (w, h))
        fh.write(q.transpose(1, 2, 0).tobytes())


def _header_tokens(blob, count):
    tokens, pos = [], 0
    while len(tokens) < count:
        while pos < len(blob) and blob[pos : pos + 1].isspace():
            pos += 1
        if pos < len(blob) and blob[pos : pos + 1] == b"#":
            while pos < len(blob) and blob[pos : pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(blob) and not blob[pos : pos + 1].isspace() and blob[pos : pos + 1] != b"#":
            pos += 1
        if start == pos:
            raise FormatError("truncated netpbm header")
        tokens.append(blob[start:pos])
    if pos >= len(blob) or not blob[pos : pos + 1].isspace():
        raise FormatError("netpbm header must end with a single whitespace byte")
    return tokens, pos + 1


def read_netpbm(path):
    """Read a binary P5/P6 file with maxval 255 into a (1,C,H,W) float32 array in [0, 1]."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:2] not in (b"P5", b"P6"):
        raise FormatError(f"{path}: unsupported netpbm format {blob[:2]!r}; only P5 and P6 are read")
    channels = 1 if blob[:2] == b"P5" else 3
    try:
        (_, w, h, maxval), pos = _header_tokens(blob, 4)
        w, h, maxval = int(w), int(h), int(maxval)
    except ValueError as exc:
        raise FormatError(f"{path}: malformed netpbm header") from exc
    if w < 1 or h < 1:
        raise FormatError(f"{path}: bad image size {w}x{h}")
    if maxval != 255:
        raise FormatError(f"{path}: only maxval 255 is supported, got {maxval}")
    need = w * h * channels
    if len(blob) - pos < need:
        raise FormatError(f"{path}: truncated payload, expected {need} bytes, found {len(blob) - pos}")
    px = np.frombuffer(blob, dtype=np.uint8, count=need, offset=pos).reshape(h, w, channels)
    return (px.transpose(2, 0, 1)[None] / np.float32(255)).astype(np.float32)


# -- dataset directory -------------------------------------------------------


def write_dataset(directory, config, n, split=SplitSpec()):
    """Generate ``n`` scenes into ``directory`` with images, masks and split table."""
    os.makedirs(directory, exist_ok=True)
    subsets = split_dataset(n, split)
    for i in range(n):
        s = generate_scene(config, i)
        write_netpbm(os.path.join(directory, f"img_{i}.ppm" if config.channels == 3 else f"img_{i}.pgm"), s.image)
        write_netpbm(os.path.join(directory, f"seg_{i}.pgm"), s.seg_mask)
        write_netpbm(os.path.join(directory, f"bnd_{i}.pgm"), s.bnd_mask)
    owner = {i: name for name, idx in zip(SUBSETS, subsets) for i in idx}
    with open(os.path.join(directory, "split.csv"), "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["id", "subset"])
        for i in range(n):
            writer.writerow([i, owner[i]])
    with open(os.path.join(directory, "gen_config.txt"), "w", newline="\n") as fh:
        fh.write(f"n = {n}\n")
        for f in fields(config):
            fh.write(f"{f.name} = {getattr(config, f.name)}\n")
        fh.write(f"ratios = {','.join(repr(r) for r in split.ratios)}\n")
        fh.write(f"split_seed = {split.seed}\n")
    return subsets


def read_gen_config(directory):
    out = {}
    with open(os.path.join(directory, "gen_config.txt")) as fh:
        for line in fh:
            if "=" in line:
                k, v = line.split("=", 1)
                out[k.strip()] = v.strip()
    return out


def load_dataset(directory):
    """Load every sample and the split table; returns ``(samples_by_id, {subset: [ids]})``."""
    path = os.path.join(directory, "split.csv")
    if not os.path.exists(path):
        raise FormatError(f"{directory}: no split.csv, not a dataset directory")
    split = {name: [] for name in SUBSETS}
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            if row["subset"] not in split:
                raise FormatError(f"{path}: unknown subset {row['subset']!r}")
            split[row["subset"]].append(int(row["id"]))
    samples = {}
    for i in sorted(i for ids in split.values() for i in ids):
        img = os.path.join(directory, f"img_{i}.ppm")
        if not os.path.exists(img):
            img = os.path.join(directory, f"img_{i}.pgm")
        seg = read_netpbm(os.path.join(directory, f"seg_{i}.pgm"))
        bnd = read_netpbm(os.path.join(directory, f"bnd_{i}.pgm"))
        samples[i] = Sample(read_netpbm(img), (seg > 0.5).astype(np.float32), (bnd > 0.5).astype(np.float32), i)
    return samples, split
