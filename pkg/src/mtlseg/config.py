"""``key = value`` configuration files with ``[section]`` headers.

Unknown sections and unknown keys are errors, so a typo in a sweep file
fails loudly instead of silently running the default.
"""

import configparser
from dataclasses import dataclass, field, fields, replace

from .data import SceneConfig, SplitSpec
from .errors import ConfigError
from .losses import TaskWeights

TASK_LETTERS = {"S": "seg", "B": "bnd", "R": "rec"}


@dataclass(frozen=True)
class RunConfig:
    dataset: str = ""
    out: str = ""
    tasks: tuple = ("S",)
    weighting: str = "fixed"
    w_seg: float = 1.0
    w_bnd: float = 0.0
    w_rec: float = 0.0
    epochs: int = 300
    batch_size: int = 4
    lr: float = 2.5e-3
    momentum: float = 0.9
    weight_decay: float = 1e-4
    crop: int = 64
    augment: bool = True
    boundary_radius: int = 3
    depth: int = 3
    widths: tuple = (32, 16, 8)
    model_seed: int = 0
    data_seed: int = 0
    shuffle_seed: int = 0

    def __post_init__(self):
        # accepts ("S", "B"), "S+B" or "SB"
        letters = "".join(self.tasks).replace("+", "").replace(" ", "").upper()
        tasks = tuple(t for t in "SBR" if t in letters)
        if set(letters) - set("SBR"):
            raise ConfigError(f"unknown task letters in {self.tasks!r}; use S, B, R")
        if "S" not in tasks:
            raise ConfigError("the segmentation task S is mandatory")
        object.__setattr__(self, "tasks", tasks)
        object.__setattr__(self, "widths", tuple(int(w) for w in self.widths))
        if self.weighting not in ("fixed", "uncertainty"):
            raise ConfigError(f"weighting must be 'fixed' or 'uncertainty', got {self.weighting!r}")
        if self.weighting == "fixed":
            for letter, w in zip("SBR", (self.w_seg, self.w_bnd, self.w_rec)):
                if letter not in tasks and w != 0:
                    raise ConfigError(f"weight for inactive task {letter} must be 0, got {w}")
            try:
                TaskWeights(self.w_seg, self.w_bnd, self.w_rec)
            except ValueError as exc:
                raise ConfigError(str(exc)) from exc
        for name in ("epochs", "batch_size", "crop"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive")

    @property
    def heads(self):
        return tuple(TASK_LETTERS[t] for t in self.tasks)

    @property
    def weights(self):
        return TaskWeights(self.w_seg, self.w_bnd, self.w_rec)

    @property
    def seeds(self):
        return {"model_seed": self.model_seed, "data_seed": self.data_seed, "shuffle_seed": self.shuffle_seed}

    def with_seed(self, seed):
        return replace(self, model_seed=seed, data_seed=seed, shuffle_seed=seed)

    def with_tasks(self, tasks):
        """Same run restricted to ``tasks``; fixed weights of dropped tasks become 0."""
        ws = {k: (getattr(self, k) if t in tasks else 0.0) for k, t in (("w_seg", "S"), ("w_bnd", "B"), ("w_rec", "R"))}
        return replace(self, tasks=tuple(tasks), **ws)


@dataclass(frozen=True)
class GenConfig:
    scene: SceneConfig = field(default_factory=SceneConfig)
    n: int = 64
    split: SplitSpec = field(default_factory=SplitSpec)
    out: str = ""


def _parse_bool(v):
    s = v.strip().lower()
    if s in ("1", "true", "yes", "on"):
        return True
    if s in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {v!r}")


def _parse_tuple(conv):
    return lambda v: tuple(conv(x) for x in v.replace("(", "").replace(")", "").replace("+", ",").split(",") if x.strip())


def _converter(default):
    if isinstance(default, bool):
        return _parse_bool
    if isinstance(default, int):
        return int
    if isinstance(default, float):
        return float
    if isinstance(default, tuple):
        if default and isinstance(default[0], str):
            return _parse_tuple(str.strip)
        if default and isinstance(default[0], int):
            return _parse_tuple(int)
        return _parse_tuple(float)
    return str


def _section_values(parser, section, cls):
    defaults = {f.name: f.default for f in fields(cls)}
    out = {}
    for key, raw in parser.items(section):
        if key not in defaults:
            raise ConfigError(f"unknown key {key!r} in section [{section}]")
        try:
            out[key] = _converter(defaults[key])(raw)
        except ValueError as exc:
            raise ConfigError(f"[{section}] {key}: {exc}") from exc
    return out


def read_config(path):
    """Parse a config file into ``{section: ConfigParser section}`` after validation."""
    parser = configparser.ConfigParser(interpolation=None, default_section="__none__")
    parser.optionxform = str
    try:
        with open(path) as fh:
            parser.read_file(fh)
    except (configparser.Error, OSError) as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    unknown = set(parser.sections()) - {"data", "run", "sweep"}
    if unknown:
        raise ConfigError(f"{path}: unknown sections {sorted(unknown)}")
    return parser


def gen_config_from(parser):
    if not parser.has_section("data"):
        raise ConfigError("missing [data] section")
    items = dict(parser.items("data"))
    scene_keys = {f.name for f in fields(SceneConfig)}
    n, out, split_kw = 64, "", {}
    scene_kw = {}
    for key, raw in items.items():
        try:
            if key == "n":
                n = int(raw)
            elif key == "out":
                out = raw.strip()
            elif key == "ratios":
                split_kw["ratios"] = _parse_tuple(float)(raw)
            elif key == "split_seed":
                split_kw["seed"] = int(raw)
            elif key in scene_keys:
                default = getattr(SceneConfig(), key)
                scene_kw[key] = _converter(default)(raw)
            else:
                raise ConfigError(f"unknown key {key!r} in section [data]")
        except ConfigError:
            raise
        except ValueError as exc:
            raise ConfigError(f"[data] {key}: {exc}") from exc
    try:
        scene = SceneConfig(**scene_kw)
        # the split follows the scene seed unless given its own
        split = SplitSpec(split_kw.get("ratios", SplitSpec().ratios), split_kw.get("seed", scene.seed))
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    return GenConfig(scene=scene, n=n, split=split, out=out)


def run_config_from(parser):
    if not parser.has_section("run"):
        raise ConfigError("missing [run] section")
    return RunConfig(**_section_values(parser, "run", RunConfig))


def sweep_grid_from(parser):
    """``grid = w_bnd:w_rec, w_bnd:w_rec, ...`` from the [sweep] section."""
    if not parser.has_section("sweep"):
        raise ConfigError("missing [sweep] section")
    items = dict(parser.items("sweep"))
    unknown = set(items) - {"grid"}
    if unknown:
        raise ConfigError(f"unknown keys {sorted(unknown)} in section [sweep]")
    return parse_grid(items.get("grid", ""))


def parse_grid(text):
    grid = []
    for point in text.replace("\n", ",").split(","):
        point = point.strip()
        if not point:
            continue
        try:
            b, r = point.split(":")
            grid.append((float(b), float(r)))
        except ValueError as exc:
            raise ConfigError(f"bad sweep point {point!r}; expected w_bnd:w_rec") from exc
    return grid
