"""Experiment configuration: strict TOML parsing, validation and serialisation.

Unknown keys are errors.  Every violation found is reported at once, each
prefixed with its dotted key path (``schedule.lambda``, ``clients[3].period``).
"""

import math
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
import tomli_w

from fedinv.errors import ConfigError

ARCHS = ("linear", "logistic", "mlp")
LOSSES = ("squared", "cross_entropy")
DATA_KINDS = ("synthetic", "cmnist", "container")
IMAGE_SOURCES = ("glyphs", "mnist")
STAIN_MODES = ("none", "foreground", "background", "both")
BEHAVIORS = ("normal", "slow", "lossy", "hetero")


@dataclass
class ModelConfig:
    arch: str = "linear"
    hidden: list = field(default_factory=list)
    loss: str = ""                 # empty: squared for linear, cross_entropy otherwise
    bias: bool = True
    target_scale: float = 1.0
    init_scale: float = 0.0        # 0 means zero init for linear, Glorot otherwise


@dataclass
class DataConfig:
    kind: str = "synthetic"
    n_per_env: int = 600
    corr: list = field(default_factory=lambda: [0.9, 0.8, 0.1, 0.9])
    flip_test: bool = True
    holdout_env: int = -1          # -1: no out-of-distribution env
    train_fraction: float = 0.9
    # synthetic
    d_inv: int = 2
    d_spur: int = 1
    inv_mean: float = 1.0
    inv_noise: float = 1.0
    spur_noise: float = 0.1
    rotation_plane: list = field(default_factory=lambda: [0, 1])
    # images
    source: str = "glyphs"
    mnist_dir: str = ""
    image_size: int = 28
    stain_mode: str = "foreground"
    palette_size: int = 10
    block: int = 4
    color_map: list = field(default_factory=list)
    label_noise: float = 0.0
    # container
    path: str = ""


@dataclass
class ClientConfig:
    id: int = 0
    env: int = 0
    behavior: str = "normal"
    period: int = 1
    success_prob: float = 1.0
    rotation_deg: float = 0.0


@dataclass
class PretrainConfig:
    enabled: bool = False
    K: int = 10
    epsilon_exit: float = 0.0


@dataclass
class ScheduleConfig:
    T: int = 100
    eta: float = 0.1
    lam: float = 1e-3
    eval_every: int = 10
    checkpoint_every: int = 0
    contribution_L: float = 1.0
    pretrain: PretrainConfig = field(default_factory=PretrainConfig)


@dataclass
class OutputsConfig:
    dir: str = "runs/default"


@dataclass
class SweepConfig:
    lambdas: list = field(default_factory=lambda: [1e-4, 1e-3, 1e-2, 1e-1])


@dataclass
class TheoryConfig:
    dim: int = 4
    clients: int = 3
    eta: float = 0.0               # 0: 1/L' of the generated instance
    T_grid: list = field(default_factory=lambda: [10, 50, 100, 500])
    tau_max: int = 10
    upsilon: float = 0.1
    points: int = 100
    grid_resolution: int = 45


@dataclass
class ExperimentConfig:
    seed: int = 0
    model: ModelConfig = field(default_factory=ModelConfig)
    data: DataConfig = field(default_factory=DataConfig)
    clients: list = field(default_factory=list)
    schedule: ScheduleConfig = field(default_factory=ScheduleConfig)
    outputs: OutputsConfig = field(default_factory=OutputsConfig)
    sweep: SweepConfig = field(default_factory=SweepConfig)
    theory: TheoryConfig = field(default_factory=TheoryConfig)

    @property
    def num_envs(self):
        return len(self.data.corr)

    def with_overrides(self, seed=None, out=None, lam=None):
        cfg = self
        if seed is not None:
            cfg = replace(cfg, seed=int(seed))
        if out is not None:
            cfg = replace(cfg, outputs=replace(cfg.outputs, dir=str(out)))
        if lam is not None:
            cfg = replace(cfg, schedule=replace(cfg.schedule, lam=float(lam)))
        return cfg


# TOML key -> dataclass attribute where they differ
_RENAMES = {ScheduleConfig: {"lambda": "lam"}}


def _key_map(cls):
    toml_key = {attr: key for key, attr in _RENAMES.get(cls, {}).items()}
    return {toml_key.get(f.name, f.name): f for f in fields(cls)}


def _coerce(value, default, path, errors):
    """Check ``value`` against the type of ``default``; returns the coerced value."""
    if isinstance(default, bool):
        if isinstance(value, bool):
            return value
        errors.append(f"{path}: expected a boolean, got {type(value).__name__}")
    elif isinstance(default, int):
        if isinstance(value, int) and not isinstance(value, bool):
            return value
        errors.append(f"{path}: expected an integer, got {type(value).__name__}")
    elif isinstance(default, float):
        if isinstance(value, (int, float)) and not isinstance(value, bool):
            if not math.isfinite(value):
                errors.append(f"{path}: must be finite")
            return float(value)
        errors.append(f"{path}: expected a number, got {type(value).__name__}")
    elif isinstance(default, str):
        if isinstance(value, str):
            return value
        errors.append(f"{path}: expected a string, got {type(value).__name__}")
    elif isinstance(default, list):
        if isinstance(value, list) and all(isinstance(v, (int, float)) and not isinstance(v, bool)
                                           for v in value):
            return list(value)
        errors.append(f"{path}: expected a list of numbers")
    return default


def _build(cls, table, path, errors):
    if not isinstance(table, dict):
        errors.append(f"{path}: expected a table")
        return cls()
    keys = _key_map(cls)
    kwargs = {}
    for key, value in table.items():
        sub = f"{path}.{key}" if path else key
        f = keys.get(key)
        if f is None:
            errors.append(f"{sub}: unknown key")
            continue
        default = getattr(cls(), f.name)
        if cls is ExperimentConfig and f.name == "clients":
            if not isinstance(value, list):
                errors.append(f"{sub}: expected an array of tables")
                continue
            kwargs["clients"] = [_build(ClientConfig, c, f"clients[{i}]", errors)
                                 for i, c in enumerate(value)]
        elif hasattr(default, "__dataclass_fields__"):
            kwargs[f.name] = _build(type(default), value, sub, errors)
        else:
            kwargs[f.name] = _coerce(value, default, sub, errors)
    return cls(**kwargs)


def _int_list(values, path, errors):
    if any(float(v) != int(v) for v in values):
        errors.append(f"{path}: expected integers")


def validate(cfg):
    """Return the list of semantic violations (empty when valid)."""
    e = []
    m, d, s, th = cfg.model, cfg.data, cfg.schedule, cfg.theory
    if cfg.seed < 0:
        e.append("seed: must be >= 0")
    if m.arch not in ARCHS:
        e.append(f"model.arch: must be one of {ARCHS}")
    if m.loss and m.loss not in LOSSES:
        e.append(f"model.loss: must be one of {LOSSES}")
    _int_list(m.hidden, "model.hidden", e)
    if m.arch == "mlp" and not m.hidden:
        e.append("model.hidden: mlp needs at least one hidden layer")
    if m.arch != "mlp" and m.hidden:
        e.append(f"model.hidden: {m.arch} takes no hidden layers")
    if any(h < 1 for h in m.hidden):
        e.append("model.hidden: widths must be >= 1")
    if m.arch == "logistic" and m.loss == "squared":
        e.append("model.loss: logistic uses cross_entropy")
    if m.target_scale <= 0:
        e.append("model.target_scale: must be > 0")
    if m.init_scale < 0:
        e.append("model.init_scale: must be >= 0")

    if d.kind not in DATA_KINDS:
        e.append(f"data.kind: must be one of {DATA_KINDS}")
    if d.kind != "container" and not d.corr:
        e.append("data.corr: need at least one environment")
    if any(abs(c) > 1 for c in d.corr):
        e.append("data.corr: correlations must lie in [-1, 1]")
    if d.n_per_env < 1:
        e.append("data.n_per_env: must be >= 1")
    if not 0 < d.train_fraction <= 1:
        e.append("data.train_fraction: must lie in (0, 1]")
    if d.d_inv < 1 or d.d_spur < 1:
        e.append("data.d_inv/d_spur: must be >= 1")
    if d.inv_noise <= 0 or d.spur_noise < 0:
        e.append("data.inv_noise: must be > 0 and spur_noise >= 0")
    _int_list(d.rotation_plane, "data.rotation_plane", e)
    if len(d.rotation_plane) != 2 or len(set(d.rotation_plane)) != 2:
        e.append("data.rotation_plane: need two distinct column indices")
    if d.source not in IMAGE_SOURCES:
        e.append(f"data.source: must be one of {IMAGE_SOURCES}")
    if d.stain_mode not in STAIN_MODES:
        e.append(f"data.stain_mode: must be one of {STAIN_MODES}")
    if d.palette_size < 2:
        e.append("data.palette_size: must be >= 2")
    if d.block < 1 or d.image_size < 1 or d.image_size % d.block:
        e.append("data.block: must divide data.image_size")
    _int_list(d.color_map, "data.color_map", e)
    if not 0 <= d.label_noise < 1:
        e.append("data.label_noise: must lie in [0, 1)")
    if d.kind == "container" and not d.path:
        e.append("data.path: required for kind = 'container'")

    envs = range(cfg.num_envs) if d.kind != "container" else None
    if d.holdout_env != -1 and envs is not None and d.holdout_env not in envs:
        e.append(f"data.holdout_env: env {d.holdout_env} does not exist")
    if not cfg.clients:
        e.append("clients: need at least one client")
    seen = set()
    for i, c in enumerate(cfg.clients):
        p = f"clients[{i}]"
        if c.id in seen:
            e.append(f"{p}.id: duplicate id {c.id}")
        seen.add(c.id)
        if c.id < 0:
            e.append(f"{p}.id: must be >= 0")
        if envs is not None and c.env not in envs:
            e.append(f"{p}.env: env {c.env} does not exist")
        if c.env == d.holdout_env:
            e.append(f"{p}.env: env {c.env} is the holdout env")
        if c.behavior not in BEHAVIORS:
            e.append(f"{p}.behavior: must be one of {BEHAVIORS}")
        if c.period < 1:
            e.append(f"{p}.period: must be >= 1")
        if not 0 <= c.success_prob <= 1:
            e.append(f"{p}.success_prob: must lie in [0, 1]")
        if c.rotation_deg != 0 and d.kind != "synthetic":
            e.append(f"{p}.rotation_deg: client rotation needs synthetic data")

    if s.T < 0:
        e.append("schedule.T: must be >= 0")
    if not s.eta > 0:
        e.append("schedule.eta: must be > 0")
    if s.lam < 0:
        e.append("schedule.lambda: must be >= 0")
    if s.eval_every < 1:
        e.append("schedule.eval_every: must be >= 1")
    if s.checkpoint_every < 0:
        e.append("schedule.checkpoint_every: must be >= 0")
    if s.contribution_L < 0:
        e.append("schedule.contribution_L: must be >= 0")
    if s.pretrain.K < 1:
        e.append("schedule.pretrain.K: must be >= 1")
    if any(x < 0 for x in cfg.sweep.lambdas):
        e.append("sweep.lambdas: must be >= 0")
    if not cfg.outputs.dir:
        e.append("outputs.dir: must not be empty")
    if th.dim < 1 or th.clients < 1 or th.points < 1 or th.grid_resolution < 1 or th.tau_max < 0:
        e.append("theory: dim, clients, points, grid_resolution must be >= 1, tau_max >= 0")
    _int_list(th.T_grid, "theory.T_grid", e)
    if any(t < 1 for t in th.T_grid):
        e.append("theory.T_grid: entries must be >= 1")
    if th.upsilon < 0 or th.eta < 0:
        e.append("theory.upsilon/eta: must be >= 0")
    return e


def from_dict(raw):
    errors = []
    cfg = _build(ExperimentConfig, raw, "", errors)
    errors += validate(cfg)
    if errors:
        raise ConfigError(errors)
    cfg.model.hidden = [int(h) for h in cfg.model.hidden]
    cfg.data.rotation_plane = [int(v) for v in cfg.data.rotation_plane]
    cfg.data.color_map = [int(v) for v in cfg.data.color_map]
    cfg.data.corr = [float(v) for v in cfg.data.corr]
    cfg.sweep.lambdas = [float(v) for v in cfg.sweep.lambdas]
    cfg.theory.T_grid = [int(v) for v in cfg.theory.T_grid]
    return cfg


def parse_config(path):
    """Read, type-check and validate a TOML experiment file."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"{path}: {exc.strerror or exc}") from None
    try:
        raw = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    return from_dict(raw)


def to_dict(cfg):
    def conv(obj):
        out = {}
        for key, f in _key_map(type(obj)).items():
            v = getattr(obj, f.name)
            if isinstance(obj, ExperimentConfig) and f.name == "clients":
                v = [asdict(c) for c in v]
            elif hasattr(v, "__dataclass_fields__"):
                v = conv(v)
            out[key] = v
        return out
    return conv(cfg)


def dumps(cfg):
    return tomli_w.dumps(to_dict(cfg))
