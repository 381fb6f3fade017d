"""Experiment configuration: dataclass sections parsed from flat ``section.key = value`` text.

Lists are comma separated; ``none`` stands for an unset optional value.
Unknown keys are an error.
"""

import dataclasses
import typing
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional


class ConfigError(ValueError):
    pass


TABLE1_SBM = (0.41, 0.42, 0.43, 0.43, 0.56, 0.71)
TABLE1_SBM_FRACTION = (0.96, 0.96, 0.92, 0.89, 0.77, 0.66)
TABLE1_GEOMETRIC = (0.37, 0.38, 0.41, 0.54, 0.66, 0.75)
TABLE1_GEOMETRIC_FRACTION = (0.90, 0.87, 0.87, 0.70, 0.58, 0.53)

REAL_DATA_C_GRID = (0.45, 0.60, 0.80, 1.00, 1.25, 1.50)
SYNTHETIC_C_GRID = tuple(round(2 ** (i / 4), 4) for i in range(17))  # 1 .. 16


@dataclass
class DatasetConfig:
    families: tuple = ("sbm", "geometric")
    feature_dim: int = 20
    center_scale: float = 1.0
    noise_std: float = 1.0
    test_fraction: float = 0.4


@dataclass
class SbmConfig:
    block_sizes: tuple = (80, 80, 80, 80)
    p_in: float = 0.20
    p_out: float = 0.05
    weight_low: float = 0.5
    weight_high: float = 1.5
    targets: tuple = TABLE1_SBM


@dataclass
class GeometricConfig:
    n_per_class: int = 80
    num_classes: int = 4
    feat_dim: int = 20
    k: int = 30
    center_scale: float = 1.0
    noise_std: float = 1.0
    targets: tuple = TABLE1_GEOMETRIC


@dataclass
class SparsifierConfig:
    mode: str = "exact"
    rank: int = 16
    c_grid: tuple = SYNTHETIC_C_GRID
    probe_draws: int = 5
    draws_per_level: int = 5
    probes: int = 500


@dataclass
class ModelConfig:
    filter: tuple = (1.0, -0.6, 0.15)
    widths: tuple = (32, 16)
    activations: tuple = ("identity", "identity")
    init_scale: float = 1.0


@dataclass
class TrainingConfig:
    epochs: int = 100
    lr_one_layer: float = 0.01
    lr_two_layer: float = 0.003
    hidden: int = 32
    activation: str = "tanh"
    weight_decay: float = 1e-3
    grad_clip_norm: Optional[float] = 5.0
    init_scale: float = 1.0
    targets_sbm: tuple = (0.35, 0.45, 0.55, 0.65, 0.75)
    targets_geometric: tuple = (0.35, 0.45, 0.55, 0.65, 0.75)


@dataclass
class GeometryConfig:
    k: int = 20
    subset_cap: int = 500
    hidden_sbm: int = 48
    hidden_geometric: int = 32
    activation: str = "tanh"
    epochs: int = 120
    lr: float = 0.01
    weight_decay: float = 5e-4
    grad_clip_norm: Optional[float] = 5.0


@dataclass
class ExperimentConfig:
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    sbm: SbmConfig = field(default_factory=SbmConfig)
    geometric: GeometricConfig = field(default_factory=GeometricConfig)
    sparsifier: SparsifierConfig = field(default_factory=SparsifierConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    training: TrainingConfig = field(default_factory=TrainingConfig)
    geometry: GeometryConfig = field(default_factory=GeometryConfig)
    master_seed: int = 0
    jobs: int = 1

    def targets_for(self, family: str) -> tuple:
        return self.sbm.targets if family == "sbm" else self.geometric.targets


SECTIONS = [f.name for f in dataclasses.fields(ExperimentConfig) if dataclasses.is_dataclass(f.default_factory)]


def _coerce(text: str, default, hint):
    text = text.strip()
    if isinstance(default, tuple):
        elem = default[0].__class__ if default else str
        return tuple(_scalar(p, elem) for p in text.split(",") if p.strip())
    if hint is not None and typing.get_origin(hint) is typing.Union:
        if text.lower() == "none":
            return None
        inner = [a for a in typing.get_args(hint) if a is not type(None)][0]
        return _scalar(text, inner)
    return _scalar(text, type(default))


def _scalar(text: str, kind):
    text = text.strip()
    if kind is bool:
        if text.lower() in ("true", "1", "yes"):
            return True
        if text.lower() in ("false", "0", "no"):
            return False
        raise ConfigError(f"not a boolean: {text!r}")
    try:
        return kind(text)
    except ValueError:
        raise ConfigError(f"cannot parse {text!r} as {kind.__name__}") from None


def _render(value) -> str:
    if value is None:
        return "none"
    if isinstance(value, tuple):
        return ",".join(_render(v) for v in value)
    if isinstance(value, float):
        return repr(value)  # shortest round-trip form
    return str(value)


def loads(text: str, base: Optional[ExperimentConfig] = None) -> ExperimentConfig:
    cfg = dataclasses.replace(base) if base is not None else ExperimentConfig()
    cfg = _deepcopy(cfg)
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key = key.strip()
        try:
            set_value(cfg, key, value)
        except ConfigError as exc:
            raise ConfigError(f"line {lineno}: {exc}") from None
    validate(cfg)
    return cfg


def set_value(cfg: ExperimentConfig, key: str, value: str) -> None:
    parts = key.split(".")
    if len(parts) == 1:
        if parts[0] not in ("master_seed", "jobs"):
            raise ConfigError(f"unknown key {key!r}")
        setattr(cfg, parts[0], _scalar(value, int))
        return
    if len(parts) != 2 or parts[0] not in SECTIONS:
        raise ConfigError(f"unknown key {key!r}")
    section = getattr(cfg, parts[0])
    hints = typing.get_type_hints(type(section))
    if parts[1] not in hints:
        raise ConfigError(f"unknown key {key!r}")
    default = getattr(type(section)(), parts[1])
    setattr(section, parts[1], _coerce(value, default, hints[parts[1]]))


def dumps(cfg: ExperimentConfig, *, include_jobs: bool = True) -> str:
    """Render ``cfg`` so that ``loads(dumps(cfg))`` reproduces it.

    ``include_jobs=False`` drops the parallelism setting, which never
    changes results; run manifests use that form.
    """
    lines = [f"master_seed = {cfg.master_seed}"]
    if include_jobs:
        lines.append(f"jobs = {cfg.jobs}")
    for name in SECTIONS:
        section = getattr(cfg, name)
        for f in dataclasses.fields(section):
            lines.append(f"{name}.{f.name} = {_render(getattr(section, f.name))}")
    return "\n".join(lines) + "\n"


def as_dict(cfg: ExperimentConfig) -> dict:
    return dataclasses.asdict(cfg)


def _deepcopy(cfg: ExperimentConfig) -> ExperimentConfig:
    return ExperimentConfig(
        **{name: dataclasses.replace(getattr(cfg, name)) for name in SECTIONS},
        master_seed=cfg.master_seed,
        jobs=cfg.jobs,
    )


def validate(cfg: ExperimentConfig) -> None:
    for fam in cfg.dataset.families:
        if fam not in ("sbm", "geometric"):
            raise ConfigError(f"unknown dataset family {fam!r}")
    if cfg.sparsifier.mode not in ("exact", "truncated"):
        raise ConfigError(f"unknown sparsifier mode {cfg.sparsifier.mode!r}")
    if not cfg.sparsifier.c_grid or min(cfg.sparsifier.c_grid) <= 0:
        raise ConfigError("sparsifier.c_grid must hold positive multipliers")
    if cfg.sparsifier.draws_per_level < 1 or cfg.sparsifier.probe_draws < 1:
        raise ConfigError("draw counts must be positive")
    if len(cfg.model.widths) != len(cfg.model.activations):
        raise ConfigError("model.widths and model.activations differ in length")
    if not 0 < cfg.dataset.test_fraction <= 1:
        raise ConfigError("dataset.test_fraction must lie in (0, 1]")
    for p in (cfg.sbm.p_in, cfg.sbm.p_out):
        if not 0 < p <= 1:
            raise ConfigError("sbm edge probabilities must lie in (0, 1]")
    if cfg.sbm.weight_low <= 0 or cfg.sbm.weight_high < cfg.sbm.weight_low:
        raise ConfigError("sbm weights need 0 < weight_low <= weight_high")
    if cfg.jobs < 1:
        raise ConfigError("jobs must be >= 1")


def load(path) -> ExperimentConfig:
    return loads(Path(path).read_text(encoding="utf-8"))
