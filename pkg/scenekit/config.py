"""Experiment configuration files.

A configuration is UTF-8 text with one `key = value` setting per line
and `#` comments. Keys are dotted: `sampler.eta`, `train.learning_rate`,
`retrieval.k`, ... Lists are comma-separated. Every key has a default,
so a file only needs the settings it changes.

Per-section seeds are not configurable on their own: they all follow
the top-level `seed`.
"""
from dataclasses import dataclass, fields, replace
import os
from pathlib import Path
from typing import get_type_hints

from .convnet import NetworkSpec, TrainConfig
from .exceptions import ConfigError
from .metric import MetricLossConfig
from .sampling import SamplingConfig
from .synth import desk_config, imbalanced_config
from .transfer import RetrievalConfig

HEADER = "# scenekit experiment configuration"

parse_modes = ("local", "global", "integrated")


@dataclass(frozen=True)
class DataPaths:
    """Split manifests, relative to the output directory unless absolute."""

    train: str = "data/train/split.txt"
    test: str = "data/test/split.txt"


@dataclass(frozen=True)
class SynthSettings:
    preset: str = "desk"
    train_per_scene: int = 6
    test_per_scene: int = 3
    size: int = 64

    def __post_init__(self):
        if self.preset not in ("desk", "imbalanced"):
            raise ConfigError(f"Unknown synthetic preset '{self.preset}' (expected desk or imbalanced)")
        if self.train_per_scene < 1 or self.test_per_scene < 1:
            raise ConfigError("Every scene needs at least one training and one test image")

    def config(self, role: str):
        count = self.train_per_scene if role == "train" else self.test_per_scene
        if self.preset == "desk":
            return desk_config(count, role, self.size)
        return imbalanced_config(count, role)


@dataclass(frozen=True)
class NetworkSettings:
    preset: str = "desk"
    input_side: int = 17
    feature_width: int = 16
    filters: tuple = (8, 16, 16)

    def __post_init__(self):
        object.__setattr__(self, "filters", tuple(int(f) for f in self.filters))
        if self.preset not in ("desk", "full"):
            raise ConfigError(f"Unknown network preset '{self.preset}' (expected desk or full)")

    def spec(self, num_classes: int) -> NetworkSpec:
        if self.preset == "full":
            return NetworkSpec.full_scale(num_classes)
        return NetworkSpec.desk(num_classes, self.input_side, self.filters, self.feature_width)


@dataclass(frozen=True)
class EnsembleSettings:
    """`strategies` may repeat a strategy; `asymmetric` weighs the loss by
    inverse class frequency."""

    strategies: tuple = ("gs", "cs", "hs", "tcs")
    asymmetric: bool = False

    def __post_init__(self):
        object.__setattr__(self, "strategies", tuple(str(s) for s in self.strategies))
        for strategy in self.strategies:
            SamplingConfig(strategy=strategy)
        if not self.strategies:
            raise ConfigError("An ensemble needs at least one strategy")


@dataclass(frozen=True)
class ParseSettings:
    mode: str = "integrated"

    def __post_init__(self):
        if self.mode not in parse_modes:
            raise ConfigError(f"Unknown labeling mode '{self.mode}' (expected one of {', '.join(parse_modes)})")


# Fields derived from elsewhere, never written to or read from a file.
_DERIVED = {("sampler", "seed"), ("train", "seed"), ("train", "class_weights"), ("metric", "seed")}


@dataclass(frozen=True)
class ExperimentConfig:
    """
    Every setting of an experiment.

    Parameters
    ----------
    seed : int, optional
        Master seed; the sampler, classifier and metric seeds follow it.
    out : str, optional
        Output directory of every stage (default is ".").
    data, synth, sampler, network, train, ensemble, retrieval, metric, parse
        The per-stage sections.
    """

    seed: int = 0
    out: str = "."
    data: DataPaths = DataPaths()
    synth: SynthSettings = SynthSettings()
    sampler: SamplingConfig = SamplingConfig()
    network: NetworkSettings = NetworkSettings()
    train: TrainConfig = TrainConfig()
    ensemble: EnsembleSettings = EnsembleSettings()
    retrieval: RetrievalConfig = RetrievalConfig()
    metric: MetricLossConfig = MetricLossConfig()
    parse: ParseSettings = ParseSettings()

    def __post_init__(self):
        if self.seed < 0:
            raise ConfigError(f"The seed must be nonnegative, got {self.seed}")
        object.__setattr__(self, "sampler", replace(self.sampler, seed=self.seed))
        object.__setattr__(self, "train", replace(self.train, seed=self.seed, class_weights=()))
        object.__setattr__(self, "metric", replace(self.metric, seed=self.seed))

    def path(self, relative) -> Path:
        relative = Path(relative)
        return relative if relative.is_absolute() else Path(self.out) / relative

    @property
    def train_split(self) -> Path:
        return self.path(self.data.train)

    @property
    def test_split(self) -> Path:
        return self.path(self.data.test)


_SECTIONS = [f.name for f in fields(ExperimentConfig) if f.name not in ("seed", "out")]
_TOP_LEVEL = {"seed": int, "out": str}


def _section_fields(section: str, value):
    hints = get_type_hints(type(value))
    for f in fields(value):
        if (section, f.name) not in _DERIVED:
            yield f.name, hints[f.name], getattr(value, f.name)


def _format(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, tuple):
        return ",".join(_format(v) for v in value)
    return str(value)


def _convert(text: str, kind, default):
    if kind is bool:
        lowered = text.lower()
        if lowered not in ("true", "false"):
            raise ValueError(f"expected true or false, got '{text}'")
        return lowered == "true"
    if kind is tuple:
        element = type(default[0]) if default else str
        return tuple(_convert(part.strip(), element, None) for part in text.split(",") if part.strip())
    if kind is int:
        return int(text)
    if kind is float:
        return float(text)
    return text


def serialize_config(config: ExperimentConfig) -> str:
    """Every setting, one per line, in a fixed order."""
    lines = [HEADER]
    for name in _TOP_LEVEL:
        lines.append(f"{name} = {_format(getattr(config, name))}")
    for section in _SECTIONS:
        lines.append("")
        for name, _, value in _section_fields(section, getattr(config, section)):
            lines.append(f"{section}.{name} = {_format(value)}")
    return "\n".join(lines) + "\n"


def parse_config(text: str, source = "<config>", base: ExperimentConfig = ExperimentConfig()) -> ExperimentConfig:
    """Read settings over `base` (default is all defaults)."""
    top = {}
    sections = {section: {} for section in _SECTIONS}
    where = {}
    for number, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if not sep or not key:
            raise ConfigError(f"{source}, line {number}: expected 'key = value', got '{raw.strip()}'")
        where[key] = number
        section, dot, name = key.partition(".")
        try:
            if not dot and key in _TOP_LEVEL:
                top[key] = _convert(value, _TOP_LEVEL[key], None)
                continue
            known = {n: (kind, default) for n, kind, default in _section_fields(section, getattr(base, section))} \
                if section in sections else {}
            if name not in known:
                raise ConfigError(f"{source}, line {number}: unknown key '{key}'")
            kind, default = known[name]
            sections[section][name] = _convert(value, kind, default)
        except (ValueError, TypeError) as e:
            if isinstance(e, ConfigError):
                raise
            raise ConfigError(f"{source}, line {number}: invalid value for '{key}' ({e})") from None

    values = dict(top)
    for section, overrides in sections.items():
        try:
            values[section] = replace(getattr(base, section), **overrides)
        except ConfigError as e:
            lines = ", ".join(str(where[f"{section}.{name}"]) for name in overrides)
            raise ConfigError(f"{source}, line {lines}: {e}") from None
    return replace(base, **values)


def load_config(path) -> ExperimentConfig:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except UnicodeDecodeError:
        raise ConfigError(f"{path}: configuration is not UTF-8 text") from None
    return parse_config(text, os.fspath(path))


def save_config(config: ExperimentConfig, path):
    Path(path).write_text(serialize_config(config), encoding="utf-8")
