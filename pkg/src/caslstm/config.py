"""Run configuration: a flat ``key = value`` file with dotted keys.

Example::

    # two-layer CAS encoder on the majority task
    encoder.num_layers = 2
    encoder.cell_kind = cas
    model.features = single
    train.epochs = 20
    data.train = train.tsv
    seed = 3
"""

import dataclasses
import hashlib
import typing
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from .encoder import EncoderConfig
from .training import TrainConfig


class ConfigError(ValueError):
    pass


@dataclass
class ModelOptions:
    features: str = "single"
    hidden_dim: int = 64
    hidden_layers: int = 1


@dataclass
class DataOptions:
    train: Optional[str] = None
    dev: Optional[str] = None
    test: Optional[str] = None
    embeddings: Optional[str] = None
    embeddings_trainable: bool = False


@dataclass
class GradcheckOptions:
    dim: int = 4
    length: int = 5
    hidden_dim: int = 6
    eps: float = 1e-5
    tolerance: float = 1e-4


@dataclass
class AnalysisOptions:
    bins: int = 20
    # 0 analyzes every sentence of the data file
    max_sentences: int = 0


# top-level keys owned by RunConfig rather than a section
_TRAIN_SHARED = ("seed", "precision")

SECTIONS = {
    "encoder": EncoderConfig,
    "train": TrainConfig,
    "model": ModelOptions,
    "data": DataOptions,
    "gradcheck": GradcheckOptions,
    "analysis": AnalysisOptions,
}


def _section_fields(name):
    hints = typing.get_type_hints(SECTIONS[name])
    return {f.name: hints[f.name] for f in dataclasses.fields(SECTIONS[name])
            if not (name == "train" and f.name in _TRAIN_SHARED)}


def _parse_value(key, text, kind):
    text = text.strip()
    optional = typing.get_origin(kind) is typing.Union and type(None) in typing.get_args(kind)
    if optional:
        if text.lower() in ("", "none", "null"):
            return None
        kind = next(a for a in typing.get_args(kind) if a is not type(None))
    try:
        if kind is bool:
            low = text.lower()
            if low in ("true", "yes", "1", "on"):
                return True
            if low in ("false", "no", "0", "off"):
                return False
            raise ValueError(text)
        if kind is int:
            return int(text)
        if kind is float:
            return float(text)
        return text
    except ValueError:
        raise ConfigError(f"{key}: cannot read {text!r} as {kind.__name__}") from None


def _format_value(v):
    if v is None:
        return "none"
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)


@dataclass
class RunConfig:
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    model: ModelOptions = field(default_factory=ModelOptions)
    data: DataOptions = field(default_factory=DataOptions)
    gradcheck: GradcheckOptions = field(default_factory=GradcheckOptions)
    analysis: AnalysisOptions = field(default_factory=AnalysisOptions)
    seed: int = 1
    precision: int = 32
    out: str = "run"

    def __post_init__(self):
        if self.precision not in (32, 64):
            raise ConfigError(f"precision must be 32 or 64, got {self.precision}")
        self.train.seed = self.seed
        self.train.precision = self.precision

    @classmethod
    def from_pairs(cls, pairs):
        """Build from ``(key, text)`` pairs; later keys win."""
        sections = {name: {} for name in SECTIONS}
        top = {}
        for key, text in pairs:
            if "." in key:
                section, name = key.split(".", 1)
                if section not in SECTIONS or name not in _section_fields(section):
                    raise ConfigError(f"unknown config key {key!r}")
                sections[section][name] = _parse_value(key, text, _section_fields(section)[name])
            elif key in ("seed", "precision"):
                top[key] = _parse_value(key, text, int)
            elif key == "out":
                top[key] = text.strip()
            else:
                raise ConfigError(f"unknown config key {key!r}")
        try:
            built = {name: SECTIONS[name](**values) for name, values in sections.items()}
            return cls(**built, **top)
        except (TypeError, ValueError) as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(str(exc)) from None

    def items(self):
        """Every key with its resolved value, in a fixed order."""
        out = []
        for name in SECTIONS:
            section = getattr(self, name)
            for key in _section_fields(name):
                out.append((f"{name}.{key}", getattr(section, key)))
        out += [("seed", self.seed), ("precision", self.precision), ("out", self.out)]
        return out

    def to_text(self, include_out=True):
        return "".join(f"{k} = {_format_value(v)}\n" for k, v in self.items()
                       if include_out or k != "out")

    def digest(self):
        return hashlib.sha256(self.to_text().encode("utf-8")).digest()

    @classmethod
    def from_text(cls, text, overrides=(), source="<config>"):
        return cls.from_pairs(list(parse_lines(text, source)) + list(overrides))

    @classmethod
    def load(cls, path=None, overrides=()):
        text = "" if path is None else Path(path).read_text(encoding="utf-8")
        return cls.from_text(text, overrides, source=str(path))


def parse_lines(text, source="<config>"):
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value'")
        key, value = line.split("=", 1)
        yield key.strip(), value.strip()


def parse_override(text):
    if "=" not in text:
        raise ConfigError(f"override {text!r} must look like key=value")
    key, value = text.split("=", 1)
    return key.strip(), value.strip()
