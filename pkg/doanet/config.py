"""
Experiment configuration (INI file).

Sections and the dataclass each one fills:

    [dataset]   DatasetConfig
    [features]  FeatureConfig
    [music]     MusicConfig
    [network]   NetworkConfig
    [training]  TrainConfig
    [paths]     PathsConfig

Values are resolved as: dataclass defaults -> scale preset (desk | paper)
-> file values -> command-line overrides. Unknown sections and keys are
errors. Tuples are written as comma-separated lists.
"""

from __future__ import annotations

import configparser
import dataclasses
import io
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping, Optional, get_type_hints

from doanet.errors import MissingInputError, ValidationError
from doanet.features import SEQUENCE_LENGTH
from doanet.geometry import DEFAULT_RESOLUTION
from doanet.network import NetworkConfig
from doanet.room import ROOM_PRESETS
from doanet.subspace import DEFAULT_HALF_WINDOW
from doanet.training import TrainConfig

SCALES = ("desk", "paper")
CONTEXTS = ("anechoic", "reverberant")


@dataclass(frozen=True)
class DatasetConfig:
    contexts: tuple[str, ...] = CONTEXTS
    overlaps: tuple[int, ...] = (1, 2, 3)
    splits: tuple[int, ...] = (1,)
    train_recordings: int = 24
    test_recordings: int = 6
    recording_length: float = 30.0
    examples_per_class: int = 20
    test_examples_per_class: int = 4
    train_room: int = 1
    test_rooms: tuple[int, ...] = (1, 2, 3)
    max_distance: float = 10.0
    seed: int = 0

    def validate(self) -> None:
        for ctx in self.contexts:
            if ctx not in CONTEXTS:
                raise ValidationError(f"dataset.contexts: unknown context {ctx!r}")
        for o in self.overlaps:
            if o not in (1, 2, 3):
                raise ValidationError(f"dataset.overlaps: {o} is not 1, 2 or 3")
        for r in (self.train_room, *self.test_rooms):
            if r not in ROOM_PRESETS:
                raise ValidationError(f"dataset: unknown room {r}; choose from {sorted(ROOM_PRESETS)}")
        if self.train_recordings < 1 or self.test_recordings < 1:
            raise ValidationError("dataset.train_recordings and dataset.test_recordings must be >= 1")
        if not self.splits or any(s < 1 for s in self.splits):
            raise ValidationError(f"dataset.splits must be positive integers, got {self.splits}")
        if self.recording_length <= 0:
            raise ValidationError(f"dataset.recording_length must be > 0, got {self.recording_length}")
        if not 0 < self.test_examples_per_class < self.examples_per_class:
            raise ValidationError(
                "dataset.test_examples_per_class must be in [1, examples_per_class)"
            )
        if self.max_distance <= 1.0:
            raise ValidationError(f"dataset.max_distance must be > 1 m, got {self.max_distance}")


@dataclass(frozen=True)
class FeatureConfig:
    sequence_length: int = SEQUENCE_LENGTH

    def validate(self) -> None:
        if self.sequence_length < 1:
            raise ValidationError(f"features.sequence_length must be >= 1, got {self.sequence_length}")


@dataclass(frozen=True)
class MusicConfig:
    half_window: int = DEFAULT_HALF_WINDOW
    resolution_deg: float = DEFAULT_RESOLUTION

    def validate(self) -> None:
        if self.half_window < 0:
            raise ValidationError(f"music.half_window must be >= 0, got {self.half_window}")
        if self.resolution_deg != DEFAULT_RESOLUTION:
            raise ValidationError("music.resolution_deg other than 10 does not match the network grids")


@dataclass(frozen=True)
class PathsConfig:
    data_dir: str = "data"
    work_dir: str = "work"
    results_dir: str = "results"
    corpus_dir: str = ""

    def validate(self) -> None:
        for name in ("data_dir", "work_dir", "results_dir"):
            if not getattr(self, name):
                raise ValidationError(f"paths.{name} must not be empty")
        if self.corpus_dir and not Path(self.corpus_dir).is_dir():
            raise MissingInputError(f"paths.corpus_dir does not exist: {self.corpus_dir}")


@dataclass(frozen=True)
class ExperimentConfig:
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    features: FeatureConfig = field(default_factory=FeatureConfig)
    music: MusicConfig = field(default_factory=MusicConfig)
    network: NetworkConfig = field(default_factory=NetworkConfig)
    training: TrainConfig = field(default_factory=TrainConfig)
    paths: PathsConfig = field(default_factory=PathsConfig)
    scale: str = "desk"
    workers: int = 1

    def validate(self) -> None:
        if self.scale not in SCALES:
            raise ValidationError(f"Unknown scale {self.scale!r}; choose from {SCALES}")
        if self.workers < 1:
            raise ValidationError(f"--workers must be >= 1, got {self.workers}")
        for name in SECTIONS:
            getattr(self, name).validate()
        if self.features.sequence_length != self.network.sequence_length:
            raise ValidationError(
                f"features.sequence_length ({self.features.sequence_length}) differs from "
                f"network.sequence_length ({self.network.sequence_length})"
            )


SECTIONS: dict[str, type] = {
    "dataset": DatasetConfig,
    "features": FeatureConfig,
    "music": MusicConfig,
    "network": NetworkConfig,
    "training": TrainConfig,
    "paths": PathsConfig,
}

SCALE_PRESETS: dict[str, dict[str, dict[str, Any]]] = {
    "desk": {
        "dataset": {
            "train_recordings": 24,
            "test_recordings": 6,
            "splits": (1,),
            "examples_per_class": 20,
            "test_examples_per_class": 4,
        },
        "training": {"max_epochs": 100, "patience": 20},
    },
    "paper": {
        "dataset": {
            "train_recordings": 240,
            "test_recordings": 60,
            "splits": (1, 2, 3),
            "examples_per_class": 20,
            "test_examples_per_class": 4,
        },
        "training": {"max_epochs": 1000, "patience": 100},
    },
}


# ---------------------------------------------------------------------------
# Value parsing
# ---------------------------------------------------------------------------

_TRUE = {"1", "yes", "true", "on"}
_FALSE = {"0", "no", "false", "off"}


def _parse_value(section: str, key: str, raw: str, hint: Any) -> Any:
    text = raw.strip()
    try:
        if hint is bool:
            low = text.lower()
            if low in _TRUE:
                return True
            if low in _FALSE:
                return False
            raise ValueError(text)
        if hint is int:
            return int(text)
        if hint is float:
            return float(text)
        if hint is str:
            return text
        if getattr(hint, "__origin__", None) is tuple:
            item_type = hint.__args__[0]
            items = [p.strip() for p in text.split(",") if p.strip()]
            return tuple(item_type(p) for p in items)
    except ValueError:
        raise ValidationError(f"[{section}] {key} = {raw!r} is not a valid {getattr(hint, '__name__', hint)}") from None
    raise ValidationError(f"[{section}] {key}: unsupported type {hint!r}")


def _format_value(value: Any) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ", ".join(str(v) for v in value)
    return str(value)


def _apply(section: str, block: Any, values: Mapping[str, Any]) -> Any:
    cls = type(block)
    hints = get_type_hints(cls)
    updates: dict[str, Any] = {}
    for key, value in values.items():
        if key not in hints:
            raise ValidationError(f"Unknown key {key!r} in section [{section}]")
        updates[key] = _parse_value(section, key, value, hints[key]) if isinstance(value, str) else value
    return dataclasses.replace(block, **updates)


# ---------------------------------------------------------------------------
# Load / write
# ---------------------------------------------------------------------------


def load_config(
    path: Optional[str | Path] = None,
    scale: Optional[str] = None,
    overrides: Optional[Mapping[str, Mapping[str, Any]]] = None,
    workers: int = 1,
) -> ExperimentConfig:
    """
    Resolve an ExperimentConfig and validate every block.

    `scale` selects the size preset (desk when None). `overrides` map
    section -> key -> value (strings are parsed like file values).
    """
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str  # type: ignore[assignment,method-assign]
    if path is not None:
        p = Path(path)
        if not p.exists():
            raise MissingInputError(f"Config file not found: {p}")
        try:
            parser.read_string(p.read_text(encoding="utf-8"), source=str(p))
        except configparser.Error as exc:
            raise ValidationError(f"Cannot parse {p}: {exc}") from None

    for section in parser.sections():
        if section not in SECTIONS:
            raise ValidationError(f"Unknown config section [{section}]; expected one of {sorted(SECTIONS)}")

    chosen = scale or "desk"
    if chosen not in SCALES:
        raise ValidationError(f"Unknown scale {chosen!r}; choose from {SCALES}")

    blocks: dict[str, Any] = {name: cls() for name, cls in SECTIONS.items()}
    for name, values in SCALE_PRESETS[chosen].items():
        blocks[name] = _apply(name, blocks[name], values)
    for section in parser.sections():
        blocks[section] = _apply(section, blocks[section], dict(parser[section]))
    for section, values in (overrides or {}).items():
        if section not in SECTIONS:
            raise ValidationError(f"Unknown override section {section!r}")
        blocks[section] = _apply(section, blocks[section], values)

    cfg = ExperimentConfig(scale=chosen, workers=workers, **blocks)
    cfg.validate()
    return cfg


def config_to_ini(cfg: ExperimentConfig) -> str:
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str  # type: ignore[assignment,method-assign]
    for name in SECTIONS:
        block = getattr(cfg, name)
        parser[name] = {f.name: _format_value(getattr(block, f.name)) for f in dataclasses.fields(block)}
    buf = io.StringIO()
    buf.write(f"# scale = {cfg.scale}\n")
    parser.write(buf)
    return buf.getvalue()


def write_config(path: str | Path, cfg: ExperimentConfig) -> Path:
    out = Path(path)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(config_to_ini(cfg), encoding="utf-8")
    return out
