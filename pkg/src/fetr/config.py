"""INI-style run configuration: ``[model]``, ``[train]`` and ``[data]`` sections.

Values resolve with precedence flag > file > default. Every key below has a
default, so an empty file (or no file) yields a complete configuration.
"""

from __future__ import annotations

from dataclasses import dataclass, fields
from pathlib import Path
from typing import Callable, Optional

from .backbone import NetworkSpec
from .errors import ConfigError, ParseError
from .training import TrainConfig


@dataclass(frozen=True)
class DataConfig:
    train_ratio: float = 0.8
    checkpoint_every: int = 1

    def __post_init__(self):
        if not 0.0 < self.train_ratio < 1.0:
            raise ConfigError(f"train_ratio must lie in (0, 1), got {self.train_ratio}")
        if self.checkpoint_every < 1:
            raise ConfigError("checkpoint_every must be >= 1")


def _bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"expected a boolean, got {text!r}")


def _int_list(text: str) -> tuple:
    parts = [p for p in text.replace(" ", "").split(",") if p]
    return tuple(int(p) for p in parts)


def _size(text: str) -> tuple:
    vals = _int_list(text.lower().replace("x", ","))
    if len(vals) == 1:
        return (vals[0], vals[0])
    if len(vals) != 2:
        raise ValueError(f"expected N or H,W, got {text!r}")
    return vals


@dataclass(frozen=True)
class Key:
    section: str
    name: str  # key as written in the file / flag suffix
    target: str  # field on the section's dataclass
    parse: Callable
    help: str = ""


KEYS = (
    Key("model", "width", "base_width", int, "channels of the first stage"),
    Key("model", "depths", "stage_depths", _int_list, "blocks per stage, e.g. 1,1,1,1"),
    Key("model", "input_size", "input_size", _size, "input side (N or H,W)"),
    Key("model", "dca_stages", "dca_stages", _int_list, "stages that carry DCA"),
    Key("model", "se_reduction", "se_reduction", int, "SE bottleneck ratio"),
    Key("model", "style_rm", "style_rm", _bool, "StyleRM in basic blocks"),
    Key("model", "dca_passes", "dca_passes", int, "criss-cross passes per DCA"),
    Key("model", "dca_kernel", "dca_kernel", int, "DCA projection kernel size"),
    Key("model", "strides", "stage_strides", _int_list, "per-stage strides"),
    Key("model", "dtype", "dtype", str, "float32 or float64"),
    Key("train", "epochs", "epochs", int),
    Key("train", "batch_size", "batch_size", int),
    Key("train", "optimizer", "optimizer", str, "adam or sgd"),
    Key("train", "lr", "lr", float, "peak learning rate"),
    Key("train", "weight_decay", "weight_decay", float),
    Key("train", "warmup_epochs", "warmup_epochs", int),
    Key("train", "lr_schedule", "lr_schedule", str),
    Key("train", "momentum", "momentum", float, "SGD momentum"),
    Key("train", "seed", "seed", int, "seed for init, shuffling, augmentation and the split"),
    Key("train", "augment", "augment", _bool, "crop/flip augmentation"),
    Key("train", "random_crop", "random_crop", _bool),
    Key("train", "hflip", "hflip", _bool),
    Key("train", "crop_scale_min", "crop_scale_min", float),
    Key("train", "eval_crop_ratio", "eval_crop_ratio", float),
    Key("data", "train_ratio", "train_ratio", float, "fraction of each class used for training"),
    Key("data", "checkpoint_every", "checkpoint_every", int, "write last.fetr every N epochs"),
)
SECTIONS = ("model", "train", "data")
_BY_SECTION = {(k.section, k.name): k for k in KEYS}


def read_config_text(text: str) -> dict:
    """Parse INI text into ``{(section, key): parsed value}``; errors carry the line number."""
    values = {}
    section = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("["):
            if not line.endswith("]"):
                raise ParseError(f"malformed section header {raw.strip()!r}", lineno)
            section = line[1:-1].strip()
            if section not in SECTIONS:
                raise ParseError(f"unknown section [{section}]", lineno)
            continue
        if "=" not in line:
            raise ParseError(f"expected 'key = value', got {raw.strip()!r}", lineno)
        if section is None:
            raise ParseError("key outside of any section", lineno)
        name, value = (s.strip() for s in line.split("=", 1))
        key = _BY_SECTION.get((section, name))
        if key is None:
            raise ParseError(f"unknown key {name!r} in [{section}]", lineno)
        if (section, name) in values:
            raise ParseError(f"duplicate key {name!r} in [{section}]", lineno)
        try:
            values[(section, name)] = key.parse(value)
        except ValueError:
            raise ParseError(f"invalid value {value!r} for {name}", lineno) from None
    return values


def parse_config(path=None, overrides: Optional[dict] = None, num_classes: Optional[int] = None, base: Optional[dict] = None):
    """Build ``(NetworkSpec, TrainConfig, DataConfig)``.

    ``overrides`` maps ``(section, key)`` to already-parsed values and wins over
    the file. ``num_classes`` is not a file key; it comes from the dataset.
    ``base`` replaces the built-in defaults per section (``{"train": {...}}``),
    which is how a resumed run inherits the configuration it was started with.
    """
    values = {}
    if path is not None:
        try:
            text = Path(path).read_text(encoding="utf-8")
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
        values.update(read_config_text(text))
    for sk, v in (overrides or {}).items():
        if sk not in _BY_SECTION:
            raise ConfigError(f"unknown override {sk}")
        if v is not None:
            values[sk] = v
    kwargs = {s: dict((base or {}).get(s, {})) for s in SECTIONS}
    for (section, name), v in values.items():
        kwargs[section][_BY_SECTION[(section, name)].target] = v
    if num_classes is not None:
        kwargs["model"]["num_classes"] = num_classes
    try:
        return NetworkSpec(**kwargs["model"]), TrainConfig(**kwargs["train"]), DataConfig(**kwargs["data"])
    except TypeError as exc:  # should not happen: keys are validated above
        raise ConfigError(str(exc)) from None


def default_for(key: Key):
    cls = {"model": NetworkSpec, "train": TrainConfig, "data": DataConfig}[key.section]
    return next(f.default for f in fields(cls) if f.name == key.target)
