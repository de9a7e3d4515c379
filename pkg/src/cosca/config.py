"""Experiment configuration files.

A config is an INI file with three sections::

    [dataset]
    generator = moons
    n_per_domain = 1000
    rotation_deg = 35.0

    [train]
    variant = cosca
    lambda1 = 0.1

    [output]
    directory = runs/cosca

Every key is optional (defaults apply) but unknown sections or keys are
rejected. ``dumps`` writes the canonical form: all sections and keys, in
declaration order, so that ``dumps(loads(text))`` is stable.
"""
from __future__ import annotations

import configparser
import os
from dataclasses import dataclass, field, fields

from .trainer import TrainConfig


class ConfigError(ValueError):
    pass


@dataclass
class DatasetConfig:
    generator: str = "moons"
    seed: int = 0
    n_per_domain: int = 1000
    rotation_deg: float = 35.0
    noise_sd: float = 0.1
    num_classes: int = 3
    n_per_class: int = 200
    mean_shift: tuple[float, ...] = (1.5, 0.0)
    scale: float = 1.2
    source_csv: str = ""
    target_csv: str = ""
    truth_csv: str = ""

    def __post_init__(self):
        if self.generator not in ("moons", "blobs", "csv"):
            raise ConfigError(f"unknown generator {self.generator!r}")
        if self.generator == "csv" and not (self.source_csv and self.target_csv):
            raise ConfigError("generator = csv needs source_csv and target_csv")


@dataclass
class OutputConfig:
    directory: str = "runs/default"
    embeddings: bool = False
    checkpoint: bool = True


@dataclass
class ExperimentConfig:
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    output: OutputConfig = field(default_factory=OutputConfig)
    base_dir: str = field(default=".", compare=False)

    def resolve(self, path: str) -> str:
        """Resolve a data or output path relative to the config file's directory."""
        return path if os.path.isabs(path) else os.path.join(self.base_dir, path)


SECTIONS = {"dataset": DatasetConfig, "train": TrainConfig, "output": OutputConfig}


def _coerce(raw: str, default, where: str):
    raw = raw.strip()
    try:
        if isinstance(default, bool):
            low = raw.lower()
            if low in ("true", "yes", "1", "on"):
                return True
            if low in ("false", "no", "0", "off"):
                return False
            raise ValueError(raw)
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        if isinstance(default, tuple):
            if not raw:
                return ()
            conv = type(default[0]) if default else int
            return tuple(conv(v.strip()) for v in raw.split(","))
    except ValueError:
        raise ConfigError(f"{where}: cannot parse {raw!r} as {type(default).__name__}") from None
    return raw


def _format(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, tuple):
        return ",".join(_format(v) for v in value)
    return str(value)


def loads(text: str, base_dir: str = ".", source: str = "<config>") -> ExperimentConfig:
    parser = configparser.ConfigParser(interpolation=None, delimiters=("=",), comment_prefixes=("#", ";"))
    parser.optionxform = str
    try:
        parser.read_string(text, source=source)
    except configparser.Error as exc:
        raise ConfigError(f"{source}: {exc}") from None
    unknown = [s for s in parser.sections() if s not in SECTIONS]
    if unknown:
        raise ConfigError(f"{source}: unknown section(s) {unknown}")
    parts = {}
    for name, cls in SECTIONS.items():
        defaults = cls()
        known = {f.name for f in fields(cls)}
        kwargs = {}
        if parser.has_section(name):
            for key, raw in parser.items(name):
                if key not in known:
                    raise ConfigError(f"{source}: unknown key {key!r} in [{name}]")
                kwargs[key] = _coerce(raw, getattr(defaults, key), f"{source} [{name}] {key}")
        try:
            parts[name] = cls(**kwargs)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"{source}: [{name}] {exc}") from None
    cfg = ExperimentConfig(**parts, base_dir=base_dir)
    try:
        cfg.train.validate()
    except ValueError as exc:
        raise ConfigError(f"{source}: [train] {exc}") from None
    return cfg


def load(path) -> ExperimentConfig:
    path = os.fspath(path)
    if not os.path.isfile(path):
        raise ConfigError(f"config file not found: {path}")
    with open(path) as fh:
        text = fh.read()
    return loads(text, base_dir=os.path.dirname(os.path.abspath(path)), source=path)


def dumps(cfg: ExperimentConfig) -> str:
    out = []
    for name in SECTIONS:
        section = getattr(cfg, name)
        out.append(f"[{name}]")
        out += [f"{f.name} = {_format(getattr(section, f.name))}" for f in fields(section)]
        out.append("")
    return "\n".join(out)


def save(cfg: ExperimentConfig, path) -> None:
    with open(path, "w") as fh:
        fh.write(dumps(cfg))
