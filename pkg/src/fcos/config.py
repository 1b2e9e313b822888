"""Experiment configuration: INI-style files, defaults, resolved snapshots.

A config file holds [dataset] / [model] / [train] / [fcos] / [baseline] /
[output] sections of key=value pairs; every key has a default, so an empty
file is a valid experiment. The resolved (fully expanded) config is written
as JSON next to the run outputs and hashed per stage for resume checks.
"""
from __future__ import annotations

import configparser
import hashlib
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

from .errors import ConfigError


@dataclass
class DatasetSection:
    classes: tuple[str, ...] = ("bpsk", "qpsk", "16qam", "gfsk")
    snr_db: tuple[float, ...] = tuple(float(s) for s in range(0, 20, 2))
    per_cell: int = 200
    length: int = 128
    seed: int = 1


@dataclass
class ModelSection:
    arch: str = "plain-cnn1d"
    widths: tuple[int, ...] = ()  # empty -> architecture default
    kernel: int = 0  # 0 -> architecture default
    blocks_per_stage: int = 2
    seed: int = 2


@dataclass
class TrainSection:
    lr: float = 0.001
    batch_size: int = 128
    epochs: int = 30
    optimizer: str = "adam"
    seed: int = 3


@dataclass
class FcosSection:
    keep_ratio: float = 0.5
    metric: str = "cosine"
    scheme: str = "mean"
    order: str = "output-first"
    input_mode: str = "producer-tied"
    beta: float = 0.005
    warm_epochs: int = 20
    probe_epochs: int = 5
    final_epochs: int = 80


@dataclass
class BaselineSection:
    method: str = ""  # one of baselines.BASELINE_METHODS, empty = none
    keep_ratio: float = 0.5
    count: int = 1
    seed: int = 4


@dataclass
class ExperimentConfig:
    dataset: DatasetSection = field(default_factory=DatasetSection)
    model: ModelSection = field(default_factory=ModelSection)
    train: TrainSection = field(default_factory=TrainSection)
    fcos: FcosSection = field(default_factory=FcosSection)
    baseline: BaselineSection = field(default_factory=BaselineSection)

    def resolved(self) -> dict:
        return {
            "dataset": asdict(self.dataset),
            "model": asdict(self.model),
            "train": asdict(self.train),
            "fcos": asdict(self.fcos),
            "baseline": asdict(self.baseline),
        }

    def override_seed(self, seed: int) -> None:
        self.dataset.seed = seed
        self.model.seed = seed + 1
        self.train.seed = seed + 2
        self.baseline.seed = seed + 3


def _parse_scalar(section: str, key: str, raw: str, proto):
    raw = raw.strip()
    try:
        if isinstance(proto, bool):
            return raw.lower() in ("1", "true", "yes", "on")
        if isinstance(proto, int):
            return int(raw)
        if isinstance(proto, float):
            return float(raw)
        return raw
    except ValueError as exc:
        raise ConfigError(f"[{section}] {key}: cannot parse {raw!r}: {exc}") from exc


def _parse_tuple(section: str, key: str, raw: str, conv):
    raw = raw.strip()
    if not raw:
        return ()
    if ":" in raw and conv is float:
        parts = raw.split(":")
        if len(parts) != 3:
            raise ConfigError(f"[{section}] {key}: range syntax is start:stop:step, got {raw!r}")
        start, stop, step = (float(p) for p in parts)
        if step <= 0:
            raise ConfigError(f"[{section}] {key}: range step must be positive")
        values, v = [], start
        while v <= stop + 1e-9:
            values.append(v)
            v += step
        return tuple(values)
    try:
        return tuple(conv(p.strip()) for p in raw.split(",") if p.strip())
    except ValueError as exc:
        raise ConfigError(f"[{section}] {key}: cannot parse list {raw!r}: {exc}") from exc


_TUPLE_FIELDS = {
    ("dataset", "classes"): str,
    ("dataset", "snr_db"): float,
    ("model", "widths"): int,
}


def load_config(path=None) -> ExperimentConfig:
    """Reads an INI config; missing file/sections/keys fall back to defaults."""
    cfg = ExperimentConfig()
    if path is None:
        return cfg
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file {path} does not exist")
    parser = configparser.ConfigParser()
    try:
        parser.read(path)
    except configparser.Error as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    sections = {
        "dataset": cfg.dataset,
        "model": cfg.model,
        "train": cfg.train,
        "fcos": cfg.fcos,
        "baseline": cfg.baseline,
    }
    for sect_name in parser.sections():
        if sect_name not in sections:
            raise ConfigError(f"unknown config section [{sect_name}]")
        target = sections[sect_name]
        for key, raw in parser.items(sect_name):
            if not hasattr(target, key):
                raise ConfigError(f"[{sect_name}] has no key {key!r}")
            if (sect_name, key) in _TUPLE_FIELDS:
                value = _parse_tuple(sect_name, key, raw, _TUPLE_FIELDS[(sect_name, key)])
            else:
                value = _parse_scalar(sect_name, key, raw, getattr(target, key))
            setattr(target, key, value)
    _validate(cfg)
    return cfg


def _validate(cfg: ExperimentConfig) -> None:
    if cfg.model.arch not in ("plain-cnn1d", "residual-cnn1d"):
        raise ConfigError(f"[model] arch: unknown architecture {cfg.model.arch!r}")
    if not 0.0 < cfg.fcos.keep_ratio <= 1.0:
        raise ConfigError(f"[fcos] keep_ratio: must be in (0, 1], got {cfg.fcos.keep_ratio}")
    if cfg.fcos.beta <= 0:
        raise ConfigError(f"[fcos] beta: must be positive, got {cfg.fcos.beta}")
    if cfg.train.lr <= 0:
        raise ConfigError(f"[train] lr: must be positive, got {cfg.train.lr}")
    if cfg.baseline.method and cfg.baseline.method not in (
        "l1-channel", "random-layer", "probe-layer",
    ):
        raise ConfigError(f"[baseline] method: unknown method {cfg.baseline.method!r}")


def config_hash(payload: dict) -> str:
    blob = json.dumps(payload, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()


def write_resolved(cfg: ExperimentConfig, path) -> None:
    Path(path).write_text(json.dumps(cfg.resolved(), indent=2, sort_keys=True) + "\n")
