"""Run configuration: one YAML/JSON file, overridden by command-line flags."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import yaml

from .evalsuite import EvalConfig
from .networks import ArchConfig
from .trainer import TrainConfig


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    manifest: str | None = None
    table: str | None = None
    out: str | None = None
    seed: int = 0
    arch: dict = field(default_factory=dict)
    train: dict = field(default_factory=dict)
    eval: dict = field(default_factory=dict)
    augment: dict = field(default_factory=dict)

    @classmethod
    def load(cls, path: str | Path) -> "RunConfig":
        path = Path(path)
        text = path.read_text(encoding="utf-8")
        data = json.loads(text) if path.suffix == ".json" else yaml.safe_load(text)
        data = data or {}
        if not isinstance(data, dict):
            raise ConfigError(f"{path}: top level must be a mapping")
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"{path}: unknown keys {sorted(unknown)}")
        cfg = cls(**data)
        # relative paths are taken relative to the config file
        for key in ("manifest", "table", "out"):
            value = getattr(cfg, key)
            if value is not None and not Path(value).is_absolute():
                setattr(cfg, key, str((path.parent / value).resolve()))
        return cfg

    def override(self, **kw) -> "RunConfig":
        for k, v in kw.items():
            if v is None:
                continue
            if k in ("manifest", "table", "out", "seed"):
                setattr(self, k, v)
            elif k in TRAIN_KEYS:
                self.train[k] = v
            else:
                raise ConfigError(f"cannot override {k!r}")
        return self

    def arch_config(self, resolution: int) -> ArchConfig:
        kw = {"base": 16, "n_down": 2, "disc_base": 16, "norm": "in"} if resolution <= 64 else {}
        kw.update(self.arch)
        kw["resolution"] = resolution
        try:
            cfg = ArchConfig(**kw)
            cfg.validate()
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"arch: {exc}") from None
        return cfg

    def train_config(self, resolution: int) -> TrainConfig:
        kw = dict(self.train)
        kw.setdefault("seed", self.seed)
        kw["arch"] = self.arch_config(resolution)
        try:
            return TrainConfig(**kw)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"train: {exc}") from None

    def eval_config(self) -> EvalConfig:
        kw = dict(self.eval)
        kw.setdefault("seed", self.seed)
        try:
            return EvalConfig(**kw)
        except TypeError as exc:
            raise ConfigError(f"eval: {exc}") from None

    def to_dict(self) -> dict:
        return asdict(self)


TRAIN_KEYS = {f.name for f in fields(TrainConfig)}
