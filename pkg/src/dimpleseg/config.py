"""Flat ``key = value`` run configuration.

Blank lines and ``#`` comments are ignored. Every key must be one of
:data:`DEFAULTS`; unknown keys are rejected with their line number.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Any, Mapping, Optional, Union

from .errors import ConfigError
from .models import ModelSpec
from .training import TrainConfig

_MODEL_KEYS = ("arch", "in_channels", "base_width", "dense_units", "attn_ratio", "se_ratio",
               "spatial_kernel", "out_channels")
_TRAIN_KEYS = tuple(f.name for f in fields(TrainConfig))

DEFAULTS: dict[str, Any] = {
    **{f.name: f.default for f in fields(TrainConfig)},
    **{k: getattr(ModelSpec(), k) for k in _MODEL_KEYS},
    "tile": 128,
    "tiles_dir": "",
    "synthetic": 0,
    "out": "model.ckpt",
    "log": "train_log.csv",
}


def _coerce(key: str, raw: str, where: str) -> Any:
    default = DEFAULTS[key]
    try:
        if isinstance(default, bool):
            if raw.lower() not in ("true", "false", "1", "0"):
                raise ValueError(raw)
            return raw.lower() in ("true", "1")
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
    except ValueError:
        raise ConfigError(f"{where}: cannot parse {raw!r} as {type(default).__name__} for key {key!r}") from None
    return raw


def parse_config_text(text: str, source: str = "<config>") -> dict[str, Any]:
    values: dict[str, Any] = {}
    for n, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        where = f"{source}:{n}"
        if "=" not in line:
            raise ConfigError(f"{where}: expected 'key = value'")
        key, raw = (s.strip() for s in line.split("=", 1))
        if key not in DEFAULTS:
            raise ConfigError(f"{where}: unknown key {key!r}")
        if key in values:
            raise ConfigError(f"{where}: duplicate key {key!r}")
        values[key] = _coerce(key, raw, where)
    return values


@dataclass(frozen=True)
class RunConfig:
    values: Mapping[str, Any]

    def __getitem__(self, key: str) -> Any:
        return self.values[key]

    @property
    def train(self) -> TrainConfig:
        return TrainConfig(**{k: self.values[k] for k in _TRAIN_KEYS})

    @property
    def model(self) -> ModelSpec:
        return ModelSpec(**{k: self.values[k] for k in _MODEL_KEYS})

    def dump(self) -> str:
        return "".join(f"{k} = {self.values[k]}\n" for k in DEFAULTS)


def load_run_config(
    path: Optional[Union[str, os.PathLike]] = None,
    overrides: Optional[Mapping[str, Any]] = None,
    env: Optional[Mapping[str, str]] = None,
) -> RunConfig:
    """Defaults, then the file, then non-None ``overrides`` (CLI flags).

    ``DSEG_SEED`` from ``env`` fills the seed only when neither the file nor
    an override sets it.
    """
    env = os.environ if env is None else env
    values = dict(DEFAULTS)
    from_file: dict[str, Any] = {}
    if path is not None:
        p = Path(path)
        try:
            text = p.read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config {p}: {exc}") from None
        from_file = parse_config_text(text, str(p))
        values.update(from_file)
    overrides = {k: v for k, v in (overrides or {}).items() if v is not None}
    unknown = set(overrides) - set(DEFAULTS)
    if unknown:
        raise ConfigError(f"unknown override keys: {sorted(unknown)}")
    if "seed" not in from_file and "seed" not in overrides and env.get("DSEG_SEED"):
        values["seed"] = _coerce("seed", env["DSEG_SEED"], "DSEG_SEED")
    values.update(overrides)
    cfg = RunConfig(values)
    _ = cfg.train, cfg.model  # validate eagerly
    return cfg
