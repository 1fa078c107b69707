"""Flat key-value run configuration with presets, file, environment and flag layers."""

from __future__ import annotations

import os
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Mapping

from .errors import ConfigError
from .features import DEFAULT_TIME_LIMITS, E_FEATURES, L_FEATURES
from .model import ModelConfig
from .train import TrainConfig

ENV_PREFIX = "DAS_"


@dataclass
class RunConfig:
    preset: str = "desk"
    # model
    n_blocks: int = 2
    d_model: int = 64
    n_heads: int = 4
    d_ff: int = 0  # 0 means 4 * d_model
    seq_size: int = 5
    dropout: float = 0.1
    enc_features: tuple[str, ...] = E_FEATURES
    dec_features: tuple[str, ...] = L_FEATURES
    dtype: str = "float32"
    # training
    warmup: int = 400
    batch_size: int = 128
    epochs: int = 10
    seed: int = 0
    oversample: bool = True
    loss: str = "last"
    clip_norm: float = 5.0
    eval_batch_size: int = 512
    # data
    threshold_secs: float = 3600.0
    split_ratio: tuple[float, ...] = (7.0, 1.0, 2.0)
    elapsed_unit: str = "ms"
    limits: dict[int, float] = field(default_factory=lambda: dict(DEFAULT_TIME_LIMITS))

    def model_config(self, cardinalities: Mapping[str, int] | None = None) -> ModelConfig:
        return ModelConfig(
            n_blocks=self.n_blocks,
            d_model=self.d_model,
            n_heads=self.n_heads,
            seq_size=self.seq_size,
            dropout=self.dropout,
            d_ff=self.d_ff or None,
            cardinalities=dict(cardinalities or {}),
            enc_features=self.enc_features,
            dec_features=self.dec_features,
            dtype=self.dtype,
        )

    def train_config(self) -> TrainConfig:
        return TrainConfig(
            warmup=self.warmup,
            batch_size=self.batch_size,
            epochs=self.epochs,
            seed=self.seed,
            oversample=self.oversample,
            loss=self.loss,
            clip_norm=self.clip_norm,
            eval_batch_size=self.eval_batch_size,
        )

    def to_text(self) -> str:
        lines = []
        for f in fields(self):
            if f.name == "limits":
                continue
            lines.append(f"{f.name} = {_format(getattr(self, f.name))}")
        for part, secs in sorted(self.limits.items()):
            lines.append(f"limit.{part} = {secs!r}")
        return "\n".join(lines) + "\n"


PRESETS: dict[str, dict[str, Any]] = {
    "paper": dict(n_blocks=4, d_model=512, n_heads=8, warmup=6000, dropout=0.5, seq_size=5),
    "desk": dict(n_blocks=2, d_model=64, n_heads=4, warmup=400, dropout=0.1, seq_size=5),
}

_FIELDS = {f.name: f for f in fields(RunConfig)}


def _format(value) -> str:
    if isinstance(value, tuple):
        return ",".join(str(v) for v in value)
    if isinstance(value, bool):
        return "true" if value else "false"
    return str(value)


def _coerce(key: str, raw: Any):
    if key.startswith("limit."):
        try:
            return int(key.split(".", 1)[1]), float(raw)
        except ValueError as exc:
            raise ConfigError(f"bad limit entry {key} = {raw!r}") from exc
    if key not in _FIELDS or key == "limits":
        raise ConfigError(f"unknown config key {key!r}")
    default = getattr(RunConfig(), key)
    if not isinstance(raw, str):
        return raw
    text = raw.strip()
    try:
        if isinstance(default, bool):
            if text.lower() not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(text)
            return text.lower() in ("true", "1", "yes")
        if isinstance(default, int):
            return int(text)
        if isinstance(default, float):
            return float(text)
        if isinstance(default, tuple):
            items = [t.strip() for t in text.split(",") if t.strip()]
            return tuple(float(t) for t in items) if key == "split_ratio" else tuple(items)
    except ValueError as exc:
        raise ConfigError(f"bad value for {key}: {raw!r}") from exc
    return text


def parse_config_text(text: str, source: str = "<config>") -> dict[str, Any]:
    out: dict[str, Any] = {}
    for n, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            key, _, value = line.partition(":")
            if not _:
                raise ConfigError(f"{source}:{n}: expected 'key = value'")
        key = key.strip()
        _coerce(key, value)  # validate early so the line number is reported
        out[key] = value.strip()
    return out


def env_overrides(environ: Mapping[str, str] = os.environ) -> dict[str, str]:
    out = {}
    for k, v in environ.items():
        if k.startswith(ENV_PREFIX) and k != ENV_PREFIX + "CONFIG":
            out[k[len(ENV_PREFIX):].lower()] = v
    return out


def resolve(
    preset: str | None = None,
    config_file: str | Path | None = None,
    overrides: Mapping[str, Any] | None = None,
    environ: Mapping[str, str] | None = None,
) -> RunConfig:
    """Layer preset < config file < environment < explicit overrides."""
    layers: list[dict[str, Any]] = []
    file_values = {}
    if config_file is not None:
        file_values = parse_config_text(Path(config_file).read_text(encoding="utf-8"), str(config_file))
    env = env_overrides(os.environ if environ is None else environ)
    flags = {k: v for k, v in (overrides or {}).items() if v is not None}
    name = flags.get("preset") or env.get("preset") or file_values.get("preset") or preset or "desk"
    if name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
    layers = [dict(PRESETS[name], preset=name), file_values, env, flags]
    cfg = RunConfig()
    limits = dict(cfg.limits)
    values: dict[str, Any] = {}
    for layer in layers:
        for key, raw in layer.items():
            coerced = _coerce(key, raw)
            if key.startswith("limit."):
                limits[coerced[0]] = coerced[1]
            else:
                values[key] = coerced
    cfg = replace(cfg, **values, limits=limits)
    cfg.model_config()  # validates divisibility and feature names
    cfg.train_config()
    return cfg
