"""Training configuration and the flat ``key = value`` config file format."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from pathlib import Path

from .errors import ConfigError

ARCHITECTURES = ("baseline", "ma", "fa")

_TRUE = {"on", "true", "yes", "1"}
_FALSE = {"off", "false", "no", "0"}


@dataclass
class TrainConfig:
    """One training run, fully determined together with the dataset and seed.

    Defaults are desk-scale: embedding 32 / hidden 64 trains in minutes on
    a CPU. Full-scale dimensions (128/256 with 2048-channel maps) are
    plain config values.
    """

    arch: str = "baseline"
    seed: int = 1
    lr: float = 4e-4
    batch_size: int = 64
    clip_norm: float = 1.0
    l2_factor: float = 1e-5
    dropout_emb: float = 0.3
    dropout_enc: float = 0.3
    dropout_out: float = 0.3
    emb_dim: int = 32
    hidden_dim: int = 64
    max_epochs: int = 30
    patience: int = 10
    eval_metric: str = "bleu"
    normalize_features: bool = True
    feat_width: int = 4
    feat_channels: int = 16
    bpe_merges: int = 10000
    max_len: int = 100

    def validate(self) -> "TrainConfig":
        if self.arch not in ARCHITECTURES:
            raise ConfigError(f"arch must be one of {ARCHITECTURES}, got {self.arch!r}")
        if self.eval_metric != "bleu":
            raise ConfigError(f"unsupported eval metric {self.eval_metric!r}")
        positive = (
            "lr", "batch_size", "clip_norm", "emb_dim", "hidden_dim",
            "max_epochs", "patience", "feat_width", "feat_channels",
            "bpe_merges", "max_len",
        )
        for name in positive:
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)}")
        if self.l2_factor < 0:
            raise ConfigError(f"l2_factor must be nonnegative, got {self.l2_factor}")
        for name in ("dropout_emb", "dropout_enc", "dropout_out"):
            p = getattr(self, name)
            if not 0.0 <= p < 1.0:
                raise ConfigError(f"{name} must lie in [0, 1), got {p}")
        return self

    def replace(self, **kwargs) -> "TrainConfig":
        return dataclasses.replace(self, **kwargs)


_FIELDS = {f.name: f.type for f in dataclasses.fields(TrainConfig)}


def _parse_value(key: str, raw: str):
    kind = _FIELDS[key]
    raw = raw.strip()
    if kind == "bool":
        low = raw.lower()
        if low in _TRUE:
            return True
        if low in _FALSE:
            return False
        raise ConfigError(f"{key}: expected on/off, got {raw!r}")
    if kind == "int":
        try:
            return int(raw)
        except ValueError as exc:
            raise ConfigError(f"{key}: expected integer, got {raw!r}") from exc
    if kind == "float":
        try:
            return float(raw)
        except ValueError as exc:
            raise ConfigError(f"{key}: expected number, got {raw!r}") from exc
    return raw


def parse_config(text: str, base: TrainConfig | None = None) -> TrainConfig:
    """Parse flat ``key = value`` lines; unknown keys are errors."""
    values = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise ConfigError(f"config line {lineno}: expected 'key = value', got {line!r}")
        key, raw = stripped.split("=", 1)
        key = key.strip()
        if key not in _FIELDS:
            raise ConfigError(f"config line {lineno}: unknown key {key!r}")
        values[key] = _parse_value(key, raw)
    cfg = (base or TrainConfig()).replace(**values)
    return cfg.validate()


def load_config(path: str | Path, base: TrainConfig | None = None) -> TrainConfig:
    return parse_config(Path(path).read_text(encoding="utf-8"), base=base)


def format_config(cfg: TrainConfig) -> str:
    lines = [f"{f.name} = {_format_value(getattr(cfg, f.name))}" for f in dataclasses.fields(cfg)]
    return "\n".join(lines) + "\n"


def _format_value(value) -> str:
    if isinstance(value, bool):
        return "on" if value else "off"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def save_config(cfg: TrainConfig, path: str | Path) -> None:
    Path(path).write_text(format_config(cfg), encoding="utf-8")
