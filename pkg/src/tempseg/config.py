"""Dataclass configs and the flat key=value config file format.

Config files are plain text with dotted keys, e.g. ``train.lambda = 0.1``;
the same format serializes resolved configs into run manifests so reruns
are diffable.  ``TEMPSEG_SEED`` is the only environment override.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field, fields
from pathlib import Path

from .errors import ValidationError
from .losses import TermFlags

SEED_ENV_VAR = "TEMPSEG_SEED"


@dataclass
class DataConfig:
    height: int = 64
    width: int = 64
    num_classes: int = 4
    channels: int = 1
    clip_length: int = 11
    num_train: int = 200
    num_val: int = 40
    noise_amplitude: float = 0.1
    seed: int = 0

    def validate(self) -> None:
        if self.num_classes < 2:
            raise ValidationError("data.num_classes must be >= 2")
        if self.clip_length < 3:
            raise ValidationError("data.clip_length must be >= 3")
        if self.num_train < 1 or self.num_val < 1:
            raise ValidationError("data.num_train and data.num_val must be >= 1")


@dataclass
class TrainingConfig:
    base_lr: float = 0.01
    poly_power: float = 0.9
    max_iterations: int = 2000
    batch_size: int = 4
    lam: float = 0.1
    momentum: float = 0.9
    clip_lo: float = -1.0
    clip_hi: float = 1.0
    pooled_h: int = 16
    pooled_w: int = 16
    window: int = 5
    seed: int = 0
    margin: float = 0.1
    convlstm_hidden: int = 8
    convlstm_kernel: int = 3
    teacher_use_tl: bool = True
    checkpoint_every: int = 0        # 0: only at the end
    augment: bool = False            # reserved; no augmentation at desk scale
    terms: TermFlags = field(default_factory=TermFlags)

    @property
    def pooled(self) -> tuple[int, int]:
        return (self.pooled_h, self.pooled_w)

    def validate(self) -> None:
        if self.base_lr <= 0:
            raise ValidationError("train.base_lr must be > 0")
        if self.lam < 0:
            raise ValidationError("train.lambda must be >= 0")
        if self.max_iterations < 0:
            raise ValidationError("train.max_iterations must be >= 0")
        if self.batch_size < 1:
            raise ValidationError("train.batch_size must be >= 1")
        if self.clip_lo >= self.clip_hi:
            raise ValidationError("train.clip_lo must be < train.clip_hi")
        if self.augment:
            raise ValidationError("train.augment is reserved and not implemented")


@dataclass
class Config:
    data: DataConfig = field(default_factory=DataConfig)
    train: TrainingConfig = field(default_factory=TrainingConfig)

    def validate(self) -> None:
        self.data.validate()
        self.train.validate()


_KEY_ALIASES = {
    "train.lambda": "train.lam",
}

_TERM_KEYS = {"train.terms.sf", "train.terms.pf", "train.terms.mf", "train.terms.tl"}


def _coerce(current, raw: str, key: str):
    if isinstance(current, bool):
        low = raw.lower()
        if low in ("true", "1", "yes", "on"):
            return True
        if low in ("false", "0", "no", "off"):
            return False
        raise ValidationError(f"config field {key}: expected a boolean, got {raw!r}")
    if isinstance(current, int):
        try:
            return int(raw)
        except ValueError as exc:
            raise ValidationError(f"config field {key}: expected an integer, got {raw!r}") from exc
    if isinstance(current, float):
        try:
            return float(raw)
        except ValueError as exc:
            raise ValidationError(f"config field {key}: expected a number, got {raw!r}") from exc
    return raw


def parse_config_text(text: str, base: Config | None = None) -> Config:
    cfg = base if base is not None else Config()
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ValidationError(f"config line {lineno}: expected 'key = value', got {line!r}")
        key, _, raw = line.partition("=")
        key = key.strip()
        raw = raw.strip()
        key = _KEY_ALIASES.get(key, key)
        if key in _TERM_KEYS:
            setattr(cfg.train.terms, key.rsplit(".", 1)[1], _coerce(True, raw, key))
            continue
        section, _, name = key.partition(".")
        target = {"data": cfg.data, "train": cfg.train}.get(section)
        if target is None or not name or not hasattr(target, name):
            raise ValidationError(f"unknown config field: {key}")
        setattr(target, name, _coerce(getattr(target, name), raw, key))
    if SEED_ENV_VAR in os.environ:
        seed = int(os.environ[SEED_ENV_VAR])
        cfg.data.seed = seed
        cfg.train.seed = seed
    cfg.validate()
    return cfg


def load_config(path: str | os.PathLike | None) -> Config:
    if path is None:
        return parse_config_text("")
    p = Path(path)
    if not p.exists():
        raise ValidationError(f"config file not found: {p}")
    return parse_config_text(p.read_text())


def dump_config(cfg: Config) -> str:
    """Serialize to the flat key=value format (stable field order)."""
    lines = []
    for section_name, section in (("data", cfg.data), ("train", cfg.train)):
        for f in fields(section):
            value = getattr(section, f.name)
            if isinstance(value, TermFlags):
                for tf in fields(value):
                    lines.append(f"{section_name}.terms.{tf.name} = {getattr(value, tf.name)}")
            else:
                lines.append(f"{section_name}.{f.name} = {value}")
    return "\n".join(lines) + "\n"
