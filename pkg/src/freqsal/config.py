"""Plain-text key=value configuration files with closed key sets."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from pathlib import Path

from .disentangle import ConfigError


@dataclass(frozen=True)
class RunConfig:
    """Run-time knobs shared by the CLI commands. Every key has a default."""

    lambda_mask: float = 0.1
    normalize_mask: bool = True
    sampler_mode: str = "argmax"
    strict_paper_weights: bool = False
    seed: int = 0
    T: int = 8
    frames_per_segment: int = 2
    lr: float = 0.01
    momentum: float = 0.9
    weight_decay: float = 0.0005
    epochs: int = 30

    def __post_init__(self):
        if self.sampler_mode not in ("argmax", "argmin"):
            raise ConfigError(f"sampler_mode must be argmax or argmin, got {self.sampler_mode!r}")
        if self.T < 1 or self.frames_per_segment < 1 or self.epochs < 0:
            raise ConfigError("T and frames_per_segment must be >= 1 and epochs >= 0")


@dataclass(frozen=True)
class GenSpec:
    """Dataset generation parameters for the gen command."""

    classes: int = 4
    train_samples: int = 200
    eval_samples: int = 50
    frames: int = 16
    sampled_frames: int = 8
    height: int = 16
    width: int = 16
    noise_sigma: float = 0.05
    amplitude: float = 1.0
    seed: int = 0


_TRUE = {"1", "true", "yes", "on"}
_FALSE = {"0", "false", "no", "off"}


def _coerce(name: str, raw: str, target_type):
    raw = raw.strip()
    try:
        if target_type is bool:
            low = raw.lower()
            if low in _TRUE:
                return True
            if low in _FALSE:
                return False
            raise ValueError(raw)
        return target_type(raw)
    except ValueError:
        raise ConfigError(f"invalid value {raw!r} for key {name}") from None


def _parse_kv(text: str) -> dict[str, str]:
    pairs: dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise ConfigError(f"line {lineno}: expected key = value, got {line!r}")
        key, value = stripped.split("=", 1)
        key = key.strip()
        if key in pairs:
            raise ConfigError(f"line {lineno}: duplicate key {key}")
        pairs[key] = value
    return pairs


def _from_text(cls, text: str):
    fields = {f.name: f.type for f in dataclasses.fields(cls)}
    types = {"float": float, "int": int, "bool": bool, "str": str}
    values = {}
    for key, raw in _parse_kv(text).items():
        if key not in fields:
            raise ConfigError(f"unknown key {key!r} for {cls.__name__}")
        values[key] = _coerce(key, raw, types[fields[key]])
    return cls(**values)


def load_run_config(path=None) -> RunConfig:
    if path is None:
        return RunConfig()
    return _from_text(RunConfig, Path(path).read_text())


def load_gen_spec(path=None) -> GenSpec:
    if path is None:
        return GenSpec()
    return _from_text(GenSpec, Path(path).read_text())
