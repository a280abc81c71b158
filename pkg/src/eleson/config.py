from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

from .core import ConfigError
from .synth import parse_key_values


@dataclass(frozen=True)
class Architecture:
    """Layer widths; defaults serialize to roughly 9 MB of float32."""

    n_steps: int = 10
    feature_dim: int = 128
    motion_conv: tuple[int, ...] = (32, 32)
    motion_fc: int = 704
    mag_conv: tuple[int, ...] = (32, 32)
    mag_fc: int = 640
    gen_hidden: tuple[int, ...] = (256, 512)
    aux_hidden: int = 64
    adv_hidden: int = 64
    evidence_hidden: tuple[int, ...] = (256, 128)

    def scaled(self, factor: float) -> "Architecture":
        """Same topology with every width multiplied by ``factor``."""
        s = lambda v: max(1, int(round(v * factor)))
        return Architecture(
            self.n_steps, self.feature_dim, tuple(s(v) for v in self.motion_conv), s(self.motion_fc),
            tuple(s(v) for v in self.mag_conv), s(self.mag_fc), tuple(s(v) for v in self.gen_hidden),
            s(self.aux_hidden), s(self.adv_hidden), tuple(s(v) for v in self.evidence_hidden))


@dataclass(frozen=True)
class TrainConfig:
    w1: float = 0.6
    w2: float = 0.3
    w3: float = 0.4
    w4: float = 1.0
    lr: float = 3e-4
    epochs: int = 15
    batch_size: int = 32
    seed: int = 0
    window_seconds: float = 2.0
    stride_seconds: float = 2.0
    sample_rate: float = 100.0
    tau: float = 0.5
    noise_std: float = 0.1
    patience: int = 15
    valid_fraction: float = 0.2
    clip_norm: float = 0.0
    causal_loss: bool = True
    causal_branch: bool = True
    magnetic_branch: bool = True
    variance_term: bool = True
    mag_input: str = "diff"
    arch: Architecture = field(default_factory=Architecture)

    def __post_init__(self):
        for name in ("w1", "w2", "w3", "w4"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be >= 0")
        if not 0 <= self.tau < 1:
            raise ConfigError("tau must lie in [0, 1)")
        if self.lr <= 0 or self.epochs < 1 or self.batch_size < 2:
            raise ConfigError("lr > 0, epochs >= 1 and batch_size >= 2 required")
        if self.mag_input not in ("diff", "raw"):
            raise ConfigError("mag_input must be 'diff' or 'raw'")
        if not (self.causal_branch or self.magnetic_branch):
            raise ConfigError("at least one feature branch must be enabled")
        if not 0 < self.valid_fraction < 1:
            raise ConfigError("valid_fraction must lie in (0, 1)")

    @property
    def T(self) -> int:
        return int(round(self.window_seconds * self.sample_rate))

    def replace(self, **kw) -> "TrainConfig":
        return dataclasses.replace(self, **kw)


_BOOL = {"true": True, "false": False, "1": True, "0": False, "yes": True, "no": False}


def _coerce(name: str, raw: str, default):
    try:
        if isinstance(default, bool):
            return _BOOL[raw.strip().lower()]
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        if isinstance(default, tuple):
            return tuple(int(v) for v in raw.split(","))
        return raw.strip()
    except (KeyError, ValueError):
        raise ConfigError(f"bad value for {name!r}: {raw!r}") from None


def config_from_text(text: str) -> TrainConfig:
    """``key=value`` lines; architecture widths use an ``arch.`` prefix."""
    kv = parse_key_values(text)
    top, arch = {}, {}
    defaults = TrainConfig()
    arch_defaults = Architecture()
    for key, raw in kv.items():
        if key.startswith("arch."):
            name = key[5:]
            if not hasattr(arch_defaults, name):
                raise ConfigError(f"unknown architecture key {name!r}")
            arch[name] = _coerce(key, raw, getattr(arch_defaults, name))
        else:
            if not hasattr(defaults, key) or key == "arch":
                raise ConfigError(f"unknown config key {key!r}")
            top[key] = _coerce(key, raw, getattr(defaults, key))
    return TrainConfig(**top, arch=Architecture(**arch))


def config_to_text(cfg: TrainConfig) -> str:
    lines = []
    for f in dataclasses.fields(cfg):
        if f.name == "arch":
            continue
        v = getattr(cfg, f.name)
        lines.append(f"{f.name}={str(v).lower() if isinstance(v, bool) else v}")
    for f in dataclasses.fields(cfg.arch):
        v = getattr(cfg.arch, f.name)
        lines.append(f"arch.{f.name}={','.join(map(str, v)) if isinstance(v, tuple) else v}")
    return "\n".join(lines) + "\n"


def read_config(path: str | Path) -> TrainConfig:
    return config_from_text(Path(path).read_text(encoding="ascii"))
