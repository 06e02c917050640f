"""Experiment configuration: flat key-value text files plus typed defaults.

The on-disk format is deliberately plain: one ``section.key = value`` per
line, ``#`` comments, no nesting.  Types are inferred from the defaults
declared on the config dataclasses, so a config file only ever lists the
keys it overrides.
"""

from __future__ import annotations

import dataclasses
import hashlib
from dataclasses import dataclass, field, fields

from .errors import ValidationError


@dataclass
class TrainerConfig:
    gamma: float = 0.98
    lam: float = 0.95
    clip_eps: float = 0.2
    epochs_decentralized: int = 10
    epochs_central: int = 10
    entropy_coef: float = 0.01
    lr: float = 0.001
    hidden_sizes: tuple = (256, 64, 16)
    episode_len: int = 25
    episodes: int = 3000
    eval_interval: int = 100
    eval_episodes: int = 30
    normalize_advantages: bool = True
    local_history: bool = False
    attention_heads: int = 4
    attention_dk: int = 16

    def validate(self):
        if not 0 < self.gamma < 1:
            raise ValidationError(f"gamma must be in (0, 1), got {self.gamma}")
        if not 0 <= self.lam <= 1:
            raise ValidationError(f"lam must be in [0, 1], got {self.lam}")
        if self.clip_eps <= 0:
            raise ValidationError(f"clip_eps must be positive, got {self.clip_eps}")
        if self.episode_len < 1 or self.episodes < 0:
            raise ValidationError("episode_len must be >= 1 and episodes >= 0")
        if self.eval_interval < 1 or self.eval_episodes < 1:
            raise ValidationError("eval cadence values must be >= 1")


@dataclass
class CentralConfig:
    M: int = 5
    k0: int = 4
    threshold: int = 7
    l_max: int = 4
    hidden_sizes: tuple = (64, 32)
    lr: float = 0.001
    mode: str = "ppo"  # "ppo" or "td"
    fixed_length: int | None = None  # set to train a fixed-context baseline
    filtered_context: bool = False

    def validate(self):
        if self.mode not in ("ppo", "td"):
            raise ValidationError(f"central mode must be 'ppo' or 'td', got {self.mode!r}")
        if self.l_max < 1:
            raise ValidationError(f"l_max must be >= 1, got {self.l_max}")
        if self.fixed_length is not None and self.fixed_length < 0:
            raise ValidationError("fixed_length must be >= 0 when set")


@dataclass
class TheoryConfig:
    T: int = 20000
    theta_nominal: float = 0.05
    theta_slow: float = 0.02
    theta_fast: float = 2.0
    eta: float = 0.3
    sigma_eps: float = 0.5
    dt: float = 0.1
    switch_period: int = 2000
    fixed_lengths: tuple = (1, 2, 4, 8, 16, 32)
    regime_switching: bool = True
    feature_window: int = 64
    feature_k0: int = 8
    controller_hidden: tuple = (32, 32)
    controller_chunk: int = 500
    controller_lr: float = 0.001
    controller_gamma: float = 0.9
    controller_entropy: float = 0.01

    def validate(self):
        if self.T < 1000:
            raise ValidationError("theory.T must be >= 1000")
        if not self.fixed_lengths:
            raise ValidationError("theory.fixed_lengths must be non-empty")


@dataclass
class ExperimentConfig:
    environment: str = "spread"
    seeds: tuple = (0, 1, 2, 3, 4)
    out_dir: str = "runs"
    run_tag: str = "adaptive"
    trainer: TrainerConfig = field(default_factory=TrainerConfig)
    central: CentralConfig = field(default_factory=CentralConfig)
    theory: TheoryConfig = field(default_factory=TheoryConfig)

    def validate(self):
        if self.environment not in ("spread",):
            raise ValidationError(f"unknown environment {self.environment!r}")
        if not self.seeds:
            raise ValidationError("seeds must be non-empty")
        self.trainer.validate()
        self.central.validate()
        self.theory.validate()


_SECTIONS = {"trainer": TrainerConfig, "central": CentralConfig, "theory": TheoryConfig}
_TOP_KEYS = ("environment", "seeds", "out_dir", "run_tag")


def _format_value(value) -> str:
    if value is None:
        return "none"
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ",".join(str(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _parse_value(raw: str, default, key: str):
    raw = raw.strip()
    if default is None:  # optional-int fields such as central.fixed_length
        if raw.lower() in ("none", "null"):
            return None
        try:
            return int(raw)
        except ValueError as exc:
            raise ValidationError(f"{key}: expected integer or 'none', got {raw!r}") from exc
    if isinstance(default, bool):
        if raw.lower() in ("true", "1", "yes"):
            return True
        if raw.lower() in ("false", "0", "no"):
            return False
        raise ValidationError(f"{key}: expected boolean, got {raw!r}")
    if isinstance(default, int):
        try:
            return int(raw)
        except ValueError as exc:
            raise ValidationError(f"{key}: expected integer, got {raw!r}") from exc
    if isinstance(default, float):
        try:
            return float(raw)
        except ValueError as exc:
            raise ValidationError(f"{key}: expected number, got {raw!r}") from exc
    if isinstance(default, tuple):
        if not raw:
            return ()
        try:
            return tuple(int(part.strip()) for part in raw.split(","))
        except ValueError as exc:
            raise ValidationError(f"{key}: expected comma-separated integers, got {raw!r}") from exc
    return raw


def apply_overrides(config: ExperimentConfig, overrides: dict) -> ExperimentConfig:
    """Set ``section.key`` (or top-level) entries onto a copy of the config."""
    cfg = dataclasses.replace(
        config,
        trainer=dataclasses.replace(config.trainer),
        central=dataclasses.replace(config.central),
        theory=dataclasses.replace(config.theory),
    )
    for key, raw in overrides.items():
        if "." in key:
            section, name = key.split(".", 1)
            target = getattr(cfg, section, None)
            if section not in _SECTIONS or target is None:
                raise ValidationError(f"unknown config section in key {key!r}")
            if name not in {f.name for f in fields(target)}:
                raise ValidationError(f"unknown config key {key!r}")
            default = getattr(type(target)(), name)
            setattr(target, name, _parse_value(str(raw), default, key))
        else:
            if key not in _TOP_KEYS:
                raise ValidationError(f"unknown config key {key!r}")
            default = getattr(ExperimentConfig(), key)
            setattr(cfg, key, _parse_value(str(raw), default, key))
    return cfg


def parse_config_text(text: str) -> ExperimentConfig:
    overrides = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ValidationError(f"config line {lineno} is not 'key = value': {line!r}")
        key, raw = stripped.split("=", 1)
        overrides[key.strip()] = raw.strip()
    cfg = apply_overrides(ExperimentConfig(), overrides)
    cfg.validate()
    return cfg


def load_config(path) -> ExperimentConfig:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            text = fh.read()
    except FileNotFoundError as exc:
        raise ValidationError(f"config file not found: {path}") from exc
    return parse_config_text(text)


def flat_dict(config: ExperimentConfig) -> dict:
    """Canonical flat key -> string form, used for dumps and hashing."""
    out = {key: _format_value(getattr(config, key)) for key in _TOP_KEYS}
    for section, _ in _SECTIONS.items():
        sub = getattr(config, section)
        for f in fields(sub):
            out[f"{section}.{f.name}"] = _format_value(getattr(sub, f.name))
    return out


def dump_config(config: ExperimentConfig) -> str:
    return "\n".join(f"{k} = {v}" for k, v in sorted(flat_dict(config).items())) + "\n"


def config_hash(config: ExperimentConfig) -> str:
    return hashlib.sha256(dump_config(config).encode("utf-8")).hexdigest()[:16]
