"""Run configuration: one flat dataclass, INI-style files with sections,
named presets, and key=value overrides (override > file > preset > default).

The canonical resolved text (all fields materialized) is written into every
run directory and hashed into checkpoints, so a run can be reproduced from
its own artifacts.
"""

from __future__ import annotations

import configparser
import dataclasses
import io
from dataclasses import dataclass

from .errors import ConfigurationError


@dataclass
class RunConfig:
    # [run]
    env: str = "langroom"
    seed: int = 0
    steps: int = 200_000
    eval_every: int = 25_000
    eval_episodes: int = 20
    checkpoint_every: int = 100_000
    num_envs: int = 1
    threads: int = 1
    precision: str = "float32"
    save_replay: bool = True
    # [env]
    hints: str = "none"
    vocab: str = "auto"          # auto | langroom | shared
    pad_vocab_to: int = 0
    episode_len: int = 0         # 0 = environment default
    # [model]
    deter: int = 192
    groups: int = 8
    classes: int = 8
    units: int = 192
    layers: int = 2
    token_embed: int = 32
    cnn_depth: int = 24
    bins: int = 63
    beta_reg: float = 0.1
    beta_pred: float = 0.5
    unimix: float = 0.01
    free_nats: float = 1.0
    # [train]
    batch_size: int = 8
    batch_length: int = 48
    train_ratio: float = 16.0
    lr: float = 1e-4
    lr_actor: float = 1e-4
    lr_critic: float = 1e-4
    clip: float = 100.0
    replay_capacity: int = 1_000_000
    replay_min: int = 1_500
    imag_starts: int = 256       # 0 = imagine from every batch state
    # [policy]
    horizon: int = 15
    gamma: float = 0.99
    lam: float = 0.95
    entropy: float = 3e-4
    beta_lm: float = 0.0
    ema_critic: bool = False
    # [pretrain]
    corpus_docs: int = 2_000
    corpus_seed: int = 7
    heldout_frac: float = 0.1
    pretrain_steps: int = 5_000
    pretrain_eval_every: int = 500

    def validate(self) -> None:
        positive = ("steps", "eval_every", "eval_episodes", "checkpoint_every",
                    "num_envs", "deter", "groups", "classes", "units", "layers",
                    "batch_size", "batch_length", "bins", "horizon",
                    "replay_capacity", "replay_min")
        for name in positive:
            if getattr(self, name) <= 0:
                raise ConfigurationError(f"config field {name} must be positive")
        if self.train_ratio < 1:
            raise ConfigurationError("train_ratio must be >= 1")
        if not 0 < self.gamma <= 1 or not 0 <= self.lam <= 1:
            raise ConfigurationError("gamma in (0,1], lam in [0,1] required")
        if self.precision not in ("float32", "float64"):
            raise ConfigurationError(f"unknown precision {self.precision!r}")
        if self.vocab not in ("auto", "langroom", "shared"):
            raise ConfigurationError(f"unknown vocab mode {self.vocab!r}")


SECTIONS = {
    "run": ["env", "seed", "steps", "eval_every", "eval_episodes",
            "checkpoint_every", "num_envs", "threads", "precision", "save_replay"],
    "env": ["hints", "vocab", "pad_vocab_to", "episode_len"],
    "model": ["deter", "groups", "classes", "units", "layers", "token_embed",
              "cnn_depth", "bins", "beta_reg", "beta_pred", "unimix", "free_nats"],
    "train": ["batch_size", "batch_length", "train_ratio", "lr", "lr_actor",
              "lr_critic", "clip", "replay_capacity", "replay_min", "imag_starts"],
    "policy": ["horizon", "gamma", "lam", "entropy", "beta_lm", "ema_critic"],
    "pretrain": ["corpus_docs", "corpus_seed", "heldout_frac", "pretrain_steps",
                 "pretrain_eval_every"],
}

_FIELDS = {f.name: f for f in dataclasses.fields(RunConfig)}


PRESETS: dict[str, dict] = {
    "chain_small": dict(
        env="chain", steps=50_000, eval_every=2_000, eval_episodes=50,
        checkpoint_every=25_000, deter=48, groups=4, classes=4, units=48,
        layers=1, token_embed=4, batch_size=8, batch_length=16,
        train_ratio=32.0, replay_min=400, imag_starts=128, horizon=10,
        bins=63),
    "toggle_tiny": dict(
        env="toggle", steps=30_000, eval_every=2_000, eval_episodes=20,
        checkpoint_every=15_000, deter=48, groups=4, classes=4, units=48,
        layers=1, token_embed=4, batch_size=8, batch_length=16,
        train_ratio=32.0, replay_min=400, imag_starts=128, horizon=10),
    "langroom_small": dict(
        env="langroom", vocab="langroom", steps=3_000_000, eval_every=40_000,
        eval_episodes=30, checkpoint_every=500_000, deter=192, units=192,
        batch_size=8, batch_length=48, train_ratio=16.0, replay_min=3_000,
        imag_starts=192),
    "langroom_shared": dict(
        env="langroom", vocab="shared", steps=3_000_000, eval_every=40_000,
        eval_episodes=30, checkpoint_every=500_000, deter=192, units=192,
        batch_size=8, batch_length=48, train_ratio=16.0, replay_min=3_000,
        imag_starts=192),
    "langroom_bigvocab": dict(
        env="langroom", vocab="langroom", pad_vocab_to=10_000, beta_lm=1.0,
        steps=400_000, eval_every=40_000, eval_episodes=30,
        checkpoint_every=200_000, deter=192, units=192, batch_size=8,
        batch_length=48, train_ratio=16.0, replay_min=3_000, imag_starts=64),
    "homegrid_lite": dict(
        env="homegrid", vocab="shared", steps=2_000_000, eval_every=50_000,
        eval_episodes=30, checkpoint_every=500_000, deter=192, units=192,
        batch_size=8, batch_length=48, train_ratio=32.0, replay_min=3_000,
        imag_starts=192),
    "pretrain_grammar": dict(
        env="langroom", vocab="shared", pretrain_steps=5_000, batch_size=8,
        batch_length=48, corpus_docs=2_000),
}


def load_config(source: str | None = None, overrides: list[str] = ()) -> RunConfig:
    """Build a config from a preset name or INI file path plus overrides."""
    cfg = RunConfig()
    if source:
        if source in PRESETS:
            cfg = dataclasses.replace(cfg, **PRESETS[source])
        else:
            cfg = _from_ini(source)
    for ov in overrides:
        if "=" not in ov:
            raise ConfigurationError(f"override {ov!r} must look like key=value")
        key, value = ov.split("=", 1)
        key = key.strip()
        if key not in _FIELDS:
            raise ConfigurationError(f"unknown config key {key!r}")
        setattr(cfg, key, _convert(key, value.strip()))
    cfg.validate()
    return cfg


def _convert(key: str, raw: str):
    typ = _FIELDS[key].type
    if typ in ("int", int):
        return int(raw)
    if typ in ("float", float):
        return float(raw)
    if typ in ("bool", bool):
        if raw.lower() in ("1", "true", "yes"):
            return True
        if raw.lower() in ("0", "false", "no"):
            return False
        raise ConfigurationError(f"bad boolean for {key}: {raw!r}")
    return raw


def _from_ini(path: str) -> RunConfig:
    parser = configparser.ConfigParser()
    read = parser.read(path)
    if not read:
        raise ConfigurationError(f"config file {path!r} not found")
    cfg = RunConfig()
    for section in parser.sections():
        for key, value in parser.items(section):
            if key not in _FIELDS:
                raise ConfigurationError(f"unknown config key {key!r} in {path}")
            setattr(cfg, key, _convert(key, value))
    return cfg


def config_text(cfg: RunConfig) -> str:
    """Canonical INI serialization (stable field order, all defaults shown)."""
    parser = configparser.ConfigParser()
    for section, names in SECTIONS.items():
        parser[section] = {}
        for name in names:
            parser[section][name] = str(getattr(cfg, name))
    buf = io.StringIO()
    parser.write(buf)
    return buf.getvalue()


def save_config(cfg: RunConfig, path) -> None:
    with open(path, "w", encoding="utf8") as fh:
        fh.write(config_text(cfg))
