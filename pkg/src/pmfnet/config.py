"""Run configuration: a flat "key = value" text file with typed validation.

Unknown keys are rejected, every value is range-checked, and ``serialize``
produces a canonical rendering (fixed key order) used both for the emitted
default file and for checkpoint hashing.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from pathlib import Path

from .data import SIGNAL_MODES, SynthConfig
from .errors import ConfigError
from .model import VARIANTS, ModelConfig
from .train import TrainConfig
from .vit import VitConfig


def _int_range(lo=None, hi=None):
    def check(v):
        if lo is not None and v < lo:
            raise ValueError(f"must be >= {lo}")
        if hi is not None and v > hi:
            raise ValueError(f"must be <= {hi}")
    return check


def _float_range(lo=None, hi=None, lo_open=False, hi_open=False):
    def check(v):
        if lo is not None and (v <= lo if lo_open else v < lo):
            raise ValueError(f"must be {'>' if lo_open else '>='} {lo}")
        if hi is not None and (v >= hi if hi_open else v > hi):
            raise ValueError(f"must be {'<' if hi_open else '<='} {hi}")
    return check


def _choice(options):
    def check(v):
        if v not in options:
            raise ValueError(f"must be one of {', '.join(options)}")
    return check


# key -> (type, default, validator)
SCHEMA = {
    "seed": (int, 0, _int_range(lo=0)),
    "variant": (str, "full", _choice(VARIANTS)),
    "synth.train_samples": (int, 512, _int_range(lo=1)),
    "synth.test_samples": (int, 128, _int_range(lo=1)),
    "synth.frames": (int, 16, _int_range(lo=2)),
    "synth.image_size": (int, 32, _int_range(lo=4)),
    "synth.noise_std": (float, 0.1, _float_range(lo=0.0)),
    "synth.class_balance": (float, 0.5, _float_range(lo=0.0, hi=1.0)),
    "synth.signal": (str, "both", _choice(SIGNAL_MODES)),
    "vit.image_size": (int, 32, _int_range(lo=4)),
    "vit.patch_size": (int, 8, _int_range(lo=1)),
    "vit.embed_dim": (int, 64, _int_range(lo=2)),
    "vit.depth": (int, 2, _int_range(lo=1)),
    "vit.heads": (int, 4, _int_range(lo=1)),
    "model.feature_dim": (int, 32, _int_range(lo=2)),
    "mfe.layers": (int, 2, _int_range(lo=1)),
    "mfe.heads": (int, 4, _int_range(lo=1)),
    "taf.layers": (int, 2, _int_range(lo=1)),
    "taf.heads": (int, 4, _int_range(lo=1)),
    "train.learning_rate": (float, 1e-3, _float_range(lo=0.0, lo_open=True)),
    "train.dropout": (float, 0.2, _float_range(lo=0.0, hi=1.0, hi_open=True)),
    "train.l2_head": (float, 0.001, _float_range(lo=0.0)),
    "train.batch_size": (int, 16, _int_range(lo=1)),
    "train.epochs": (int, 20, _int_range(lo=1)),
    "train.threshold": (float, 0.5, _float_range(lo=0.0, hi=1.0, lo_open=True, hi_open=True)),
}


@dataclass
class RunConfig:
    values: dict = field(default_factory=dict)

    def __getitem__(self, key):
        return self.values[key]

    def model_config(self, dtype: str = "f32") -> ModelConfig:
        cfg = ModelConfig(
            vit=VitConfig(
                image_size=self["vit.image_size"],
                patch_size=self["vit.patch_size"],
                embed_dim=self["vit.embed_dim"],
                depth=self["vit.depth"],
                heads=self["vit.heads"],
            ),
            feature_dim=self["model.feature_dim"],
            mfe_layers=self["mfe.layers"],
            mfe_heads=self["mfe.heads"],
            taf_layers=self["taf.layers"],
            taf_heads=self["taf.heads"],
            dropout=self["train.dropout"],
            dtype=dtype,
        )
        try:
            cfg.validate()
        except Exception as exc:
            raise ConfigError(str(exc)) from None
        return cfg

    def train_config(self) -> TrainConfig:
        return TrainConfig(
            learning_rate=self["train.learning_rate"],
            dropout=self["train.dropout"],
            l2_head=self["train.l2_head"],
            batch_size=self["train.batch_size"],
            epochs=self["train.epochs"],
            seed=self["seed"],
            variant=self["variant"],
            threshold=self["train.threshold"],
        )

    def synth_config(self, split: str) -> SynthConfig:
        if split == "train":
            n, seed = self["synth.train_samples"], self["seed"]
        elif split == "test":
            n, seed = self["synth.test_samples"], self["seed"] + 9973
        else:
            raise ConfigError(f"unknown split {split!r}")
        return SynthConfig(
            n_samples=n,
            frames=self["synth.frames"],
            image_size=self["synth.image_size"],
            noise_std=self["synth.noise_std"],
            class_balance=self["synth.class_balance"],
            seed=seed,
            signal=self["synth.signal"],
        )


def default_config() -> RunConfig:
    return RunConfig(values={key: spec[1] for key, spec in SCHEMA.items()})


def _parse_value(key: str, raw: str):
    typ, _, check = SCHEMA[key]
    raw = raw.strip()
    try:
        if typ is int:
            value = int(raw)
        elif typ is float:
            value = float(raw)
        else:
            value = raw
        check(value)
    except ValueError as exc:
        raise ConfigError(f"invalid value for {key}: {raw!r} ({exc})") from None
    return value


def parse_config_text(text: str) -> RunConfig:
    cfg = default_config()
    for line_no, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"line {line_no}: expected 'key = value', got {line!r}")
        key, raw = (part.strip() for part in line.split("=", 1))
        if key not in SCHEMA:
            raise ConfigError(f"line {line_no}: unknown key {key!r}")
        cfg.values[key] = _parse_value(key, raw)
    return cfg


def load_config(path) -> RunConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file {path} does not exist")
    return parse_config_text(path.read_text(encoding="utf-8"))


def serialize(cfg: RunConfig) -> str:
    lines = []
    section = None
    for key in SCHEMA:
        head = key.split(".")[0] if "." in key else ""
        if head != section:
            if lines:
                lines.append("")
            section = head
        value = cfg.values[key]
        if isinstance(value, float):
            rendered = repr(value)
        else:
            rendered = str(value)
        lines.append(f"{key} = {rendered}")
    return "\n".join(lines) + "\n"


def config_hash(cfg: RunConfig) -> str:
    return hashlib.sha256(serialize(cfg).encode("utf-8")).hexdigest()[:16]
