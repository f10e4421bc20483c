"""Flat `key = value` training configuration files.

Unknown keys are errors.  The ``scale`` preset fills in the training-loop
defaults (epochs, batch size, BPTT steps); explicit keys override it.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass

from .errors import ConfigError

SCALE_DEFAULTS = {
    # scale: (max_epochs, batch_size, bptt)
    "data-s": (50, 20, 70),
    "data-l": (25, 100, 35),
}


@dataclass
class TrainConfig:
    """Everything a training run needs, checkpointable as a dict."""

    variant: str = "syl-concat"
    d_s: int = 0
    d_w: int = 0
    d_hw: int = 0
    d_lm: int = 0
    highway_layers: int = 2
    cnn_max_width: int = 0
    cnn_depth_unit: int = 0

    scale: str = "data-s"
    max_epochs: int = 0          # 0: take the scale default
    batch_size: int = 0
    bptt: int = 0

    lr: float = 1.0
    clip_norm: float = 5.0
    dropout: float = 0.5
    init_range: float = 0.05
    seed: int = 0

    budget: int = 0              # 0: unchecked
    budget_tolerance: float = 0.05
    softmax: str = "full"        # full | sampled
    sample_fraction: float = 0.2
    precision: str = "f64"       # f64 | f32

    mode: str = "liang"          # liang | chars | external
    patterns: str = ""           # empty: bundled English patterns
    exceptions: str = ""
    overrides: str = ""
    word_cap: int = 0

    train: str = ""
    valid: str = ""
    test: str = ""
    vocab_dir: str = ""

    # explicit sizes for counting parameters without data
    vocab_size: int = 0
    subword_vocab_size: int = 0
    max_subwords: int = 0

    def __post_init__(self):
        if self.scale not in SCALE_DEFAULTS:
            raise ConfigError(f"unknown scale {self.scale!r}; expected data-s or data-l")
        epochs, batch, bptt = SCALE_DEFAULTS[self.scale]
        self.max_epochs = self.max_epochs or epochs
        self.batch_size = self.batch_size or batch
        self.bptt = self.bptt or bptt
        if self.softmax not in ("full", "sampled"):
            raise ConfigError(f"softmax must be full or sampled, got {self.softmax!r}")
        if self.precision not in ("f64", "f32"):
            raise ConfigError(f"precision must be f64 or f32, got {self.precision!r}")
        for key in ("lr", "clip_norm", "init_range", "batch_size", "bptt",
                    "max_epochs", "budget_tolerance"):
            if getattr(self, key) <= 0:
                raise ConfigError(f"{key} must be positive")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError("dropout must be in [0, 1)")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @staticmethod
    def from_dict(values: dict) -> "TrainConfig":
        fields = {f.name for f in dataclasses.fields(TrainConfig)}
        unknown = set(values) - fields
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return TrainConfig(**values)


def _coerce(name: str, kind, raw: str, lineno: int):
    try:
        if kind is int:
            return int(float(raw)) if ("e" in raw or "." in raw) else int(raw)
        if kind is float:
            return float(raw)
        return raw
    except ValueError:
        raise ConfigError(f"line {lineno}: cannot parse {name} = {raw!r}") from None


def parse_config(text: str) -> TrainConfig:
    """Parse flat ``key = value`` text; ``#`` starts a comment."""
    types = {f.name: f.type for f in dataclasses.fields(TrainConfig)}
    kinds = {"int": int, "float": float, "str": str}
    values: dict = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key = value, got {line!r}")
        key, _, val = line.partition("=")
        key, val = key.strip(), val.strip()
        if key not in types:
            raise ConfigError(f"line {lineno}: unknown config key {key!r}")
        if key in values:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        values[key] = _coerce(key, kinds[types[key]], val, lineno)
    return TrainConfig.from_dict(values)


def load_config(path) -> TrainConfig:
    with open(path, encoding="utf-8") as f:
        return parse_config(f.read())
