"""Experiment configuration and its ``key = value`` file format."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from pathlib import Path

from .. import phantom
from ..objective import ConfigError, LossWeights

VARIANTS = ("multimodal", "vision-only", "numeric-category", "single-prompt", "no-tuning")
TEXT_VARIANTS = ("multimodal", "single-prompt", "no-tuning")


@dataclass
class ExperimentConfig:
    variant: str = "multimodal"
    grid: tuple = phantom.DEFAULT_GRID
    patch: tuple = phantom.DEFAULT_GRID
    spacing: tuple = phantom.DEFAULT_SPACING
    # text side
    n_prompts: int = 4
    prompt_len: int = 8
    lm_dim: int = 64
    lm_layers: int = 2
    lm_heads: int = 4
    lm_capacity: int = 64
    lm_steps: int = 2000
    # image side and alignment
    channels: tuple = (16, 32, 64, 128)
    upsample: str = "transposed"
    align_depth: int = 2
    align_heads: int = 4
    align_deepest: int = 0  # 0 aligns every level
    token_cap: int = 64 * 64 * 32
    # optimisation
    lambda_ce: float = 1.0
    lambda_dice: float = 1.0
    lr: float = 1e-4
    weight_decay: float = 1e-2
    epochs: int = 30
    batch_size: int = 2
    train_fraction: float = 1.0
    # data
    train_cases: int = 256
    test_cases: int = 64
    train_seed: int = 1001
    test_seed: int = 2002
    data_dir: str = ""
    omit: tuple = ()
    omit_rate: float = 0.0  # chance per training sample of hiding one clinical field from the text
    seed: int = 0
    # inference
    overlap: float = 0.5
    threshold: float = 0.5

    @property
    def levels(self) -> int:
        return len(self.channels)

    @property
    def weights(self) -> LossWeights:
        return LossWeights(self.lambda_ce, self.lambda_dice)

    @property
    def n_train_used(self) -> int:
        return max(1, int(round(self.train_fraction * self.train_cases)))

    def replace(self, **changes) -> "ExperimentConfig":
        cfg = dataclasses.replace(self, **changes)
        cfg.validate()
        return cfg

    def validate(self) -> "ExperimentConfig":
        if self.variant not in VARIANTS:
            raise ConfigError(f"variant {self.variant!r} not in {VARIANTS}")
        if len(self.grid) != 3 or len(self.patch) != 3 or len(self.spacing) != 3:
            raise ConfigError("grid, patch and spacing need three values")
        if any(p > g for p, g in zip(self.patch, self.grid)):
            raise ConfigError(f"patch {self.patch} larger than grid {self.grid}")
        f = 2 ** (self.levels - 1)
        if any(p % f for p in self.patch):
            raise ConfigError(f"patch {self.patch} not divisible by {f} for {self.levels} levels")
        if not 0.0 < self.train_fraction <= 1.0:
            raise ConfigError(f"train_fraction {self.train_fraction} outside (0, 1]")
        if self.variant == "no-tuning" and self.prompt_len != 0:
            raise ConfigError("no-tuning variant uses raw text only: prompt_len must be 0")
        if self.variant == "single-prompt" and self.n_prompts != 1:
            raise ConfigError("single-prompt variant needs n_prompts = 1")
        if self.variant in ("multimodal", "single-prompt") and self.prompt_len < 1:
            raise ConfigError(f"{self.variant} needs prompt_len >= 1")
        if self.n_prompts < 1:
            raise ConfigError("n_prompts must be >= 1")
        if not 0 <= self.align_deepest <= self.levels:
            raise ConfigError(f"align_deepest {self.align_deepest} outside 0..{self.levels}")
        if self.upsample not in ("transposed", "trilinear"):
            raise ConfigError(f"upsample {self.upsample!r} not in (transposed, trilinear)")
        if not 0.0 <= self.overlap < 1.0:
            raise ConfigError("overlap must lie in [0, 1)")
        bad = set(self.omit) - set(phantom.FIELDS)
        if bad:
            raise ConfigError(f"cannot omit unknown fields {sorted(bad)}")
        if not 0.0 <= self.omit_rate <= 1.0:
            raise ConfigError("omit_rate must lie in [0, 1]")
        if self.epochs < 0 or self.batch_size < 1:
            raise ConfigError("epochs must be >= 0 and batch_size >= 1")
        if self.lr <= 0:
            raise ConfigError("lr must be positive")
        self.weights  # raises on bad loss weights
        return self


def variant_defaults(variant: str, cfg: ExperimentConfig) -> ExperimentConfig:
    """Base config switched to ``variant`` with its forced prompt settings."""
    if variant == "single-prompt":
        return cfg.replace(variant=variant, n_prompts=1)
    if variant == "no-tuning":
        return cfg.replace(variant=variant, n_prompts=1, prompt_len=0)
    return cfg.replace(variant=variant)


_TUPLE_INT = {"grid", "patch", "channels"}
_TUPLE_FLOAT = {"spacing"}
_TUPLE_STR = {"omit"}


def _parse_value(name: str, text: str, default):
    text = text.strip()
    try:
        if name in _TUPLE_INT:
            return tuple(int(v) for v in text.replace(",", " ").split())
        if name in _TUPLE_FLOAT:
            return tuple(float(v) for v in text.replace(",", " ").split())
        if name in _TUPLE_STR:
            return tuple(v for v in text.replace(",", " ").split())
        if isinstance(default, bool):
            if text.lower() not in ("true", "false", "1", "0"):
                raise ValueError(text)
            return text.lower() in ("true", "1")
        if isinstance(default, int):
            return int(text)
        if isinstance(default, float):
            return float(text)
        return text
    except ValueError:
        raise ConfigError(f"bad value for {name}: {text!r}") from None


def parse_config(text: str, base: ExperimentConfig | None = None) -> ExperimentConfig:
    base = base if base is not None else ExperimentConfig()
    known = {f.name: getattr(base, f.name) for f in dataclasses.fields(base)}
    values = {}
    for n, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key = key.strip()
        if not sep:
            raise ConfigError(f"line {n}: expected 'key = value', got {line!r}")
        if key not in known:
            raise ConfigError(f"line {n}: unknown key {key!r}")
        values[key] = _parse_value(key, value, known[key])
    return dataclasses.replace(base, **values).validate()


def load_config(path) -> ExperimentConfig:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return parse_config(text)


def format_config(cfg: ExperimentConfig) -> str:
    lines = []
    for f in dataclasses.fields(cfg):
        v = getattr(cfg, f.name)
        if isinstance(v, tuple):
            v = " ".join(str(x) for x in v)
        lines.append(f"{f.name} = {v}")
    return "\n".join(lines) + "\n"
