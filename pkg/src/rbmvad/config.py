"""Run configuration stored as a flat ``key=value`` text file."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, fields

import numpy as np

from .patches import ScaleConfig
from .rbm import TrainConfig


@dataclass(frozen=True)
class RunConfig:
    scales: tuple = (1.0, 0.5, 0.25)
    patch_h: int = 12
    patch_w: int = 18
    overlap: float = 0.5
    k_cluster: int = 4
    k_detect: int = 100
    learning_rate: float = 0.1
    cd_steps: int = 1
    epochs: int = 50
    cluster_epochs: int = 50
    batch_size: int = 64
    init_weight_std: float = 0.01
    persistent: bool = False
    momentum: float = 0.0
    weight_decay: float = 0.0
    # 0 keeps every training patch of a cluster
    max_train_patches: int = 0
    beta: float = 0.003
    gamma: int = 10
    chunk_length: int = 20
    update_epochs: int = 20
    seed: int = 0
    resize_h: int = 240
    resize_w: int = 360

    def __post_init__(self):
        object.__setattr__(self, "scales", tuple(float(s) for s in self.scales))
        self.scale_config()
        for name in ("patch_h", "patch_w", "k_cluster", "k_detect", "cd_steps", "batch_size",
                     "gamma", "chunk_length", "resize_h", "resize_w"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        for name in ("epochs", "cluster_epochs", "update_epochs", "max_train_patches", "seed"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if not self.beta > 0:
            raise ValueError("beta must be positive")

    @property
    def frame_shape(self) -> tuple:
        return (self.resize_h, self.resize_w)

    def scale_config(self) -> ScaleConfig:
        return ScaleConfig(self.scales, self.patch_h, self.patch_w, self.overlap)

    def train_config(self, n_hidden: int, epochs: int, seed: int) -> TrainConfig:
        return TrainConfig(
            n_hidden=n_hidden,
            learning_rate=self.learning_rate,
            cd_steps=self.cd_steps,
            epochs=epochs,
            batch_size=self.batch_size,
            seed=seed,
            init_weight_std=self.init_weight_std,
            persistent=self.persistent,
            momentum=self.momentum,
            weight_decay=self.weight_decay,
        )

    def replace(self, **changes) -> "RunConfig":
        return dataclasses.replace(self, **changes)

    def emit(self) -> str:
        lines = []
        for f in fields(self):
            value = getattr(self, f.name)
            if f.name == "scales":
                text = ",".join(repr(s) for s in value)
            elif isinstance(value, bool):
                text = "true" if value else "false"
            else:
                text = repr(value)
            lines.append(f"{f.name}={text}")
        return "\n".join(lines) + "\n"

    @classmethod
    def parse(cls, text: str, base: "RunConfig | None" = None) -> "RunConfig":
        """Parse ``key=value`` lines; ``#`` starts a comment. Keys not given
        keep the value from ``base`` (or the defaults)."""
        pairs = []
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"line {lineno}: expected key=value, got {raw!r}")
            key, value = (s.strip() for s in line.split("=", 1))
            pairs.append((key, value))
        return (base or cls()).with_overrides(pairs)

    def with_overrides(self, pairs) -> "RunConfig":
        known = {f.name: f for f in fields(self)}
        defaults = RunConfig()
        changes = {}
        for key, value in pairs:
            if key not in known:
                raise ValueError(f"unknown configuration key {key!r}")
            changes[key] = _coerce(key, value, getattr(defaults, key))
        return dataclasses.replace(self, **changes)


def _coerce(key, text, default):
    try:
        if key == "scales":
            return tuple(float(s) for s in text.split(",") if s.strip())
        if isinstance(default, bool):
            lowered = text.lower()
            if lowered not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(text)
            return lowered in ("true", "1", "yes")
        if isinstance(default, int):
            return int(text)
        return float(text)
    except ValueError:
        raise ValueError(f"invalid value {text!r} for {key}") from None


def derive_seed(seed: int, *keys: int) -> int:
    """Independent, reproducible child seed for a sub-task."""
    ss = np.random.SeedSequence(seed, spawn_key=tuple(int(k) for k in keys))
    return int(ss.generate_state(1, dtype=np.uint64)[0])
