"""Encoder and training configuration with flat key-value file support."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

EMBED_DIM = 512  # every encoder branch projects to this width


@dataclass
class EncoderConfig:
    gcn_layers: int = 4
    gcn_hidden: int = 256
    gcn_dropout: float = 0.15
    tf_layers: int = 6
    d_model: int = 512
    n_heads: int = 8
    d_ff: int = 2048
    tf_dropout: float = 0.1
    schnet_blocks: int = 4
    schnet_hidden: int = 256
    rbf_k: int = 50
    cutoff: float = 10.0
    exp_hidden: int = 64
    desc_hidden: int = 128
    fusion_dropout: float = 0.1


@dataclass
class StageConfig:
    lr: float
    warmup_epochs: int
    max_epochs: int
    patience: int
    clip_norm: float
    t0: int = 0          # warm-restart initial period; 0 = plain cosine decay
    t_mult: int = 2
    weight_decay: float = 5e-4
    beta1: float = 0.9
    beta2: float = 0.999
    batch_size: int = 48
    accumulation: int = 2
    lr_min: float = 0.0


def stage1_defaults() -> StageConfig:
    return StageConfig(lr=1e-4, warmup_epochs=10, max_epochs=250, patience=50,
                       clip_norm=1.0, t0=30, t_mult=2)


def stage2_defaults() -> StageConfig:
    return StageConfig(lr=2e-5, warmup_epochs=5, max_epochs=80, patience=25,
                       clip_norm=0.5, t0=0)


@dataclass
class TrainConfig:
    seed: int = 0
    n_aug: int = 2
    rare_floor: int = 5
    split_fractions: tuple[float, float, float] = (0.8, 0.1, 0.1)
    stage1: StageConfig = field(default_factory=stage1_defaults)
    stage2: StageConfig = field(default_factory=stage2_defaults)


def _set_field(obj, name: str, raw: str) -> None:
    f = {f.name: f for f in dataclasses.fields(obj)}.get(name)
    if f is None:
        raise KeyError(name)
    if f.type in ("int", int):
        setattr(obj, name, int(raw))
    elif f.type in ("float", float):
        setattr(obj, name, float(raw))
    elif name == "split_fractions":
        parts = tuple(float(p) for p in raw.split("/"))
        setattr(obj, name, parts)
    else:
        setattr(obj, name, raw)


def load_config(path: str | Path) -> tuple[EncoderConfig, TrainConfig]:
    """Parse a flat `key = value` file.

    Stage keys carry a stage1_/stage2_ prefix (e.g. stage1_lr = 3e-4);
    all other keys map onto EncoderConfig or TrainConfig fields directly.
    """
    enc = EncoderConfig()
    train = TrainConfig()
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{lineno}: expected key = value")
        key, raw = (p.strip() for p in line.split("=", 1))
        try:
            if key.startswith("stage1_"):
                _set_field(train.stage1, key[len("stage1_"):], raw)
            elif key.startswith("stage2_"):
                _set_field(train.stage2, key[len("stage2_"):], raw)
            else:
                try:
                    _set_field(enc, key, raw)
                except KeyError:
                    _set_field(train, key, raw)
        except KeyError:
            raise ValueError(f"{path}:{lineno}: unknown key {key!r}") from None
    return enc, train


def dump_config(enc: EncoderConfig, train: TrainConfig) -> str:
    lines = []
    for f in dataclasses.fields(enc):
        lines.append(f"{f.name} = {getattr(enc, f.name)}")
    for f in dataclasses.fields(train):
        if f.name in ("stage1", "stage2"):
            stage = getattr(train, f.name)
            for sf in dataclasses.fields(stage):
                lines.append(f"{f.name}_{sf.name} = {getattr(stage, sf.name)}")
        elif f.name == "split_fractions":
            lines.append(f"split_fractions = {'/'.join(str(x) for x in train.split_fractions)}")
        else:
            lines.append(f"{f.name} = {getattr(train, f.name)}")
    return "\n".join(lines) + "\n"
