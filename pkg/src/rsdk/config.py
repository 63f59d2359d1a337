"""Flat ``key = value`` run configuration with ``#`` comments."""

from __future__ import annotations

from dataclasses import dataclass, fields, replace
import typing

from .data import AUGMENT_OPS, SynthConfig
from .errors import FormatError, ParameterError
from .model import ModelConfig


@dataclass(frozen=True)
class RunConfig:
    # model
    k: int = 32
    heads: int = 4
    enc_layers: int = 2
    dec_layers: int = 2
    num_queries: int = 10
    stage_channels: tuple = (8, 16, 64)
    stage_strides: tuple = (2, 2, 2)
    d_ff: int = 128
    dropout: float = 0.1
    # training
    lr_backbone: float = 1e-5
    lr_transformer: float = 1e-4
    epochs: int = 125
    lr_drop_epoch: int = 100
    lr_drop_factor: float = 10.0
    seed: int = 0
    batch_size: int = 4
    augment: tuple = AUGMENT_OPS
    # data and evaluation
    image_size: int = 64
    synth_frames: int = 20
    synth_min_objects: int = 1
    synth_max_objects: int = 3
    score_floor: float = 0.05
    # paths
    dataset: str = "data/synth"
    checkpoint: str = "runs/model.ckpt"
    report: str = "runs/report.txt"
    log: str = "runs/train.log"

    def __post_init__(self):
        if self.lr_backbone <= 0 or self.lr_transformer <= 0:
            raise ParameterError("learning rates must be positive")
        if self.epochs < 1 or self.batch_size < 1:
            raise ParameterError("epochs and batch_size must be at least 1")
        if self.lr_drop_factor <= 0:
            raise ParameterError("lr_drop_factor must be positive")
        if not 0 <= self.dropout < 1:
            raise ParameterError("dropout must lie in [0, 1)")
        if self.synth_max_objects > self.num_queries:
            raise ParameterError("synthetic scenes may not hold more objects than queries")
        if set(self.augment) - set(AUGMENT_OPS):
            raise ParameterError(f"unknown augmentation ops in {self.augment}")
        if len(self.stage_channels) != len(self.stage_strides):
            raise ParameterError("stage_channels and stage_strides differ in length")

    @property
    def model(self) -> ModelConfig:
        return ModelConfig(self.k, self.heads, self.enc_layers, self.dec_layers, self.num_queries,
                           tuple(self.stage_channels), tuple(self.stage_strides), self.d_ff, self.dropout)

    def synth(self, frames=None) -> SynthConfig:
        return SynthConfig(frames=self.synth_frames if frames is None else frames,
                           width=self.image_size, height=self.image_size,
                           count=(self.synth_min_objects, self.synth_max_objects), seed=self.seed)

    def lr_at(self, epoch: int):
        """Base rates before ``lr_drop_epoch`` (1-based), divided by the factor from it on."""
        f = 1.0 / self.lr_drop_factor if epoch >= self.lr_drop_epoch else 1.0
        return self.lr_backbone * f, self.lr_transformer * f

    def with_(self, **kw) -> "RunConfig":
        return replace(self, **kw)


_HINTS = typing.get_type_hints(RunConfig)


def _item_type(name):
    return str if name == "augment" else int


def _format(name, value) -> str:
    if _HINTS[name] is tuple:
        return ",".join(str(v) for v in value)
    if _HINTS[name] is float:
        return repr(float(value))
    return str(value)


def _parse_value(name, text, lineno):
    kind = _HINTS[name]
    try:
        if kind is tuple:
            conv = _item_type(name)
            return tuple(conv(v.strip()) for v in text.split(",") if v.strip())
        if kind is int:
            return int(text)
        if kind is float:
            return float(text)
        return text
    except ValueError:
        raise FormatError(f"config line {lineno}: bad value {text!r} for {name}") from None


def parse_config(text: str, base: RunConfig | None = None) -> RunConfig:
    """Parse config text; keys not given keep their values from ``base``."""
    known = {f.name for f in fields(RunConfig)}
    values = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, val = line.partition("=")
        key = key.strip()
        if not sep:
            raise FormatError(f"config line {lineno}: expected 'key = value'")
        if key not in known:
            raise FormatError(f"config line {lineno}: unknown key {key!r}")
        values[key] = _parse_value(key, val.strip(), lineno)
    return replace(base or RunConfig(), **values)


def serialize_config(cfg: RunConfig) -> str:
    return "".join(f"{f.name} = {_format(f.name, getattr(cfg, f.name))}\n" for f in fields(cfg))


def load_config(path) -> RunConfig:
    with open(path) as fh:
        return parse_config(fh.read())


def save_config(cfg: RunConfig, path):
    with open(path, "w") as fh:
        fh.write(serialize_config(cfg))
