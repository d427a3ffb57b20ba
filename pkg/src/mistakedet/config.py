"""Run configuration: one JSON document covering every stage.

Unknown keys are rejected, values are type-checked, and each section is
validated by the dataclass it feeds. ``apply_overrides`` handles
``--set section.key=value`` (values parsed as JSON, else taken as strings).
"""

from __future__ import annotations

import copy
import json
import types
import typing
from dataclasses import dataclass, field, fields
from pathlib import Path

from .data import SyntheticTaskSpec
from .encoder import EncoderConfig
from .explain import DEFAULT_PROMPT, FEATURES_PLACEHOLDER, GateConfig
from .model import ModelConfig
from .training import TrainConfig
from .video_qformer import VideoQFormerConfig


class ConfigError(ValueError):
    pass


@dataclass
class DataSection:
    num_videos: int = 40
    steps_per_task: int = 4
    frame_size: int = 64
    error_rate: float = 0.5
    fps: float = 1.0
    frames_per_step: int = 4
    noise: float = 0.02


@dataclass
class StreamSection:
    t_s: int = 8
    stride: int = 1
    fps: float = 1.0  # frame rate assumed for image directories


@dataclass
class EncoderSection:
    patch_size: int = 16
    vit_layers: int = 2
    vit_heads: int = 4
    vit_dim: int = 64
    spatial_queries: int = 4
    d1: int = 64
    frozen: bool = True


@dataclass
class QFormerSection:
    t_q: int = 8
    d2: int = 64
    layers: int = 2
    heads: int = 4
    max_positions: int | None = None  # defaults to stream.t_s
    use_temporal_positions: bool = True
    context_norm: bool = True
    aggregator: str = "max"


@dataclass
class ExplainSection:
    tau: float = 0.5
    prompt_template: str = FEATURES_PLACEHOLDER + " " + DEFAULT_PROMPT
    generator: str = "mock"  # mock | external | none
    d_llm: int = 32
    endpoint: str | None = None
    timeout: float = 10.0
    retries: int = 1
    async_generation: bool = False


@dataclass
class TrainSection:
    learning_rate: float = 0.05
    epochs: int = 30
    batch_size: int = 50
    freeze: list[str] = field(default_factory=lambda: ["visual_encoder"])
    detection_weight: float = 1.0
    alignment_weight: float = 0.1
    optimizer: str = "momentum"
    momentum: float = 0.9
    pos_weight: float = 1.0
    max_steps: int | None = None
    grad_clip: float | None = 1.0
    windows: str = "frame"  # frame | segment
    checkpoint_every: int | None = None


@dataclass
class PathsSection:
    data: str | None = None
    checkpoint: str | None = None
    frames: str | None = None
    out: str | None = None
    predictions: str | None = None
    annotations: str | None = None


@dataclass
class RunConfig:
    seed: int = 0
    data: DataSection = field(default_factory=DataSection)
    stream: StreamSection = field(default_factory=StreamSection)
    encoder: EncoderSection = field(default_factory=EncoderSection)
    qformer: QFormerSection = field(default_factory=QFormerSection)
    explain: ExplainSection = field(default_factory=ExplainSection)
    train: TrainSection = field(default_factory=TrainSection)
    paths: PathsSection = field(default_factory=PathsSection)

    # -- derived component configs -------------------------------------------

    def synthetic_spec(self) -> SyntheticTaskSpec:
        return SyntheticTaskSpec(seed=self.seed, **vars(self.data))

    def model_config(self) -> ModelConfig:
        enc, q = self.encoder, self.qformer
        return ModelConfig(
            encoder=EncoderConfig(frame_size=self.data.frame_size, **vars(enc)),
            qformer=VideoQFormerConfig(
                t_q=q.t_q, d2=q.d2, layers=q.layers, heads=q.heads,
                max_positions=q.max_positions or self.stream.t_s,
                input_dim=enc.d1, use_temporal_positions=q.use_temporal_positions,
                context_norm=q.context_norm,
            ),
            aggregator=q.aggregator,
            d_llm=self.explain.d_llm,
        )

    def gate_config(self) -> GateConfig:
        return GateConfig(tau=self.explain.tau, prompt_template=self.explain.prompt_template)

    def train_config(self) -> TrainConfig:
        t = self.train
        freeze = list(t.freeze)
        if self.encoder.frozen and "visual_encoder" not in freeze:
            freeze.append("visual_encoder")
        return TrainConfig(
            learning_rate=t.learning_rate, epochs=t.epochs, batch_size=t.batch_size, seed=self.seed,
            freeze=tuple(freeze), detection_weight=t.detection_weight, alignment_weight=t.alignment_weight,
            optimizer=t.optimizer, momentum=t.momentum, pos_weight=t.pos_weight, max_steps=t.max_steps,
            grad_clip=t.grad_clip,
        )

    def validate(self) -> "RunConfig":
        """Build every component config once so invalid values surface early."""
        try:
            self.synthetic_spec()
            self.model_config()
            self.gate_config()
            self.train_config()
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc
        if self.stream.t_s < 1:
            raise ConfigError(f"stream.t_s must be >= 1, got {self.stream.t_s}")
        if self.stream.stride < 1:
            raise ConfigError(f"stream.stride must be >= 1, got {self.stream.stride}")
        if not self.stream.fps > 0:
            raise ConfigError(f"stream.fps must be > 0, got {self.stream.fps}")
        if self.model_config().qformer.max_positions < self.stream.t_s:
            raise ConfigError("qformer.max_positions must be >= stream.t_s")
        if self.explain.generator not in ("mock", "external", "none"):
            raise ConfigError(f"explain.generator must be mock, external or none, got {self.explain.generator!r}")
        if self.explain.generator == "external" and not self.explain.endpoint:
            raise ConfigError("explain.endpoint is required when explain.generator is 'external'")
        if self.train.windows not in ("frame", "segment"):
            raise ConfigError(f"train.windows must be 'frame' or 'segment', got {self.train.windows!r}")
        return self

    def to_dict(self) -> dict:
        return _to_dict(self)


def _to_dict(obj) -> dict:
    out = {}
    for f in fields(obj):
        value = getattr(obj, f.name)
        out[f.name] = _to_dict(value) if hasattr(value, "__dataclass_fields__") else copy.deepcopy(value)
    return out


def _check_type(value, hint, where: str):
    origin = typing.get_origin(hint)
    if origin in (typing.Union, types.UnionType):
        for option in typing.get_args(hint):
            try:
                return _check_type(value, option, where)
            except ConfigError:
                pass
        raise ConfigError(f"{where}: {value!r} does not match {hint}")
    if hint is type(None):
        if value is not None:
            raise ConfigError(f"{where}: expected null, got {value!r}")
        return None
    if origin is list:
        if not isinstance(value, list):
            raise ConfigError(f"{where}: expected a list, got {value!r}")
        (item,) = typing.get_args(hint)
        return [_check_type(v, item, f"{where}[{i}]") for i, v in enumerate(value)]
    if hint is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{where}: expected a number, got {value!r}")
        return float(value)
    if hint is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{where}: expected an integer, got {value!r}")
        return value
    if hint in (bool, str):
        if not isinstance(value, hint):
            raise ConfigError(f"{where}: expected {hint.__name__}, got {value!r}")
        return value
    raise ConfigError(f"{where}: unsupported type {hint}")


def _build(cls, data: dict, where: str):
    if not isinstance(data, dict):
        raise ConfigError(f"{where or 'config'}: expected an object, got {data!r}")
    hints = typing.get_type_hints(cls)
    known = {f.name: f for f in fields(cls)}
    unknown = sorted(set(data) - set(known))
    if unknown:
        raise ConfigError(f"unknown key(s) {', '.join(where + k for k in unknown)}")
    kwargs = {}
    for name, f in known.items():
        if name not in data:
            continue
        hint = hints[name]
        if hasattr(hint, "__dataclass_fields__"):
            kwargs[name] = _build(hint, data[name], f"{where}{name}.")
        else:
            kwargs[name] = _check_type(data[name], hint, f"{where}{name}")
    return cls(**kwargs)


def from_dict(data: dict) -> RunConfig:
    return _build(RunConfig, data, "").validate()


def load_config(path=None, overrides: list[str] = (), seed: int | None = None) -> RunConfig:
    data: dict = {}
    if path is not None:
        try:
            data = json.loads(Path(path).read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON: {exc}") from exc
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
    data = apply_overrides(data, overrides)
    if seed is not None:
        data["seed"] = seed
    return from_dict(data)


def apply_overrides(data: dict, overrides) -> dict:
    data = copy.deepcopy(data)
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not of the form key=value")
        key, raw = item.split("=", 1)
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        parts = key.strip().split(".")
        node = data
        for part in parts[:-1]:
            node = node.setdefault(part, {})
            if not isinstance(node, dict):
                raise ConfigError(f"override {key!r}: {part!r} is not a section")
        node[parts[-1]] = value
    return data

