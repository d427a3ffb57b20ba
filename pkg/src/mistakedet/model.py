"""The full detector (encoder, Video Q-Former, mistake head, projection) and checkpoints.

Checkpoint layout: an uncompressed zip archive holding ``manifest.json`` and one
``<parameter name>.npy`` member per float64 array. The manifest records the
format version, the model config and every array's shape. Entry timestamps are
fixed, so identical weights give identical bytes; ``numpy.load`` can read it.
"""

from __future__ import annotations

import hashlib
import io
import json
import zipfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
from torch import nn

from .encoder import EncoderConfig, FrameEncoder
from .explain import Projection
from .head import AGGREGATORS, MistakeHead, aggregate
from .layers import DTYPE, init_parameters
from .video_qformer import VideoQFormer, VideoQFormerConfig

GROUPS = ("visual_encoder", "video_qformer", "mistake_head", "projection")
FORMAT = "mistakedet-checkpoint/1"
_ZIP_DATE = (1980, 1, 1, 0, 0, 0)


@dataclass(frozen=True)
class ModelConfig:
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    qformer: VideoQFormerConfig = field(default_factory=VideoQFormerConfig)
    aggregator: str = "max"
    d_llm: int = 32

    def __post_init__(self):
        if self.aggregator not in AGGREGATORS:
            raise ValueError(f"aggregator must be one of {AGGREGATORS}, got {self.aggregator!r}")
        if self.d_llm < 1:
            raise ValueError(f"d_llm must be >= 1, got {self.d_llm}")
        if self.qformer.input_dim != self.encoder.d1:
            raise ValueError(
                f"qformer.input_dim ({self.qformer.input_dim}) must equal encoder.d1 ({self.encoder.d1})"
            )

    def to_dict(self) -> dict:
        return {
            "encoder": self.encoder.to_dict(),
            "qformer": self.qformer.to_dict(),
            "aggregator": self.aggregator,
            "d_llm": self.d_llm,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(
            encoder=EncoderConfig(**d["encoder"]),
            qformer=VideoQFormerConfig(**d["qformer"]),
            aggregator=d.get("aggregator", "max"),
            d_llm=d.get("d_llm", 32),
        )


@dataclass
class DetectorOutput:
    features: torch.Tensor  # (..., t_q, d2)
    logits: torch.Tensor  # (..., t_q)
    aggregated: torch.Tensor  # (...)
    projected: torch.Tensor  # (..., t_q, d_llm)


class MistakeDetector(nn.Module):
    def __init__(self, config: ModelConfig, seed: int = 0):
        super().__init__()
        self.config = config
        self.visual_encoder = FrameEncoder(config.encoder)
        self.video_qformer = VideoQFormer(config.qformer)
        self.mistake_head = MistakeHead(config.qformer.d2, config.aggregator)
        self.projection = Projection(config.qformer.d2, config.d_llm)
        # fixed standardisation of frame features; identity until fitted
        self.register_buffer("feature_mean", torch.zeros(config.encoder.d1, dtype=DTYPE))
        self.register_buffer("feature_std", torch.ones(config.encoder.d1, dtype=DTYPE))
        self.reset_parameters(seed)

    def reset_parameters(self, seed: int) -> None:
        rng = np.random.default_rng(seed)
        for name in GROUPS:
            init_parameters(getattr(self, name), rng)

    def group(self, name: str) -> nn.Module:
        if name not in GROUPS:
            raise KeyError(f"unknown parameter group {name!r}; expected one of {GROUPS}")
        return getattr(self, name)

    def encode_frames(self, images: torch.Tensor) -> torch.Tensor:
        return self.visual_encoder(images)

    def fit_feature_stats(self, features: np.ndarray, min_std: float = 1e-12) -> None:
        """Set the standardisation from a (n, d1) sample of raw frame features."""
        features = np.asarray(features, dtype=np.float64).reshape(-1, self.config.encoder.d1)
        std = features.std(axis=0)
        std[std < min_std] = 1.0
        with torch.no_grad():
            self.feature_mean.copy_(torch.from_numpy(features.mean(axis=0)))
            self.feature_std.copy_(torch.from_numpy(std))

    def forward_features(self, v: torch.Tensor) -> DetectorOutput:
        """Run everything after the frame encoder on raw (..., frames, d1) features."""
        f = self.video_qformer((v - self.feature_mean) / self.feature_std)
        logits = self.mistake_head(f)
        return DetectorOutput(
            features=f,
            logits=logits,
            aggregated=aggregate(logits, self.config.aggregator),
            projected=self.projection(f),
        )

    def forward(self, images: torch.Tensor) -> DetectorOutput:
        """(..., frames, H, W, 3) window images -> detector output."""
        return self.forward_features(self.encode_frames(images))

    # -- bookkeeping ---------------------------------------------------------

    def parameter_groups(self) -> dict[str, tuple[int, ...]]:
        return {name: tuple(p.shape) for name, p in self.named_parameters()}

    def group_checksum(self, name: str) -> str:
        digest = hashlib.sha256()
        for pname, param in self.group(name).named_parameters():
            digest.update(pname.encode())
            digest.update(param.detach().numpy().tobytes())
        return digest.hexdigest()

    def checksums(self) -> dict[str, str]:
        return {name: self.group_checksum(name) for name in GROUPS}

    def state_arrays(self) -> dict[str, np.ndarray]:
        """Parameters plus the feature standardisation buffers."""
        return {name: t.detach().numpy().copy() for name, t in self.state_dict().items()}


def save_checkpoint(model: MistakeDetector, path, extra: dict | None = None) -> None:
    arrays = model.state_arrays()
    manifest = {
        "format": FORMAT,
        "config": model.config.to_dict(),
        "arrays": {name: list(a.shape) for name, a in arrays.items()},
        "extra": extra or {},
    }
    with zipfile.ZipFile(Path(path), "w", compression=zipfile.ZIP_STORED) as zf:
        _write_member(zf, "manifest.json", (json.dumps(manifest, indent=2, sort_keys=True) + "\n").encode())
        for name, array in arrays.items():
            buf = io.BytesIO()
            np.lib.format.write_array(buf, np.ascontiguousarray(array, dtype="<f8"), allow_pickle=False)
            _write_member(zf, f"{name}.npy", buf.getvalue())


def _write_member(zf: zipfile.ZipFile, name: str, data: bytes) -> None:
    info = zipfile.ZipInfo(name, date_time=_ZIP_DATE)
    info.external_attr = 0o644 << 16
    zf.writestr(info, data)


class CheckpointError(ValueError):
    pass


def read_manifest(path) -> dict:
    with zipfile.ZipFile(Path(path)) as zf:
        manifest = json.loads(zf.read("manifest.json"))
    if manifest.get("format") != FORMAT:
        raise CheckpointError(f"{path}: unsupported checkpoint format {manifest.get('format')!r}")
    return manifest


def load_checkpoint(path, config: ModelConfig | None = None) -> MistakeDetector:
    """Rebuild a detector from ``path``.

    When ``config`` is given, every stored array must match the shape the
    config implies; mismatches raise :class:`CheckpointError` naming the shapes.
    """
    manifest = read_manifest(path)
    stored = ModelConfig.from_dict(manifest["config"])
    model = MistakeDetector(config or stored)
    expected = {name: tuple(t.shape) for name, t in model.state_dict().items()}
    got = {name: tuple(shape) for name, shape in manifest["arrays"].items()}
    if expected != got:
        diffs = [
            f"{name}: checkpoint {got.get(name)} vs config {expected.get(name)}"
            for name in sorted(set(expected) | set(got))
            if expected.get(name) != got.get(name)
        ]
        raise CheckpointError("checkpoint does not match config: " + "; ".join(diffs))
    with zipfile.ZipFile(Path(path)) as zf, torch.no_grad():
        for name, param in model.state_dict().items():
            array = np.lib.format.read_array(io.BytesIO(zf.read(f"{name}.npy")), allow_pickle=False)
            param.copy_(torch.from_numpy(np.asarray(array, dtype=np.float64)))
    return model
