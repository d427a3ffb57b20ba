"""Per-frame visual encoder: a small ViT followed by a spatial Q-Former.

Each frame becomes a single ``d1`` vector, so a window of frames becomes a
``(frames, d1)`` feature sequence.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np
import torch
from torch import nn

from .layers import DTYPE, PreNormBlock, QFormerBlock, init_parameters


@dataclass(frozen=True)
class EncoderConfig:
    frame_size: int | tuple[int, int] = 64
    patch_size: int = 16
    vit_layers: int = 2
    vit_heads: int = 4
    vit_dim: int = 64
    spatial_queries: int = 4
    d1: int = 64
    frozen: bool = True

    def __post_init__(self):
        if isinstance(self.frame_size, list):
            object.__setattr__(self, "frame_size", tuple(self.frame_size))
        height, width = self.frame_hw
        if height % self.patch_size or width % self.patch_size:
            raise ValueError(
                f"frame_size {self.frame_size} is not divisible by patch_size {self.patch_size}"
            )
        for name in ("patch_size", "vit_layers", "vit_heads", "vit_dim", "spatial_queries", "d1"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.vit_dim % self.vit_heads:
            raise ValueError(f"vit_dim {self.vit_dim} is not divisible by vit_heads {self.vit_heads}")

    @property
    def frame_hw(self) -> tuple[int, int]:
        if isinstance(self.frame_size, tuple):
            return self.frame_size
        return (self.frame_size, self.frame_size)

    @property
    def num_patches(self) -> int:
        height, width = self.frame_hw
        return (height // self.patch_size) * (width // self.patch_size)

    def to_dict(self) -> dict:
        d = asdict(self)
        if isinstance(self.frame_size, tuple):
            d["frame_size"] = list(self.frame_size)
        return d


def patchify(images: torch.Tensor, patch: int) -> torch.Tensor:
    """(..., H, W, C) -> (..., num_patches, patch*patch*C), patches in row-major order."""
    *lead, height, width, channels = images.shape
    x = images.reshape(*lead, height // patch, patch, width // patch, patch, channels)
    x = x.movedim(-4, -3)  # (..., H/p, W/p, p, p, C)
    return x.reshape(*lead, (height // patch) * (width // patch), patch * patch * channels)


class FrameEncoder(nn.Module):
    def __init__(self, config: EncoderConfig):
        super().__init__()
        self.config = config
        dim = config.vit_dim
        self.patch_embed = nn.Linear(config.patch_size**2 * 3, dim, dtype=DTYPE)
        self.cls_token = nn.Parameter(torch.zeros(dim, dtype=DTYPE))
        self.pos_embed = nn.Parameter(torch.zeros(config.num_patches + 1, dim, dtype=DTYPE))
        self.blocks = nn.ModuleList(PreNormBlock(dim, config.vit_heads) for _ in range(config.vit_layers))
        self.norm = nn.LayerNorm(dim, dtype=DTYPE)
        self.spatial_queries = nn.Parameter(torch.zeros(config.spatial_queries, dim, dtype=DTYPE))
        self.spatial_qformer = QFormerBlock(dim, config.vit_heads)
        self.to_d1 = nn.Linear(dim, config.d1, dtype=DTYPE)

    def reset_parameters(self, rng: np.random.Generator) -> None:
        init_parameters(self, rng)

    def check_images(self, images: torch.Tensor) -> None:
        height, width = self.config.frame_hw
        if images.shape[-3:] != (height, width, 3):
            raise ValueError(
                f"expected frames of shape ({height}, {width}, 3), got {tuple(images.shape[-3:])}"
            )

    def forward(self, images: torch.Tensor) -> torch.Tensor:
        """(..., H, W, 3) images in [0, 1] -> (..., d1) frame features."""
        self.check_images(images)
        tokens = self.patch_embed(patchify(images, self.config.patch_size))
        cls = self.cls_token.expand(*tokens.shape[:-2], 1, -1)
        x = torch.cat([cls, tokens], dim=-2) + self.pos_embed
        for block in self.blocks:
            x = block(x)
        x = self.norm(x)
        queries = self.spatial_queries.expand(*x.shape[:-2], -1, -1)
        queries, _, _ = self.spatial_qformer(queries, x)
        return self.to_d1(queries.mean(dim=-2))

    def encode_frame(self, image) -> np.ndarray:
        """Encode one H x W x 3 image to a d1 feature vector."""
        with torch.no_grad():
            out = self(torch.tensor(np.asarray(image), dtype=DTYPE))
        return out.numpy()

    def encode_sample(self, sample) -> np.ndarray:
        return self.encode_frame(sample.image)

    def encode_segment(self, window) -> np.ndarray:
        """Row i is the feature of the window's i-th frame."""
        rows = []
        for i, frame in enumerate(window.frames):
            try:
                rows.append(self.encode_sample(frame))
            except ValueError as exc:
                raise ValueError(f"frame {i}: {exc}") from exc
        return np.stack(rows)


class PrecomputedFeatures:
    """Looks up per-frame features stored on disk instead of running a network.

    ``features`` maps a video id to an array of shape (num_frames, d1); a frame is
    located by ``round(timestamp * fps)``. Stands in for large pretrained encoders.
    """

    def __init__(self, features: dict[str, np.ndarray], fps: float = 1.0, video_id: str | None = None):
        self.features = {k: np.asarray(v, dtype=np.float64) for k, v in features.items()}
        self.fps = fps
        self.video_id = video_id
        dims = {v.shape[1] for v in self.features.values()}
        if len(dims) != 1:
            raise ValueError(f"inconsistent feature widths {sorted(dims)}")
        (self.d1,) = dims

    @classmethod
    def load(cls, path, fps: float = 1.0) -> "PrecomputedFeatures":
        with np.load(path) as archive:
            return cls({name: archive[name] for name in archive.files}, fps=fps)

    def save(self, path) -> None:
        np.savez(path, **self.features)

    def for_video(self, video_id: str) -> "PrecomputedFeatures":
        if video_id not in self.features:
            raise KeyError(f"no precomputed features for video {video_id!r}")
        out = PrecomputedFeatures.__new__(PrecomputedFeatures)
        out.features, out.fps, out.d1, out.video_id = self.features, self.fps, self.d1, video_id
        return out

    def encode_sample(self, sample) -> np.ndarray:
        if self.video_id is None:
            raise ValueError("select a video with for_video() before encoding")
        rows = self.features[self.video_id]
        index = int(round(sample.timestamp * self.fps))
        if not 0 <= index < len(rows):
            raise IndexError(f"timestamp {sample.timestamp} maps to frame {index}, have {len(rows)}")
        return rows[index].copy()

    def encode_segment(self, window) -> np.ndarray:
        return np.stack([self.encode_sample(f) for f in window.frames])
