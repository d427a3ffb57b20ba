"""Losses and the training loop.

Parameter groups listed in ``TrainConfig.freeze`` receive no gradient and are
never touched by the optimizer. By default only the visual encoder is frozen.
"""

from __future__ import annotations

import csv
import logging
import math
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
from torch.nn import functional as F

from .explain import text_embedding
from .layers import DTYPE
from .model import GROUPS, MistakeDetector, save_checkpoint

log = logging.getLogger(__name__)

OPTIMIZERS = ("sgd", "momentum", "adam")


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.05
    epochs: int = 200
    batch_size: int = 50
    seed: int = 0
    freeze: tuple[str, ...] = ("visual_encoder",)
    detection_weight: float = 1.0
    alignment_weight: float = 0.0
    optimizer: str = "momentum"
    momentum: float = 0.9
    pos_weight: float = 1.0
    max_steps: int | None = None
    fit_feature_stats: bool = True
    grad_clip: float | None = 1.0  # max global gradient norm; None disables

    def __post_init__(self):
        object.__setattr__(self, "freeze", tuple(self.freeze))
        if not self.learning_rate > 0:
            raise ValueError(f"learning_rate must be > 0, got {self.learning_rate}")
        if self.epochs < 1:
            raise ValueError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.optimizer not in OPTIMIZERS:
            raise ValueError(f"optimizer must be one of {OPTIMIZERS}, got {self.optimizer!r}")
        if self.detection_weight < 0 or self.alignment_weight < 0:
            raise ValueError("loss weights must be non-negative")
        if not self.pos_weight > 0:
            raise ValueError(f"pos_weight must be > 0, got {self.pos_weight}")
        if self.grad_clip is not None and not self.grad_clip > 0:
            raise ValueError(f"grad_clip must be > 0, got {self.grad_clip}")
        if self.max_steps is not None and self.max_steps < 1:
            raise ValueError(f"max_steps must be >= 1, got {self.max_steps}")


# ---------------------------------------------------------------------------
# losses

def bce_from_logit(logit, label, pos_weight: float = 1.0):
    """-[w*y*log(sigmoid(z)) + (1-y)*log(1-sigmoid(z))] without forming the probability."""
    z = torch.as_tensor(logit, dtype=DTYPE)
    y = torch.as_tensor(label, dtype=DTYPE)
    return F.binary_cross_entropy_with_logits(
        z, y, pos_weight=torch.as_tensor(pos_weight, dtype=DTYPE), reduction="none"
    )


def detection_loss(probability: float, label: int) -> float:
    """Binary cross-entropy of a probability, evaluated through its logit.

    Probabilities of exactly 0 or 1 are nudged to the nearest representable
    interior value, so the result is large but finite.
    """
    if label not in (0, 1):
        raise ValueError(f"label must be 0 or 1, got {label}")
    if not 0.0 <= probability <= 1.0:
        raise ValueError(f"probability must lie in [0, 1], got {probability}")
    p = min(max(probability, math.ulp(0.0)), 1.0 - 2.0**-53)
    logit = math.log(p) - math.log1p(-p)
    return logit_loss(logit, label)


def logit_loss(logit: float, label: int) -> float:
    # softplus(z) - y*z, arranged so exp never overflows
    z = float(logit)
    return max(z, 0.0) - z * label + math.log1p(math.exp(-abs(z)))


def alignment_loss(projected, target) -> float:
    """1 - cosine(mean of projected rows, target). Zero-norm inputs give 1.0."""
    with torch.no_grad():
        out = _alignment(torch.as_tensor(np.asarray(projected), dtype=DTYPE),
                         torch.as_tensor(np.asarray(target), dtype=DTYPE))
    return float(out)


def _alignment(projected: torch.Tensor, target: torch.Tensor) -> torch.Tensor:
    pooled = projected.mean(dim=-2)
    if pooled.shape != target.shape:
        raise ValueError(f"pooled projection {tuple(pooled.shape)} does not match target {tuple(target.shape)}")
    norms = pooled.norm(dim=-1) * target.norm(dim=-1)
    if bool((norms == 0).any()):
        warnings.warn("zero-norm vector in alignment loss; using loss 1.0", RuntimeWarning, stacklevel=3)
    cos = (pooled * target).sum(dim=-1) / torch.where(norms == 0, torch.ones_like(norms), norms)
    return 1.0 - torch.where(norms == 0, torch.zeros_like(cos), cos)


# ---------------------------------------------------------------------------
# samples

@dataclass
class Sample:
    """One training window: images (frames, H, W, 3) and/or cached features (frames, d1)."""

    label: int
    images: np.ndarray | None = None
    features: np.ndarray | None = None
    target: np.ndarray | None = None
    video_id: str = ""
    timestep: float = 0.0

    def __len__(self) -> int:
        return len(self.images) if self.images is not None else len(self.features)


def windows_from_videos(videos, t_s: int, per: str = "frame", d_llm: int | None = None) -> list[Sample]:
    """Cut labelled windows out of annotated videos.

    ``per="frame"`` gives one window ending at every frame (as the detector
    sees them online); ``per="segment"`` gives one window ending at the last
    frame of each annotated segment. Mistake windows carry a hashed embedding
    of their explanation as alignment target when ``d_llm`` is set.
    """
    if per not in ("frame", "segment"):
        raise ValueError(f"per must be 'frame' or 'segment', got {per!r}")
    samples = []
    for video in videos:
        times = video.timestamps()
        ends = []
        if per == "frame":
            ends = range(len(times))
        else:
            for ann in video.annotations:
                inside = np.flatnonzero((times >= ann.segment_start) & (times < ann.segment_end))
                if len(inside):
                    ends.append(int(inside[-1]))
        for end in ends:
            ann = _segment_at(video.annotations, times[end])
            start = max(0, end - t_s + 1)
            target = None
            if d_llm is not None and ann.label == "mistake":
                target = text_embedding(ann.explanation, d_llm)
            samples.append(Sample(
                label=int(ann.label == "mistake"),
                images=video.frames[start:end + 1].astype(np.float64) / 255.0,
                target=target,
                video_id=video.video_id,
                timestep=float(times[end]),
            ))
    return samples


def _segment_at(annotations, t: float):
    for ann in annotations:
        if ann.contains(t):
            return ann
    raise LookupError(f"no annotation segment contains t={t}")


# ---------------------------------------------------------------------------
# training loop

class NaNLossError(FloatingPointError):
    pass


def check_freeze(model: MistakeDetector, freeze) -> None:
    names = list(model.parameter_groups())
    for item in freeze:
        if item in GROUPS:
            continue
        if not any(n == item or n.startswith(item + ".") for n in names):
            raise ValueError(f"freeze entry {item!r} names no parameter group")


def _is_frozen(name: str, freeze) -> bool:
    return any(name == item or name.startswith(item + ".") for item in freeze)


class Trainer:
    def __init__(self, model: MistakeDetector, config: TrainConfig):
        check_freeze(model, config.freeze)
        self.model = model
        self.config = config
        self.trainable = []
        for name, param in model.named_parameters():
            frozen = _is_frozen(name, config.freeze)
            param.requires_grad_(not frozen)
            if not frozen:
                self.trainable.append(param)
        self.encoder_frozen = all(
            _is_frozen(name, config.freeze)
            for name, _ in model.named_parameters() if name.startswith("visual_encoder.")
        )
        self.optimizer = self._make_optimizer()
        self.steps = 0

    def _make_optimizer(self):
        cfg = self.config
        if not self.trainable:
            return None
        if cfg.optimizer == "adam":
            return torch.optim.Adam(self.trainable, lr=cfg.learning_rate)
        momentum = cfg.momentum if cfg.optimizer == "momentum" else 0.0
        return torch.optim.SGD(self.trainable, lr=cfg.learning_rate, momentum=momentum)

    def cache_features(self, samples: list[Sample]) -> None:
        """Pre-encode frames once when the encoder cannot change."""
        if not self.encoder_frozen:
            return
        self._encode_missing(samples)

    def _encode_missing(self, samples: list[Sample]) -> None:
        pending = [s for s in samples if s.features is None]
        by_len: dict[int, list[Sample]] = {}
        for s in pending:
            by_len.setdefault(len(s), []).append(s)
        with torch.no_grad():
            for group in by_len.values():
                feats = self.model.encode_frames(torch.from_numpy(np.stack([s.images for s in group])))
                for s, f in zip(group, feats.numpy()):
                    s.features = f

    def fit_feature_stats(self, samples: list[Sample]) -> None:
        """Standardise frame features with statistics of the training frames."""
        if self.encoder_frozen:
            feats = [s.features for s in samples]
        else:
            with torch.no_grad():
                feats = [self.model.encode_frames(torch.from_numpy(s.images)).numpy() for s in samples]
        self.model.fit_feature_stats(np.concatenate(feats))

    def loss(self, batch: list[Sample]):
        """Return ``(total, detection, alignment)`` tensors averaged over the batch."""
        if not batch:
            raise ValueError("empty batch")
        cfg = self.config
        by_len: dict[int, list[int]] = {}
        for i, s in enumerate(batch):
            by_len.setdefault(len(s), []).append(i)
        det_terms, align_terms = [], []
        for idx in by_len.values():
            group = [batch[i] for i in idx]
            if self.encoder_frozen and all(s.features is not None for s in group):
                v = torch.from_numpy(np.stack([s.features for s in group]))
            else:
                v = self.model.encode_frames(torch.from_numpy(np.stack([s.images for s in group])))
            out = self.model.forward_features(v)
            labels = torch.tensor([float(s.label) for s in group], dtype=DTYPE)
            det_terms.append(bce_from_logit(out.aggregated, labels, cfg.pos_weight))
            with_target = [j for j, s in enumerate(group) if s.target is not None]
            if with_target:
                targets = torch.from_numpy(np.stack([group[j].target for j in with_target]))
                align_terms.append(_alignment(out.projected[with_target], targets))
        detection = torch.cat(det_terms).mean()
        alignment = torch.cat(align_terms).mean() if align_terms else torch.zeros((), dtype=DTYPE)
        total = cfg.detection_weight * detection + cfg.alignment_weight * alignment
        return total, detection, alignment

    def train_step(self, batch: list[Sample]) -> dict:
        total, detection, alignment = self.loss(batch)
        if not torch.isfinite(total):
            raise NaNLossError(f"non-finite loss at step {self.steps}: {self._first_bad_group()}")
        if self.optimizer is not None:
            self.optimizer.zero_grad()
            total.backward()
            bad = self._first_bad_group(grads=True)
            if bad:
                raise NaNLossError(f"non-finite gradient at step {self.steps}: {bad}")
            if self.config.grad_clip is not None:
                torch.nn.utils.clip_grad_norm_(self.trainable, self.config.grad_clip)
            self.optimizer.step()
        self.steps += 1
        return {
            "step": self.steps,
            "loss": float(total.detach()),
            "detection": float(detection.detach()),
            "alignment": float(alignment.detach()),
        }

    def _first_bad_group(self, grads: bool = False) -> str:
        for name, param in self.model.named_parameters():
            tensor = param.grad if grads else param
            if tensor is not None and not torch.isfinite(tensor).all():
                return f"first non-finite {'gradient' if grads else 'parameter'} in group {name!r}"
        return "" if grads else "all parameters finite"

    def fit(self, samples: list[Sample], log_path=None, checkpoint_path=None, checkpoint_every: int | None = None):
        """Run ``epochs`` shuffled passes (or until ``max_steps``); return the per-step log."""
        cfg = self.config
        if not samples:
            raise ValueError("no training samples")
        self.cache_features(samples)
        if cfg.fit_feature_stats:
            self.fit_feature_stats(samples)
        rng = np.random.default_rng(cfg.seed)
        history = []
        writer = fh = None
        if log_path is not None:
            fh = Path(log_path).open("w", newline="", encoding="utf-8")
            writer = csv.DictWriter(fh, fieldnames=["step", "loss", "detection", "alignment"], lineterminator="\n")
            writer.writeheader()
        try:
            for _ in range(cfg.epochs):
                order = rng.permutation(len(samples))
                for start in range(0, len(order), cfg.batch_size):
                    row = self.train_step([samples[i] for i in order[start:start + cfg.batch_size]])
                    history.append(row)
                    if writer:
                        writer.writerow({k: repr(v) if isinstance(v, float) else v for k, v in row.items()})
                    if checkpoint_path and checkpoint_every and self.steps % checkpoint_every == 0:
                        save_checkpoint(self.model, checkpoint_path, extra={"step": self.steps})
                    if cfg.max_steps is not None and self.steps >= cfg.max_steps:
                        return history
            return history
        finally:
            if fh:
                fh.close()


def train_step(trainer: Trainer, batch: list[Sample]) -> dict:
    return trainer.train_step(batch)


def predict_probabilities(model: MistakeDetector, samples: list[Sample]) -> np.ndarray:
    """Segment probabilities for each sample, in input order."""
    out = np.empty(len(samples))
    by_len: dict[int, list[int]] = {}
    for i, s in enumerate(samples):
        by_len.setdefault(len(s), []).append(i)
    with torch.no_grad():
        for idx in by_len.values():
            group = [samples[i] for i in idx]
            if all(s.features is not None for s in group):
                v = torch.from_numpy(np.stack([s.features for s in group]))
            else:
                v = model.encode_frames(torch.from_numpy(np.stack([s.images for s in group])))
            out[idx] = torch.sigmoid(model.forward_features(v).aggregated).numpy()
    return out
