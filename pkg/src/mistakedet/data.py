"""Annotation / prediction records, JSON-lines I/O and the synthetic task generator.

Annotation lines look like::

    {"video_id": "video_0000", "segment_start": 0.0, "segment_end": 4.0,
     "label": "mistake", "error_type": "execution",
     "explanation": "step 1 executed with wrong color"}

Prediction lines::

    {"video_id": "video_0000", "timestep": 3.0, "probability": 0.91,
     "label": "mistake", "explanation": "..."}

``explanation`` is ``null`` in a prediction when no explanation was produced.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

LABELS = ("correct", "mistake")
ERROR_TYPES = ("procedural", "execution", "none")


class RecordError(ValueError):
    """A record violates its schema; ``line`` is 1-based when read from a file."""

    def __init__(self, message: str, path=None, line: int | None = None):
        where = ""
        if path is not None:
            where = f"{path}:{line}: " if line is not None else f"{path}: "
        elif line is not None:
            where = f"line {line}: "
        super().__init__(where + message)
        self.line = line


def _require(obj: dict, name: str, kind):
    if name not in obj:
        raise RecordError(f"missing field {name!r}")
    value = obj[name]
    if kind is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise RecordError(f"field {name!r} must be a number, got {value!r}")
        value = float(value)
        if not math.isfinite(value):
            raise RecordError(f"field {name!r} must be finite, got {value!r}")
    elif not isinstance(value, kind):
        raise RecordError(f"field {name!r} must be {kind.__name__}, got {value!r}")
    return value


@dataclass(frozen=True)
class AnnotationRecord:
    video_id: str
    segment_start: float
    segment_end: float
    label: str
    error_type: str
    explanation: str

    def __post_init__(self):
        if self.segment_start < 0:
            raise RecordError(f"segment_start must be >= 0, got {self.segment_start}")
        if not self.segment_end > self.segment_start:
            raise RecordError(
                f"segment_end ({self.segment_end}) must be greater than segment_start ({self.segment_start})"
            )
        if self.label not in LABELS:
            raise RecordError(f"label must be one of {LABELS}, got {self.label!r}")
        if self.error_type not in ERROR_TYPES:
            raise RecordError(f"error_type must be one of {ERROR_TYPES}, got {self.error_type!r}")
        if (self.error_type == "none") != (self.label == "correct"):
            raise RecordError(
                f"error_type 'none' must coincide with label 'correct' (label={self.label!r}, "
                f"error_type={self.error_type!r})"
            )
        if bool(self.explanation) != (self.label == "mistake"):
            raise RecordError(
                "explanation must be non-empty exactly when label is 'mistake' "
                f"(label={self.label!r}, explanation={self.explanation!r})"
            )

    def contains(self, t: float) -> bool:
        return self.segment_start <= t < self.segment_end

    @classmethod
    def from_dict(cls, obj: dict) -> "AnnotationRecord":
        return cls(
            video_id=_require(obj, "video_id", str),
            segment_start=_require(obj, "segment_start", float),
            segment_end=_require(obj, "segment_end", float),
            label=_require(obj, "label", str),
            error_type=_require(obj, "error_type", str),
            explanation=_require(obj, "explanation", str),
        )

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class PredictionRecord:
    video_id: str
    timestep: float
    probability: float
    label: str
    explanation: str | None = None

    def __post_init__(self):
        if not 0.0 <= self.probability <= 1.0:
            raise RecordError(f"probability must lie in [0, 1], got {self.probability}")
        if self.label not in LABELS:
            raise RecordError(f"label must be one of {LABELS}, got {self.label!r}")
        if self.explanation is not None and self.label != "mistake":
            raise RecordError("an explanation is only allowed on a 'mistake' prediction")

    def check_gate(self, tau: float) -> None:
        fired = self.probability >= tau
        if fired != (self.label == "mistake"):
            raise RecordError(
                f"label {self.label!r} disagrees with probability {self.probability} at tau={tau}"
            )

    @classmethod
    def from_dict(cls, obj: dict) -> "PredictionRecord":
        explanation = obj.get("explanation")
        if explanation is not None and not isinstance(explanation, str):
            raise RecordError(f"field 'explanation' must be a string or null, got {explanation!r}")
        return cls(
            video_id=_require(obj, "video_id", str),
            timestep=_require(obj, "timestep", float),
            probability=_require(obj, "probability", float),
            label=_require(obj, "label", str),
            explanation=explanation,
        )

    def to_dict(self) -> dict:
        return asdict(self)


def dumps_record(record) -> str:
    return json.dumps(record.to_dict(), ensure_ascii=False)


def _read_jsonl(path, cls):
    path = Path(path)
    records = []
    with path.open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                if not isinstance(obj, dict):
                    raise RecordError("expected a JSON object")
                records.append(cls.from_dict(obj))
            except (json.JSONDecodeError, RecordError) as exc:
                raise RecordError(str(exc), path=path, line=lineno) from exc
    return records


def _write_jsonl(records, path) -> None:
    with Path(path).open("w", encoding="utf-8", newline="\n") as fh:
        for record in records:
            fh.write(dumps_record(record) + "\n")


def read_annotations(path) -> list[AnnotationRecord]:
    return _read_jsonl(path, AnnotationRecord)


def write_annotations(records, path) -> None:
    _write_jsonl(records, path)


def read_predictions(path) -> list[PredictionRecord]:
    return _read_jsonl(path, PredictionRecord)


def write_predictions(records, path) -> None:
    _write_jsonl(records, path)


# ---------------------------------------------------------------------------
# synthetic task videos

COLORS = {
    "red": (0.85, 0.15, 0.15),
    "green": (0.15, 0.70, 0.20),
    "blue": (0.15, 0.25, 0.85),
    "yellow": (0.90, 0.85, 0.10),
    "magenta": (0.80, 0.20, 0.75),
    "cyan": (0.10, 0.75, 0.80),
    "orange": (0.95, 0.55, 0.10),
    "purple": (0.45, 0.20, 0.60),
}
SHAPES = ("square", "circle", "triangle", "diamond")
COLOR_NAMES = tuple(COLORS)
MAX_STEPS = len(COLORS)


@dataclass(frozen=True)
class SyntheticTaskSpec:
    seed: int = 0
    num_videos: int = 10
    steps_per_task: int = 4
    frame_size: int = 64
    error_rate: float = 0.5
    fps: float = 1.0
    frames_per_step: int = 4
    noise: float = 0.02

    def __post_init__(self):
        def bad(name, why):
            raise ValueError(f"{name}: {why} (got {getattr(self, name)!r})")

        for name in ("seed", "num_videos", "steps_per_task", "frame_size", "frames_per_step"):
            value = getattr(self, name)
            if isinstance(value, bool) or not isinstance(value, int):
                bad(name, "must be an integer")
        if self.num_videos < 1:
            bad("num_videos", "must be > 0")
        if not 2 <= self.steps_per_task <= MAX_STEPS:
            bad("steps_per_task", f"must lie in [2, {MAX_STEPS}]")
        if self.frame_size < 16:
            bad("frame_size", "must be >= 16 pixels")
        if not 0.0 <= self.error_rate <= 1.0:
            bad("error_rate", "must lie in [0, 1]")
        if not self.fps > 0:
            bad("fps", "must be > 0")
        if self.frames_per_step < 1:
            bad("frames_per_step", "must be >= 1")
        if not 0.0 <= self.noise < 0.5:
            bad("noise", "must lie in [0, 0.5)")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class ErrorDraw:
    """The random draws that decided one video's error, if any."""

    kind: str  # "procedural", "execution" or "none"
    step: int = -1  # 0-based position of the (first) affected step
    attribute: str = ""  # "color" / "shape" for execution errors
    wrong_value: str = ""

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class SyntheticVideo:
    video_id: str
    frames: np.ndarray  # (n, H, W, 3) uint8
    fps: float
    annotations: list[AnnotationRecord]
    draw: ErrorDraw
    order: list[int] = field(default_factory=list)

    def timestamps(self) -> np.ndarray:
        return np.arange(len(self.frames)) / self.fps

    def frame(self, i: int) -> np.ndarray:
        """Frame ``i`` as floats in [0, 1]."""
        return self.frames[i].astype(np.float64) / 255.0


def canonical_step(k: int) -> tuple[str, str]:
    """(color, shape) of task step ``k`` (0-based) when executed correctly."""
    return COLOR_NAMES[k % len(COLOR_NAMES)], SHAPES[k % len(SHAPES)]


def _slot_center(k: int, steps: int, size: int) -> tuple[float, float]:
    cols = math.ceil(math.sqrt(steps))
    rows = math.ceil(steps / cols)
    r, c = divmod(k, cols)
    return ((r + 0.5) * size / rows, (c + 0.5) * size / cols)


def _shape_mask(shape: str, cy: float, cx: float, radius: float, size: int) -> np.ndarray:
    yy, xx = np.mgrid[0:size, 0:size] + 0.5
    dy, dx = yy - cy, xx - cx
    if shape == "square":
        return (np.abs(dx) <= radius) & (np.abs(dy) <= radius)
    if shape == "circle":
        return dx * dx + dy * dy <= radius * radius
    if shape == "triangle":
        return (dy <= radius) & (dy >= -radius) & (np.abs(dx) <= (dy + radius) / 2)
    if shape == "diamond":
        return np.abs(dx) + np.abs(dy) <= radius
    raise ValueError(f"unknown shape {shape!r}")


def draw_error(rng: np.random.Generator, spec: SyntheticTaskSpec) -> ErrorDraw:
    """Consume the per-video error draws, in this order.

    1. ``rng.random() < error_rate`` decides whether the video has an error.
    2. ``rng.random() < 0.5`` picks procedural, otherwise execution.
    3. procedural: ``rng.integers(0, steps - 1)`` is the position swapped with
       the next one. execution: ``rng.integers(0, steps)`` is the step,
       ``rng.random() < 0.5`` picks the colour (else the shape) and
       ``rng.integers(1, n_options)`` offsets the canonical value cyclically.
    """
    steps = spec.steps_per_task
    if not rng.random() < spec.error_rate:
        return ErrorDraw("none")
    if rng.random() < 0.5:
        return ErrorDraw("procedural", step=int(rng.integers(0, steps - 1)))
    step = int(rng.integers(0, steps))
    color, shape = canonical_step(step)
    if rng.random() < 0.5:
        offset = int(rng.integers(1, len(COLOR_NAMES)))
        wrong = COLOR_NAMES[(COLOR_NAMES.index(color) + offset) % len(COLOR_NAMES)]
        return ErrorDraw("execution", step=step, attribute="color", wrong_value=wrong)
    offset = int(rng.integers(1, len(SHAPES)))
    wrong = SHAPES[(SHAPES.index(shape) + offset) % len(SHAPES)]
    return ErrorDraw("execution", step=step, attribute="shape", wrong_value=wrong)


def _render_video(spec: SyntheticTaskSpec, order, draw: ErrorDraw, tint, noise) -> np.ndarray:
    size, per = spec.frame_size, spec.frames_per_step
    steps = spec.steps_per_task
    frames = np.empty((steps * per, size, size, 3))
    background = np.clip(0.85 + tint, 0.0, 1.0)
    for pos, step in enumerate(order):
        color, shape = canonical_step(step)
        if draw.kind == "execution" and pos == draw.step:
            if draw.attribute == "color":
                color = draw.wrong_value
            else:
                shape = draw.wrong_value
        cy, cx = _slot_center(step, steps, size)
        full = 0.4 * size / math.ceil(math.sqrt(steps))
        for i in range(per):
            img = np.broadcast_to(background, (size, size, 3)).copy()
            radius = full * (0.55 + 0.45 * (i + 1) / per)
            img[_shape_mask(shape, cy, cx, radius, size)] = COLORS[color]
            frames[pos * per + i] = img
    frames += noise
    return np.round(np.clip(frames, 0.0, 1.0) * 255.0).astype(np.uint8)


def _annotations(video_id: str, spec: SyntheticTaskSpec, order, draw: ErrorDraw) -> list[AnnotationRecord]:
    seg = spec.frames_per_step / spec.fps
    out = []
    for pos, step in enumerate(order):
        label, kind, text = "correct", "none", ""
        if draw.kind == "procedural" and pos in (draw.step, draw.step + 1):
            label, kind, text = "mistake", "procedural", f"step {step + 1} performed out of order"
        elif draw.kind == "execution" and pos == draw.step:
            label, kind = "mistake", "execution"
            text = f"step {step + 1} executed with wrong {draw.attribute}"
        out.append(AnnotationRecord(video_id, pos * seg, (pos + 1) * seg, label, kind, text))
    return out


def generate_synthetic(spec: SyntheticTaskSpec) -> list[SyntheticVideo]:
    """Render ``spec.num_videos`` task videos with seeded errors.

    A task is ``steps_per_task`` coloured shapes, each placed in its own slot in
    canonical order; each step lasts ``frames_per_step`` frames while the shape
    grows. Procedural errors swap two adjacent steps (both segments are marked);
    execution errors draw one step with the wrong colour or shape.
    """
    rng = np.random.default_rng(spec.seed)
    size, n = spec.frame_size, spec.steps_per_task * spec.frames_per_step
    videos = []
    for v in range(spec.num_videos):
        draw = draw_error(rng, spec)
        order = list(range(spec.steps_per_task))
        if draw.kind == "procedural":
            order[draw.step], order[draw.step + 1] = order[draw.step + 1], order[draw.step]
        tint = rng.uniform(-0.05, 0.05, size=3)
        noise = rng.standard_normal((n, size, size, 3)) * spec.noise
        video_id = f"video_{v:04d}"
        videos.append(SyntheticVideo(
            video_id=video_id,
            frames=_render_video(spec, order, draw, tint, noise),
            fps=spec.fps,
            annotations=_annotations(video_id, spec, order, draw),
            draw=draw,
            order=order,
        ))
    return videos


def save_dataset(videos: list[SyntheticVideo], out_dir, spec: SyntheticTaskSpec | None = None) -> None:
    """One directory per video with ``frame_00000.png``... and ``annotations.jsonl``.

    A top-level ``manifest.json`` records the generator settings and each video's error draw.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    manifest = {"spec": spec.to_dict() if spec else None, "videos": []}
    for video in videos:
        vdir = out / video.video_id
        vdir.mkdir(exist_ok=True)
        for i, frame in enumerate(video.frames):
            Image.fromarray(frame).save(vdir / f"frame_{i:05d}.png", optimize=False)
        write_annotations(video.annotations, vdir / "annotations.jsonl")
        manifest["videos"].append({
            "video_id": video.video_id, "fps": video.fps, "num_frames": len(video.frames),
            "order": video.order, "draw": video.draw.to_dict(),
        })
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n", encoding="utf-8")


def frame_paths(directory) -> list[Path]:
    """Numbered PNG/JPEG images in a directory, sorted by name."""
    paths = sorted(p for p in Path(directory).iterdir() if p.suffix.lower() in (".png", ".jpg", ".jpeg"))
    if not paths:
        raise FileNotFoundError(f"no frame images in {directory}")
    return paths


def read_image(path) -> np.ndarray:
    with Image.open(path) as img:
        return np.asarray(img.convert("RGB"))


def load_frames(directory) -> np.ndarray:
    """All frames of a directory as uint8 (n, H, W, 3)."""
    return np.stack([read_image(p) for p in frame_paths(directory)])


def load_dataset(directory) -> list[SyntheticVideo]:
    root = Path(directory)
    manifest_path = root / "manifest.json"
    if manifest_path.exists():
        manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
        entries = manifest["videos"]
    else:
        entries = [{"video_id": p.name, "fps": 1.0} for p in sorted(root.iterdir()) if p.is_dir()]
    videos = []
    for entry in entries:
        vdir = root / entry["video_id"]
        draw = ErrorDraw(**entry["draw"]) if "draw" in entry else ErrorDraw("none")
        videos.append(SyntheticVideo(
            video_id=entry["video_id"],
            frames=load_frames(vdir),
            fps=float(entry.get("fps", 1.0)),
            annotations=read_annotations(vdir / "annotations.jsonl"),
            draw=draw,
            order=entry.get("order", []),
        ))
    if not videos:
        raise FileNotFoundError(f"no videos found in {directory}")
    return videos
