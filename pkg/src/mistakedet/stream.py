"""Online sliding window over a frame stream, plus frame sources.

Raw frame protocol (``--frames -``): an 18-byte little-endian header

    offset  size  field
    0       4     magic b"MSNT"
    4       2     u16 width
    6       2     u16 height
    8       1     u8 channels (must be 3)
    9       1     u8 reserved (0)
    10      4     f32 fps
    14      4     u32 reserved (0)

followed by frames of ``height * width * channels`` bytes each, row-major RGB,
8 bits per channel. Frame ``i`` gets timestamp ``i / fps``.
"""

from __future__ import annotations

import struct
from collections import deque
from dataclasses import dataclass
from pathlib import Path
from typing import BinaryIO, Iterator

import numpy as np

from .data import frame_paths, read_image

MAGIC = b"MSNT"
HEADER = struct.Struct("<4sHHBBfI")


@dataclass(frozen=True)
class FrameSample:
    timestamp: float
    image: np.ndarray  # (H, W, 3) float64 in [0, 1], read-only

    @classmethod
    def from_array(cls, timestamp: float, image, frame_hw: tuple[int, int] | None = None) -> "FrameSample":
        arr = np.asarray(image)
        if arr.dtype == np.uint8:
            arr = arr.astype(np.float64) / 255.0
        else:
            arr = np.array(arr, dtype=np.float64)
        if arr.ndim != 3 or arr.shape[2] != 3:
            raise ValueError(f"frame must be H x W x 3, got shape {arr.shape}")
        if frame_hw is not None and arr.shape[:2] != tuple(frame_hw):
            raise ValueError(f"frame is {arr.shape[0]}x{arr.shape[1]}, expected {frame_hw[0]}x{frame_hw[1]}")
        if not np.isfinite(arr).all() or arr.min() < 0.0 or arr.max() > 1.0:
            raise ValueError("pixel values must lie in [0, 1]")
        arr.setflags(write=False)
        return cls(float(timestamp), arr)


@dataclass(frozen=True)
class SegmentWindow:
    frames: tuple[FrameSample, ...]

    @property
    def current_timestep(self) -> float:
        return self.frames[-1].timestamp

    def __len__(self) -> int:
        return len(self.frames)


class EmptyStreamError(LookupError):
    pass


class FrameStream:
    """Keeps the most recent ``t_s`` frames of a single stream.

    One producer calls :meth:`push`; :meth:`current_segment` hands out immutable
    snapshots that later pushes cannot alter.
    """

    def __init__(self, t_s: int = 8, frame_hw: tuple[int, int] | None = None):
        if t_s < 1:
            raise ValueError(f"t_s must be >= 1, got {t_s}")
        self.t_s = t_s
        self.frame_hw = tuple(frame_hw) if frame_hw is not None else None
        self._frames: deque[FrameSample] = deque(maxlen=t_s)
        self.count = 0

    def push(self, frame: FrameSample) -> "FrameStream":
        if self.frame_hw is not None and frame.image.shape[:2] != self.frame_hw:
            raise ValueError(f"frame shape {frame.image.shape[:2]} does not match {self.frame_hw}")
        if self._frames and not frame.timestamp > self._frames[-1].timestamp:
            raise ValueError(
                f"timestamp {frame.timestamp} does not follow previous timestamp {self._frames[-1].timestamp}"
            )
        self._frames.append(frame)
        self.count += 1
        return self

    def current_segment(self) -> SegmentWindow:
        if not self._frames:
            raise EmptyStreamError("no frames have been pushed")
        return SegmentWindow(tuple(self._frames))

    def __len__(self) -> int:
        return len(self._frames)


def push_frame(stream: FrameStream, frame: FrameSample) -> FrameStream:
    return stream.push(frame)


def current_segment(stream: FrameStream) -> SegmentWindow:
    return stream.current_segment()


# ---------------------------------------------------------------------------
# frame sources

def encode_header(width: int, height: int, fps: float, channels: int = 3) -> bytes:
    return HEADER.pack(MAGIC, width, height, channels, 0, fps, 0)


def decode_header(raw: bytes) -> tuple[int, int, int, float]:
    """Return ``(width, height, channels, fps)``."""
    if len(raw) != HEADER.size:
        raise ValueError(f"truncated header: {len(raw)} of {HEADER.size} bytes")
    magic, width, height, channels, _, fps, _ = HEADER.unpack(raw)
    if magic != MAGIC:
        raise ValueError(f"bad magic {magic!r}, expected {MAGIC!r}")
    if channels != 3:
        raise ValueError(f"only 3-channel RGB is supported, got {channels}")
    if width == 0 or height == 0 or not fps > 0:
        raise ValueError(f"invalid header: width={width} height={height} fps={fps}")
    return width, height, channels, float(fps)


def write_raw_stream(fh: BinaryIO, frames: np.ndarray, fps: float) -> None:
    """Serialize uint8 frames (n, H, W, 3) in the raw protocol."""
    frames = np.asarray(frames, dtype=np.uint8)
    fh.write(encode_header(frames.shape[2], frames.shape[1], fps))
    for frame in frames:
        fh.write(np.ascontiguousarray(frame).tobytes())


def read_raw_stream(fh: BinaryIO) -> Iterator[FrameSample]:
    width, height, channels, fps = decode_header(_read_exact(fh, HEADER.size))
    frame_bytes = width * height * channels
    i = 0
    while True:
        chunk = _read_exact(fh, frame_bytes, allow_eof=True)
        if chunk is None:
            return
        image = np.frombuffer(chunk, dtype=np.uint8).reshape(height, width, channels)
        yield FrameSample.from_array(i / fps, image)
        i += 1


def _read_exact(fh: BinaryIO, n: int, allow_eof: bool = False) -> bytes | None:
    buf = bytearray()
    while len(buf) < n:
        chunk = fh.read(n - len(buf))
        if not chunk:
            break
        buf += chunk
    if not buf and allow_eof:
        return None
    if len(buf) < n:
        raise ValueError(f"stream ended mid-record: got {len(buf)} of {n} bytes")
    return bytes(buf)


def iter_directory(directory, fps: float = 1.0) -> Iterator[FrameSample]:
    """Numbered images in ``directory``; frame ``i`` has timestamp ``i / fps``."""
    for i, path in enumerate(frame_paths(Path(directory))):
        yield FrameSample.from_array(i / fps, read_image(path))
