"""Online detection: push frames one at a time, get gated predictions back in order."""

from __future__ import annotations

from collections import deque
from concurrent.futures import Future, ThreadPoolExecutor
from dataclasses import dataclass
from typing import Iterable, Iterator

import numpy as np
import torch

from .data import PredictionRecord
from .explain import ExplanationResult, GateConfig, GeneratorClient, explain, gate
from .head import sigmoid
from .model import MistakeDetector
from .stream import FrameSample, FrameStream


@dataclass(frozen=True)
class MistakeDecision:
    timestep: float
    logits: np.ndarray  # per-query logits, shape (t_q,)
    aggregated_logit: float
    probability: float
    fired: bool


class OnlineDetector:
    """Runs the detector over one stream.

    Frames go through :meth:`push`; the window of the last ``t_s`` frames is
    evaluated on every ``stride``-th frame (the first frame always counts).
    Only the last ``t_s`` frames and their features are held in memory.

    With ``async_generation`` explanations are produced on a worker thread;
    detection carries on and :meth:`push` returns finished records strictly in
    timestep order.
    """

    def __init__(
        self,
        model: MistakeDetector,
        t_s: int = 8,
        stride: int = 1,
        gate_config: GateConfig | None = None,
        generator: GeneratorClient | None = None,
        video_id: str = "stream",
        encoder=None,
        async_generation: bool = False,
    ):
        if stride < 1:
            raise ValueError(f"stride must be >= 1, got {stride}")
        if t_s > model.config.qformer.max_positions:
            raise ValueError(f"t_s={t_s} exceeds the model's max_positions={model.config.qformer.max_positions}")
        self.model = model
        self.encoder = encoder if encoder is not None else model.visual_encoder
        self.stride = stride
        self.gate_config = gate_config or GateConfig()
        self.generator = generator
        self.video_id = video_id
        frame_hw = model.config.encoder.frame_hw if encoder is None else None
        self.stream = FrameStream(t_s, frame_hw)
        self._features: deque[np.ndarray] = deque(maxlen=t_s)
        self._executor = ThreadPoolExecutor(max_workers=1) if async_generation else None
        self._pending: deque[tuple[MistakeDecision, Future | None]] = deque()

    @property
    def t_s(self) -> int:
        return self.stream.t_s

    def decide(self) -> MistakeDecision:
        """Classify the current window without generating an explanation."""
        return self._evaluate()[0]

    def _evaluate(self) -> tuple[MistakeDecision, np.ndarray]:
        window = self.stream.current_segment()
        v = torch.from_numpy(np.stack(self._features))
        with torch.no_grad():
            out = self.model.forward_features(v)
        aggregated = float(out.aggregated)
        probability = sigmoid(aggregated)
        return MistakeDecision(
            timestep=window.current_timestep,
            logits=out.logits.numpy(),
            aggregated_logit=aggregated,
            probability=probability,
            fired=bool(gate(probability, self.gate_config.tau)),
        ), out.features.numpy()

    def _explain(self, f: np.ndarray, probability: float) -> ExplanationResult:
        return explain(self.gate_config, self.model.projection, f, probability, self.generator)

    def push(self, frame: FrameSample) -> list[PredictionRecord]:
        """Add a frame; return any prediction records that are now complete."""
        self.stream.push(frame)
        self._features.append(self.encoder.encode_sample(frame))
        if (self.stream.count - 1) % self.stride == 0:
            decision, f = self._evaluate()
            future = None
            if decision.fired:
                if self._executor is not None:
                    future = self._executor.submit(self._explain, f, decision.probability)
                else:
                    future = Future()
                    future.set_result(self._explain(f, decision.probability))
            self._pending.append((decision, future))
        return self._drain(block=False)

    def flush(self) -> list[PredictionRecord]:
        """Wait for outstanding explanations and return the remaining records."""
        records = self._drain(block=True)
        if self._executor is not None:
            self._executor.shutdown(wait=True)
            self._executor = None
        return records

    def _drain(self, block: bool) -> list[PredictionRecord]:
        out = []
        while self._pending:
            decision, future = self._pending[0]
            if future is not None and not block and not future.done():
                break
            self._pending.popleft()
            explanation = None
            if future is not None:
                result = future.result()
                explanation = result.explanation
            out.append(PredictionRecord(
                video_id=self.video_id,
                timestep=decision.timestep,
                probability=decision.probability,
                label="mistake" if decision.fired else "correct",
                explanation=explanation,
            ))
        return out

    def run(self, frames: Iterable[FrameSample]) -> Iterator[PredictionRecord]:
        for frame in frames:
            yield from self.push(frame)
        yield from self.flush()


def detect_frames(model: MistakeDetector, frames: Iterable[FrameSample], **kwargs) -> list[PredictionRecord]:
    return list(OnlineDetector(model, **kwargs).run(frames))
