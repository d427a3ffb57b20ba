"""Threshold gate, feature projection and explanation generator clients.

An explanation is requested only when the segment's mistake probability
reaches the threshold ``tau`` (inclusive). The projected query features are
handed to the generator as prefix embeddings ahead of the prompt.
"""

from __future__ import annotations

import base64
import hashlib
import json
import logging
import math
import time
import urllib.error
import urllib.request
from dataclasses import dataclass
from typing import Protocol

import numpy as np
import torch
from torch import nn

from .layers import DTYPE

log = logging.getLogger(__name__)

DEFAULT_PROMPT = (
    "You see features of a task recording in which a mistake was detected. Explain the mistake."
)
FEATURES_PLACEHOLDER = "<features>"


@dataclass(frozen=True)
class GateConfig:
    tau: float = 0.5
    prompt_template: str = FEATURES_PLACEHOLDER + " " + DEFAULT_PROMPT

    def __post_init__(self):
        if not 0.0 < self.tau < 1.0:
            raise ValueError(f"tau must lie in (0, 1), got {self.tau}")
        if FEATURES_PLACEHOLDER not in self.prompt_template:
            raise ValueError(f"prompt_template must contain {FEATURES_PLACEHOLDER!r}")

    def render_prompt(self) -> str:
        """Prompt text with the features placeholder removed; features go in as a prefix."""
        return self.prompt_template.replace(FEATURES_PLACEHOLDER, "").strip()


def gate(probability: float, tau: float) -> int:
    if not (0.0 <= probability <= 1.0):
        raise ValueError(f"probability must lie in [0, 1], got {probability}")
    if not (0.0 < tau < 1.0):
        raise ValueError(f"tau must lie in (0, 1), got {tau}")
    return 1 if probability >= tau else 0


class Projection(nn.Module):
    """Affine map from query features (d2) into the generator's embedding space."""

    def __init__(self, d2: int, d_llm: int):
        super().__init__()
        self.linear = nn.Linear(d2, d_llm, dtype=DTYPE)

    @property
    def d_llm(self) -> int:
        return self.linear.out_features

    def forward(self, f: torch.Tensor) -> torch.Tensor:
        if f.shape[-1] != self.linear.in_features:
            raise ValueError(f"feature width {f.shape[-1]} does not match d2={self.linear.in_features}")
        return self.linear(f)


def project(weight: np.ndarray, bias: np.ndarray, f: np.ndarray) -> np.ndarray:
    """Row-wise ``f @ weight + bias`` with weight of shape (d2, d_llm)."""
    weight, bias, f = (np.asarray(a, dtype=np.float64) for a in (weight, bias, f))
    if f.ndim != 2 or weight.ndim != 2 or f.shape[1] != weight.shape[0]:
        raise ValueError(f"cannot project features {f.shape} with weight {weight.shape}")
    if bias.shape != (weight.shape[1],):
        raise ValueError(f"bias shape {bias.shape} does not match d_llm={weight.shape[1]}")
    return f @ weight + bias


class GeneratorClient(Protocol):
    def generate(self, prefix_embeddings: np.ndarray, prompt: str) -> str: ...

    def embedding_width(self) -> int: ...


class GenerationError(RuntimeError):
    pass


class MockGenerator:
    """Deterministic stand-in for a language model.

    Returns a fixed template carrying a digest of its inputs and counts calls.
    """

    def __init__(self, width: int = 32, seed: int = 0):
        self.width = width
        self.seed = seed
        self.calls = 0

    def embedding_width(self) -> int:
        return self.width

    def generate(self, prefix_embeddings: np.ndarray, prompt: str) -> str:
        self.calls += 1
        prefix = np.ascontiguousarray(prefix_embeddings, dtype="<f8")
        if prefix.ndim != 2 or prefix.shape[1] != self.width:
            raise GenerationError(f"prefix embeddings {prefix.shape} do not have width {self.width}")
        digest = hashlib.sha256()
        digest.update(str(self.seed).encode())
        digest.update(prefix.tobytes())
        digest.update(prompt.encode("utf-8"))
        return f"a mistake was detected in this step (ref {digest.hexdigest()[:12]})"


class ExternalGenerator:
    """Client for a generator served over HTTP.

    Request (POST, JSON)::

        {"prompt": str, "features": base64 of little-endian float64 bytes,
         "shape": [t_q, d_llm], "dtype": "float64", "seed": int}

    Response (JSON): ``{"text": str}``.
    """

    def __init__(self, endpoint: str, width: int, timeout: float = 10.0, retries: int = 1, seed: int = 0):
        self.endpoint = endpoint
        self.width = width
        self.timeout = timeout
        self.retries = retries
        self.seed = seed
        self.calls = 0

    def embedding_width(self) -> int:
        return self.width

    def request_body(self, prefix_embeddings: np.ndarray, prompt: str) -> bytes:
        prefix = np.ascontiguousarray(prefix_embeddings, dtype="<f8")
        return json.dumps({
            "prompt": prompt,
            "features": base64.b64encode(prefix.tobytes()).decode("ascii"),
            "shape": list(prefix.shape),
            "dtype": "float64",
            "seed": self.seed,
        }).encode("utf-8")

    def generate(self, prefix_embeddings: np.ndarray, prompt: str) -> str:
        self.calls += 1
        body = self.request_body(prefix_embeddings, prompt)
        last_error: Exception | None = None
        for attempt in range(self.retries + 1):
            req = urllib.request.Request(
                self.endpoint, data=body, headers={"Content-Type": "application/json"}, method="POST"
            )
            try:
                with urllib.request.urlopen(req, timeout=self.timeout) as resp:
                    payload = json.loads(resp.read().decode("utf-8"))
                text = payload["text"]
                if not isinstance(text, str):
                    raise GenerationError(f"response field 'text' is {type(text).__name__}, not str")
                return text
            except (urllib.error.URLError, TimeoutError, OSError, KeyError, ValueError) as exc:
                last_error = exc
                log.warning("generator request %d failed: %s", attempt + 1, exc)
                if attempt < self.retries:
                    time.sleep(min(0.1 * 2**attempt, 1.0))
        raise GenerationError(f"generator at {self.endpoint} failed: {last_error}")


@dataclass(frozen=True)
class ExplanationResult:
    fired: bool
    probability: float
    explanation: str | None = None
    error: str | None = None


def explain(
    config: GateConfig,
    projection: Projection,
    f,
    probability: float,
    generator: GeneratorClient | None,
) -> ExplanationResult:
    """Gate on ``probability``; when open, project ``f`` and ask the generator.

    A failing generator still yields ``fired=True``; the explanation then holds
    an error marker and ``error`` carries the reason.
    """
    if not gate(probability, config.tau):
        return ExplanationResult(fired=False, probability=probability)
    if generator is None:
        return ExplanationResult(
            fired=True, probability=probability,
            explanation="[explanation unavailable: generator disabled]", error="generator disabled",
        )
    with torch.no_grad():
        prefix = projection(torch.as_tensor(np.asarray(f), dtype=DTYPE)).numpy()
    if prefix.shape[-1] != generator.embedding_width():
        raise ValueError(
            f"projection width {prefix.shape[-1]} does not match generator width {generator.embedding_width()}"
        )
    try:
        text = generator.generate(prefix, config.render_prompt())
    except Exception as exc:  # generator faults must not disturb detection
        return ExplanationResult(
            fired=True, probability=probability,
            explanation=f"[explanation unavailable: {exc}]", error=str(exc),
        )
    return ExplanationResult(fired=True, probability=probability, explanation=text)


def text_embedding(text: str, width: int) -> np.ndarray:
    """Deterministic bag-of-words hash embedding, unit norm (zero for empty text)."""
    out = np.zeros(width)
    for token in text.lower().split():
        seed = int.from_bytes(hashlib.sha256(token.encode("utf-8")).digest()[:8], "little")
        out += np.random.default_rng(seed).standard_normal(width)
    norm = math.sqrt(float(out @ out))
    return out / norm if norm > 0 else out
