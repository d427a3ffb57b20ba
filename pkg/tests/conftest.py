import sys
from pathlib import Path

import numpy as np
import pytest
import torch

ACCEPTANCE: list[str] = []

sys.path.insert(0, str(Path(__file__).parent))
torch.set_num_threads(1)

import oracles  # noqa: E402
from mistakedet.encoder import EncoderConfig  # noqa: E402
from mistakedet.explain import text_embedding  # noqa: E402
from mistakedet.model import MistakeDetector, ModelConfig  # noqa: E402
from mistakedet.training import Sample  # noqa: E402
from mistakedet.video_qformer import VideoQFormerConfig  # noqa: E402


def toy_model_config(t_s=4, t_q=2, d1=8, d2=8, frame_size=16, d_llm=6, layers=1, heads=2,
                     aggregator="max") -> ModelConfig:
    return ModelConfig(
        encoder=EncoderConfig(frame_size=frame_size, patch_size=8, vit_layers=1, vit_heads=2,
                              vit_dim=8, spatial_queries=2, d1=d1),
        qformer=VideoQFormerConfig(t_q=t_q, d2=d2, layers=layers, heads=heads,
                                   max_positions=t_s, input_dim=d1),
        aggregator=aggregator,
        d_llm=d_llm,
    )


def randomize(module, seed=0, scale=0.5):
    """Replace every parameter with N(0, scale^2) draws so oracle checks are not near-degenerate."""
    rng = np.random.default_rng(seed)
    with torch.no_grad():
        for _, p in module.named_parameters():
            p.copy_(torch.from_numpy(rng.normal(0.0, scale, tuple(p.shape))))
    return module


def param_dict(module):
    return {k: v.detach().numpy().copy() for k, v in module.named_parameters()}


def max_rel(a, b):
    a, b = np.asarray(a), np.asarray(b)
    return float(np.max(np.abs(a - b)) / max(np.max(np.abs(b)), 1e-300))


@pytest.fixture
def toy_config():
    return toy_model_config()


@pytest.fixture
def toy_model(toy_config):
    return MistakeDetector(toy_config, seed=0)


def toy_samples(n, t_s, d1, d_llm, seed=0):
    rng = np.random.default_rng(seed)
    out = []
    for i in range(n):
        label = i % 2
        length = 1 + (i % t_s)
        target = text_embedding(f"step {i} wrong", d_llm) if label else None
        out.append(Sample(label=label, features=rng.normal(size=(length, d1)), target=target))
    return out


def gradcheck(model, trainer, samples, names):
    params = dict(model.named_parameters())
    trainer.optimizer.zero_grad()
    total, _, _ = trainer.loss(samples)
    total.backward()
    analytic = [params[n].grad.numpy().copy() for n in names]
    arrays = [params[n].detach().numpy() for n in names]  # shares storage with the parameters

    def loss_value():
        with torch.no_grad():
            return float(trainer.loss(samples)[0])

    numeric = oracles.central_difference(loss_value, arrays, step=1e-5)
    groups = {}
    for n, a, b in zip(names, analytic, numeric):
        key = group_of(n)
        ga, gb = groups.get(key, ([], []))
        groups[key] = (ga + [a.ravel()], gb + [b.ravel()])
    return {k: oracles.relative_error(np.concatenate(a), np.concatenate(b)) for k, (a, b) in groups.items()}


def group_of(name):
    """Named parameter -> reported group (queries, attention, FFN, norms, head, projection...)."""
    for part in ("self_attn", "cross_attn", "ffn", "mlp", "attn", "norm"):
        if f".{part}" in name:
            return name.split(f".{part}")[0] + "." + part
    return name.rsplit(".", 1)[0] if name.endswith(("weight", "bias")) else name


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.write_sep("=", "acceptance criteria")
        for line in ACCEPTANCE:
            terminalreporter.write_line(line)
