import numpy as np
import pytest
import torch
from hypothesis import given, settings, strategies as st

import oracles
from conftest import max_rel, param_dict, randomize
from mistakedet.layers import DTYPE
from mistakedet.video_qformer import VideoQFormer, VideoQFormerConfig, parameter_groups

ONE_BLOCK = VideoQFormerConfig(t_q=3, d2=6, layers=1, heads=1, max_positions=5, input_dim=4)


@pytest.mark.parametrize("frames", [1, 3, 5])
@pytest.mark.parametrize("seed", range(3))
def test_one_block_matches_oracle(frames, seed):
    q = randomize(VideoQFormer(ONE_BLOCK), seed)
    v = np.random.default_rng(50 + seed).normal(size=(frames, 4))
    with torch.no_grad():
        got = q(torch.from_numpy(v)).numpy()
    want = oracles.video_qformer_forward(param_dict(q), v)
    assert got.shape == (3, 6)
    assert max_rel(got, want) < 1e-10


def test_without_positions_matches_oracle():
    cfg = VideoQFormerConfig(t_q=2, d2=4, layers=1, heads=1, max_positions=4, input_dim=4,
                             use_temporal_positions=False, context_norm=False)
    q = randomize(VideoQFormer(cfg), 7)
    assert q.context_norm is None
    v = np.random.default_rng(0).normal(size=(4, 4))
    with torch.no_grad():
        got = q(torch.from_numpy(v)).numpy()
    assert max_rel(got, oracles.video_qformer_forward(param_dict(q), v, use_positions=False)) < 1e-10


def test_identical_rows_permutation_invariant_without_positions():
    cfg = VideoQFormerConfig(t_q=2, d2=4, layers=2, heads=2, max_positions=4, input_dim=4,
                             use_temporal_positions=False)
    q = randomize(VideoQFormer(cfg), 1)
    v = torch.from_numpy(np.random.default_rng(0).normal(size=(4, 4)))
    with torch.no_grad():
        a = q(v)
        b = q(v[[2, 0, 3, 1]])
    np.testing.assert_allclose(a.numpy(), b.numpy(), rtol=0, atol=1e-12)


@pytest.mark.parametrize("seed", range(10))
def test_positions_make_output_order_sensitive(seed):
    q = randomize(VideoQFormer(VideoQFormerConfig(t_q=2, d2=8, layers=1, heads=2, max_positions=4,
                                                  input_dim=8)), seed)
    v = torch.from_numpy(np.random.default_rng(seed).normal(size=(4, 8)))
    with torch.no_grad():
        assert not torch.allclose(q(v), q(v.flip(0)), atol=1e-9)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10_000), st.integers(1, 8))
def test_attention_rows_are_distributions(seed, frames):
    q = randomize(VideoQFormer(VideoQFormerConfig(t_q=3, d2=8, layers=2, heads=2, max_positions=8,
                                                  input_dim=4)), seed)
    v = torch.from_numpy(np.random.default_rng(seed).normal(size=(frames, 4)))
    with torch.no_grad():
        f, maps = q(v, return_attention=True)
    assert f.shape == (3, 8)
    for m in maps:
        assert m["self"].shape == (2, 3, 3) and m["cross"].shape == (2, 3, frames)
        for a in (m["self"], m["cross"]):
            assert torch.all(a >= 0)
            assert torch.max(torch.abs(a.sum(-1) - 1)) < 1e-12


def test_batched_equals_single():
    q = randomize(VideoQFormer(ONE_BLOCK), 2)
    v = torch.from_numpy(np.random.default_rng(0).normal(size=(3, 5, 4)))
    with torch.no_grad():
        batched = q(v)
        single = torch.stack([q(x) for x in v])
    np.testing.assert_allclose(batched.numpy(), single.numpy(), rtol=0, atol=1e-13)


def test_input_errors():
    q = VideoQFormer(ONE_BLOCK)
    with pytest.raises(ValueError, match="input_dim"):
        q(torch.zeros(2, 3, dtype=DTYPE))
    with pytest.raises(ValueError, match="max_positions"):
        q(torch.zeros(6, 4, dtype=DTYPE))
    with pytest.raises(ValueError, match="empty"):
        q(torch.zeros(0, 4, dtype=DTYPE))
    with pytest.raises(ValueError):
        VideoQFormerConfig(d2=6, heads=4)


def test_parameter_groups_cover_every_parameter_once():
    q = VideoQFormer(VideoQFormerConfig(t_q=2, d2=8, layers=2, heads=2, max_positions=4, input_dim=8))
    groups = parameter_groups(q)
    assert sum(int(np.prod(s)) for s in groups.values()) == sum(p.numel() for p in q.parameters())
    assert groups["query_bank"] == (2, 8)
    assert groups["temporal_pos"] == (4, 8)
    assert list(groups) == list(parameter_groups(q))
    no_pos = VideoQFormer(VideoQFormerConfig(t_q=2, d2=8, layers=1, heads=2, max_positions=4, input_dim=8,
                                             use_temporal_positions=False))
    assert "temporal_pos" not in parameter_groups(no_pos)
