import json

import pytest

from mistakedet.config import ConfigError, RunConfig, apply_overrides, from_dict, load_config


def test_defaults_validate():
    cfg = load_config()
    assert isinstance(cfg, RunConfig)
    assert cfg.model_config().qformer.max_positions == cfg.stream.t_s
    assert from_dict(cfg.to_dict()) == cfg


def test_overrides_and_seed(tmp_path):
    path = tmp_path / "c.json"
    path.write_text(json.dumps({"train": {"epochs": 3}}))
    cfg = load_config(path, ["train.learning_rate=0.1", "explain.generator=none"], seed=9)
    assert cfg.train.epochs == 3 and cfg.train.learning_rate == 0.1
    assert cfg.explain.generator == "none" and cfg.seed == 9
    assert apply_overrides({}, ["a.b.c=[1,2]"]) == {"a": {"b": {"c": [1, 2]}}}


@pytest.mark.parametrize("data,msg", [
    ({"bogus": 1}, "unknown key"),
    ({"train": {"epochs": "ten"}}, "train.epochs"),
    ({"train": {"epochs": True}}, "train.epochs"),
    ({"data": {"steps_per_task": 12}}, "steps_per_task"),
    ({"explain": {"tau": 1.0}}, "tau"),
    ({"explain": {"generator": "external"}}, "endpoint"),
    ({"stream": {"t_s": 16}, "qformer": {"max_positions": 8}}, "max_positions"),
    ({"train": {"windows": "clip"}}, "windows"),
    ({"encoder": {"patch_size": 7}}, "divisible"),
])
def test_invalid_configs(data, msg):
    with pytest.raises(ConfigError, match=msg):
        from_dict(data)


def test_bad_files(tmp_path):
    (tmp_path / "bad.json").write_text("{")
    with pytest.raises(ConfigError, match="invalid JSON"):
        load_config(tmp_path / "bad.json")
    with pytest.raises(ConfigError, match="cannot read"):
        load_config(tmp_path / "missing.json")
    with pytest.raises(ConfigError):
        load_config(None, ["novalue"])
