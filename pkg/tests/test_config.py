import json

import pytest

from hierslu.config import ExperimentConfig, config_from_dict, load_config, parse_override, save_config
from hierslu.errors import ConfigError


def test_defaults_resolve():
    cfg = load_config()
    assert cfg.model_config().base_dim == cfg.data.base_dim
    assert cfg.training_config().losses.temperature == 0.07
    assert cfg.training_config().dropframe.max_len == 256
    assert cfg.model.n_max == 10


def test_unknown_keys_rejected(tmp_path):
    p = tmp_path / "c.json"
    p.write_text(json.dumps({"training": {"learnin_rate": 0.1}}))
    with pytest.raises(ConfigError, match="learnin_rate"):
        load_config(p)
    p.write_text(json.dumps({"bogus": 1}))
    with pytest.raises(ConfigError):
        load_config(p)


def test_invalid_values_rejected():
    with pytest.raises(ConfigError):
        load_config(overrides=["training.regime=HIER-Q"])
    with pytest.raises(ConfigError):
        load_config(overrides=["losses.temperature=0"])
    with pytest.raises(ConfigError):
        load_config(overrides=["model.conversation_variant=gru"])
    with pytest.raises(ConfigError):
        load_config(overrides=["data.p_hist=2"])


def test_overrides():
    cfg = load_config(overrides=["training.max_epochs=5", "model.conversation_variant=recurrent", "eval.context_len=1"])
    assert cfg.training.max_epochs == 5
    assert cfg.model.conversation_variant == "recurrent"
    assert cfg.eval.context_len == 1
    with pytest.raises(ConfigError):
        load_config(overrides=["training.nope=1"])
    with pytest.raises(ConfigError):
        parse_override("no-equals")


def test_partial_file_merges_with_defaults(tmp_path):
    p = tmp_path / "c.json"
    p.write_text(json.dumps({"data": {"n_train": 7}, "ablation": {"seeds": [4, 5]}}))
    cfg = load_config(p)
    assert cfg.data.n_train == 7 and cfg.data.n_dev == ExperimentConfig().data.n_dev
    assert cfg.ablation.seeds == (4, 5)


def test_resolved_config_round_trip(tmp_path):
    cfg = load_config(overrides=["seed=3", "training.regime=HIER-S"])
    save_config(cfg, tmp_path / "resolved.json")
    again = load_config(tmp_path / "resolved.json")
    assert again == cfg
    assert config_from_dict(cfg.to_dict()) == cfg


def test_missing_or_bad_file(tmp_path):
    with pytest.raises(ConfigError):
        load_config(tmp_path / "nope.json")
    (tmp_path / "bad.json").write_text("{")
    with pytest.raises(ConfigError):
        load_config(tmp_path / "bad.json")
