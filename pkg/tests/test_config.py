"""Config document validation and dotted-path overrides."""

import json

import pytest

from arconv import ConfigurationError, RunConfig, apply_override


def test_empty_config_gets_defaults():
    cfg = RunConfig()
    assert cfg.seed == 0
    assert cfg.data["samples"] == 200
    assert cfg.data["bands"] == 4
    assert cfg.raw["network"]["base_channels"] == 32
    assert cfg.raw["training"]["epochs"] == 70
    assert cfg.metrics["window"] == 32


def test_partial_config_merges_with_defaults():
    cfg = RunConfig({"training": {"epochs": 40, "explore_epochs": 5},
                     "seed": 3})
    assert cfg.seed == 3
    assert cfg.raw["training"]["epochs"] == 40
    assert cfg.raw["training"]["batch_size"] == 8  # untouched default
    assert cfg.data["height"] == 64


def test_unknown_top_level_key_rejected():
    with pytest.raises(ConfigurationError, match="unknown config key 'bogus'"):
        RunConfig({"bogus": 1})


def test_unknown_nested_key_reports_dotted_path():
    with pytest.raises(ConfigurationError,
                       match="unknown config key 'training.momentum'"):
        RunConfig({"training": {"momentum": 0.9}})


def test_wrong_type_reports_path_and_expectation():
    with pytest.raises(ConfigurationError, match="seed: expected an integer"):
        RunConfig({"seed": "zero"})
    with pytest.raises(ConfigurationError,
                       match="data.noise: expected a number"):
        RunConfig({"data": {"noise": "lots"}})
    with pytest.raises(ConfigurationError,
                       match="network.hwa: expected true/false"):
        RunConfig({"network": {"hwa": 1}})


def test_bool_is_not_an_integer():
    with pytest.raises(ConfigurationError, match="data.samples"):
        RunConfig({"data": {"samples": True}})


def test_section_must_be_object():
    with pytest.raises(ConfigurationError, match="training: expected an object"):
        RunConfig({"training": 3})


def test_override_parses_json_values():
    raw = {}
    apply_override(raw, "training.epochs=60")
    apply_override(raw, "network.hwa=false")
    apply_override(raw, "data.weights=[0.5, 0.5, 0.0, 0.0]")
    assert raw["training"]["epochs"] == 60
    assert raw["network"]["hwa"] is False
    assert raw["data"]["weights"] == [0.5, 0.5, 0.0, 0.0]


def test_override_falls_back_to_string():
    raw = {}
    apply_override(raw, "network.hw_range=1-18")
    assert raw["network"]["hw_range"] == "1-18"


def test_override_requires_key_equals_value():
    with pytest.raises(ConfigurationError, match="key=value"):
        apply_override({}, "training.epochs")
    with pytest.raises(ConfigurationError, match="empty key"):
        apply_override({}, "=3")


def test_overridden_unknown_key_still_rejected(tmp_path):
    with pytest.raises(ConfigurationError, match="training.bogus"):
        RunConfig.load(None, ["training.bogus=1"])


def test_seed_argument_wins_over_file_and_override(tmp_path):
    p = tmp_path / "c.json"
    p.write_text(json.dumps({"seed": 5}))
    cfg = RunConfig.load(p, ["seed=7"], seed=9)
    assert cfg.seed == 9


def test_load_missing_file_and_bad_json(tmp_path):
    with pytest.raises(ConfigurationError, match="does not exist"):
        RunConfig.load(tmp_path / "nope.json")
    p = tmp_path / "broken.json"
    p.write_text("{not json")
    with pytest.raises(ConfigurationError, match="not valid JSON"):
        RunConfig.load(p)


def test_network_config_mapping():
    ranges = ["1-9", "1-18"] * 3  # 3 blocks of 2 layers at one level
    cfg = RunConfig({"data": {"bands": 8},
                     "network": {"base_channels": 16, "fixed_spec": [5, 3],
                                 "num_levels": 1, "hw_range": ranges}})
    nc = cfg.network_config()
    assert nc.bands == 8
    assert nc.base_channels == 16
    assert nc.fixed_spec == (5, 3)
    assert nc.hw_range == ranges


def test_train_config_mapping():
    cfg = RunConfig({"training": {"epochs": 12, "explore_epochs": 2,
                                  "lr0": 1e-3}})
    tc = cfg.train_config()
    assert tc.epochs == 12 and tc.explore_epochs == 2 and tc.lr0 == 1e-3
    assert tc.decay_period == 20


def test_semantic_errors_surface_at_construction():
    with pytest.raises(ConfigurationError):
        RunConfig({"data": {"holdout": 200}})  # >= samples
    with pytest.raises(ConfigurationError):
        RunConfig({"data": {"sigma": 0}})
    with pytest.raises(ConfigurationError):
        RunConfig({"training": {"explore_epochs": 70}})  # == epochs
    with pytest.raises(ConfigurationError):
        RunConfig({"network": {"k_max": 4}})
    with pytest.raises(ConfigurationError):
        RunConfig({"metrics": {"window": 1}})


def test_to_json_round_trips():
    cfg = RunConfig({"seed": 11, "network": {"n": 2.5}})
    again = RunConfig(json.loads(cfg.to_json()))
    assert again.raw == cfg.raw
