import json

import pytest

from nmrf.config import (
    ModelConfig,
    RunConfig,
    config_hash,
    parse_override,
    resolve_config,
    save_resolved_config,
    validate_config,
)
from nmrf.errors import ConfigError
from tests.helpers import tiny_run_tree


def test_defaults_follow_reference_architecture():
    model = RunConfig().model
    assert (model.k, model.window, model.refine_window) == (4, 6, 4)
    assert (model.num_proposal_layers, model.num_inference_layers, model.num_refine_layers) == (5, 10, 5)
    assert model.embed_dim == 128 and model.feature_channels == 256


def test_kitti_preset_inherits_architecture():
    config = resolve_config(preset="kitti")
    assert config.model.num_inference_layers == 10
    assert config.train.crop == (304, 1152)
    assert config.train.steps == 39000


def test_toy_preset_is_synthetic():
    config = resolve_config(preset="toy")
    assert config.data.source == "synthetic"
    assert (config.model.num_proposal_layers, config.model.num_inference_layers) == (2, 4)


def test_file_include_and_overrides(tmp_path):
    (tmp_path / "base.json").write_text(json.dumps({"model": {"k": 2, "z_max": 64}}))
    (tmp_path / "run.json").write_text(json.dumps({"include": ["base.json"], "model": {"window": 4}}))
    config = resolve_config(tmp_path / "run.json", overrides=["model.k=3", "train.device=cpu"])
    assert (config.model.k, config.model.window, config.model.z_max) == (3, 4, 64)
    assert config.train.device == "cpu"


def test_circular_include(tmp_path):
    (tmp_path / "a.json").write_text(json.dumps({"include": ["b.json"]}))
    (tmp_path / "b.json").write_text(json.dumps({"include": ["a.json"]}))
    with pytest.raises(ConfigError, match="Circular"):
        resolve_config(tmp_path / "a.json")


def test_missing_include(tmp_path):
    (tmp_path / "a.json").write_text(json.dumps({"include": ["nowhere.json"]}))
    with pytest.raises(ConfigError):
        resolve_config(tmp_path / "a.json")


def test_parse_override_types():
    assert parse_override("model.self_edges=shared") == {"model": {"self_edges": "shared"}}
    assert parse_override("train.crop=[64,128]") == {"train": {"crop": [64, 128]}}
    assert parse_override("model.adaptive_bias=false") == {"model": {"adaptive_bias": False}}
    with pytest.raises(ConfigError):
        parse_override("model.k")


@pytest.mark.parametrize(
    "override",
    [
        "model.window=5",
        "model.z_max=100",
        "model.k=30",
        "model.num_heads=3",
        "model.self_edges=sometimes",
        "train.crop=[60,128]",
        "model.unknown=1",
        "data.synthetic.min_layers=6",
    ],
)
def test_invalid_values_rejected(override):
    with pytest.raises(ConfigError):
        resolve_config(preset="toy", overrides=[override])


def test_hash_tracks_model_section_only():
    base = validate_config(tiny_run_tree())
    retrained = validate_config({**tiny_run_tree(), "train": {"steps": 5}})
    assert config_hash(base.model) == config_hash(retrained.model)
    assert config_hash(base.model) != config_hash(ModelConfig(**{**base.model.model_dump(), "k": 3}))


def test_resolved_config_is_reloadable(tmp_path, tiny_run_config):
    path = save_resolved_config(tiny_run_config, tmp_path / "run")
    assert validate_config(json.loads(path.read_text())) == tiny_run_config
