import json

import pytest

from pcanet.config import PRESETS, RunConfig, TrainConfig, load_config
from pcanet.errors import ConfigError


def test_defaults():
    cfg = RunConfig()
    t = cfg.train
    assert (t.epochs, t.base_lr, t.anneal_factor, t.anneal_every) == (30, 0.01, 0.9, 2)
    assert (t.momentum, t.weight_decay, t.batch_size) == (0.9, 1e-5, 8)
    assert (t.theta, t.lam, t.alpha) == (0.5, 0.5, 0.5)
    assert t.flags == {"enable_ca": True, "enable_ae": True, "enable_center": True}
    assert cfg.backbone.stage_channels == (16, 32, 64)
    assert cfg.data.images_per_class == 120


def test_flat_dict_round_trip():
    cfg = RunConfig().updated({"lambda": 0.1, "stage_channels": [4, 8], "epochs": 3})
    d = cfg.to_dict()
    assert d["lambda"] == 0.1 and "lam" not in d
    assert list(d) == sorted(d)
    assert RunConfig.from_dict(d) == cfg


def test_presets():
    assert RunConfig().updated({"preset": "long"}).train.epochs == 180
    assert RunConfig().updated({"preset": "long", "epochs": 5}).train.epochs == 5
    assert set(PRESETS) >= {"desk", "long"}
    with pytest.raises(ConfigError):
        RunConfig().updated({"preset": "huge"})


@pytest.mark.parametrize("values", [
    {"bogus": 1}, {"base_lr": 0}, {"anneal_factor": 1.5}, {"anneal_factor": 0}, {"batch_size": 7},
    {"theta": 1.0}, {"epochs": "many"}, {"enable_ca": "maybe"}, {"attention_reduce": "mean"},
    {"precision": "float16"}, {"input_size": 60},
])
def test_invalid_values(values):
    with pytest.raises(ConfigError):
        RunConfig().updated(values)


def test_overrides_parse_json_values():
    cfg = RunConfig().with_overrides(["enable_ae=false", "theta=0.3", "stage_channels=[8,16]",
                                      "attention_reduce=pixel_max"])
    assert cfg.train.enable_ae is False and cfg.train.theta == 0.3
    assert cfg.backbone.stage_channels == (8, 16)
    assert cfg.train.attention_reduce == "pixel_max"
    with pytest.raises(ConfigError):
        RunConfig().with_overrides(["epochs"])


def test_load_config_file(tmp_path):
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps({"epochs": 2, "lambda": 0.0}))
    cfg = load_config(path, ["seed=4"])
    assert (cfg.train.epochs, cfg.train.lam, cfg.train.seed) == (2, 0.0, 4)
    path.write_text("[1, 2]")
    with pytest.raises(ConfigError):
        load_config(path)
    path.write_text("{nope")
    with pytest.raises(ConfigError):
        load_config(path)


def test_train_config_validate_directly():
    with pytest.raises(ConfigError):
        TrainConfig(batch_size=0).validate()
