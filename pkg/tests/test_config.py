import json

import pytest

from helix_impute.config import RunConfig
from helix_impute.errors import ConfigError


def test_defaults_build_every_section():
    cfg = RunConfig()
    assert cfg.model_config(5).n_features == 5
    assert cfg.train_config().seed == 0
    assert cfg.synthetic_spec().n_steps == 24


def test_seed_propagates():
    cfg = RunConfig(seed=9)
    assert cfg.train_config().seed == cfg.corruption_spec().seed == cfg.synthetic_spec().seed == 9


@pytest.mark.parametrize(
    "bad",
    [
        {"sede": 1},
        {"model": {"layers": 2}},
        {"train": {"seed": 1}},
        {"model": {"n_features": 3}},
        {"corruption": {"pattern": "zigzag"}},
        {"train": {"lr": -1}},
        {"seed": -1},
        {"seed": 1.5},
        {"window": 0},
        {"paths": {"weights": "x"}},
    ],
)
def test_invalid_configs(bad):
    with pytest.raises(ConfigError):
        RunConfig.from_dict(bad)


def test_file_round_trip(tmp_path):
    cfg = RunConfig(seed=4, window=12, model={"d_model": 8}, corruption={"pattern": "block"})
    cfg.save(tmp_path / "c.json")
    assert RunConfig.load(tmp_path / "c.json") == cfg
    assert json.loads(cfg.dumps()) == cfg.to_dict()
    (tmp_path / "bad.json").write_text("{")
    with pytest.raises(ConfigError):
        RunConfig.load(tmp_path / "bad.json")
    (tmp_path / "list.json").write_text("[]")
    with pytest.raises(ConfigError):
        RunConfig.load(tmp_path / "list.json")


def test_overrides():
    cfg = RunConfig().with_overrides(seed=2, **{"corruption.rate": 0.3, "model.variant": None})
    assert cfg.seed == 2 and cfg.corruption == {"rate": 0.3} and cfg.model == {}
    with pytest.raises(ConfigError):
        cfg.with_overrides(**{"model.variant": "bogus"})
