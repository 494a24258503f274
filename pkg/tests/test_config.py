import pytest

from vitalgrid.config import PipelineConfig
from vitalgrid.errors import ConfigError


def test_defaults_are_valid():
    cfg = PipelineConfig().validate()
    assert cfg.grid_hours == 720
    assert cfg.top_by_count == 77
    assert cfg.top_by_correlation == 20
    assert cfg.test_fraction == 0.20
    assert cfg.sample_limit == 5000
    assert cfg.n_trees == 100


@pytest.mark.parametrize(
    "kwargs",
    [
        {"grid_hours": 0},
        {"window": 0},
        {"top_by_correlation": 0},
        {"top_by_correlation": 10, "top_by_count": 5},
        {"test_fraction": 0.0},
        {"test_fraction": 1.0},
        {"n_trees": 0},
        {"min_leaf": 0},
        {"mtry_rule": "half"},
        {"variation": "iqr"},
        {"classifier": "svm"},
        {"sample_limit": 0},
        {"workers": 0},
    ],
)
def test_invalid_configs_rejected(kwargs):
    with pytest.raises(ConfigError):
        PipelineConfig(**kwargs).validate()


def test_dict_round_trip():
    cfg = PipelineConfig(grid_hours=48, seed=9, sample_limit=None)
    assert PipelineConfig.from_dict(cfg.to_dict()) == cfg
    with pytest.raises(ConfigError):
        PipelineConfig.from_dict({"grid_hourz": 10})
