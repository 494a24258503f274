"""Pipeline configuration.

One PipelineConfig drives every stage; every knob that affects output is
here so a config file plus a seed reproduces a run byte-for-byte.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, fields

from .errors import ConfigError

MTRY_RULES = ("sqrt", "third")
VARIATION_STATS = ("range", "variance")
CLASSIFIERS = ("random_forest", "knn", "logistic")


@dataclass
class PipelineConfig:
    # hourly grid
    grid_hours: int = 720  # grid length H (30 days of hourly slots)
    # sign selection
    top_by_count: int = 77  # signs kept by raw record count
    top_by_correlation: int = 20  # of those, signs kept by |pearson|
    # interpolation features
    window: int = 6  # half-width, in hours, of the pooling neighbourhood
    variation: str = "range"  # window spread statistic: range (max-min) or variance
    # classifier forest
    n_trees: int = 100
    max_depth: int | None = 16
    min_leaf: int = 2
    mtry_rule: str = "sqrt"  # per-node feature subset size rule for the classifier
    classifier: str = "random_forest"
    # interpolation forests (one regression forest per sign)
    interp_trees: int = 30
    interp_depth: int | None = 12
    interp_min_leaf: int = 2
    interp_sample_cap: int | None = 50_000  # training instances per sign, seeded subsample
    # evaluation
    test_fraction: float = 0.20
    stratify: bool = True
    sample_limit: int | None = 5000  # cap on admissions, applied before splitting
    # reproducibility / execution
    seed: int = 0
    workers: int | None = None  # parallel tree training; None = sequential

    def validate(self) -> "PipelineConfig":
        if self.grid_hours < 1:
            raise ConfigError("grid_hours must be >= 1")
        if self.window < 1:
            raise ConfigError("window must be >= 1")
        if not (1 <= self.top_by_correlation <= self.top_by_count):
            raise ConfigError("need 1 <= top_by_correlation <= top_by_count")
        if not (0.0 < self.test_fraction < 1.0):
            raise ConfigError("test_fraction must be in (0, 1)")
        if self.n_trees < 1 or self.interp_trees < 1:
            raise ConfigError("forest sizes must be >= 1")
        if self.min_leaf < 1 or self.interp_min_leaf < 1:
            raise ConfigError("min_leaf must be >= 1")
        if self.mtry_rule not in MTRY_RULES:
            raise ConfigError(f"mtry_rule must be one of {MTRY_RULES}")
        if self.variation not in VARIATION_STATS:
            raise ConfigError(f"variation must be one of {VARIATION_STATS}")
        if self.classifier not in CLASSIFIERS:
            raise ConfigError(f"classifier must be one of {CLASSIFIERS}")
        if self.sample_limit is not None and self.sample_limit < 1:
            raise ConfigError("sample_limit must be >= 1 or null")
        if self.interp_sample_cap is not None and self.interp_sample_cap < 1:
            raise ConfigError("interp_sample_cap must be >= 1 or null")
        if self.workers is not None and self.workers < 1:
            raise ConfigError("workers must be >= 1 or null")
        return self

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "PipelineConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown pipeline config keys: {sorted(unknown)}")
        return cls(**d).validate()
