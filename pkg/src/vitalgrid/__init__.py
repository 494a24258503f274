"""Data-quality measurement, sign selection, forest interpolation and
mortality prediction for irregular clinical time series."""

__version__ = "0.1.0"

from .config import PipelineConfig
from .errors import ConfigError, DataError, InvariantError, VitalgridError
from .evaluate import (
    EvalReport,
    KNNClassifier,
    LogisticRegressionGD,
    PipelineResult,
    TrainedPipeline,
    assemble_vectors,
    auc_pr,
    auc_roc,
    binary_metrics,
    run_pipeline,
    train_and_score,
    train_test_split,
)
from .forest import (
    RandomForestClassifier,
    RandomForestRegressor,
    best_split,
    grow_tree,
    load_forest,
    save_forest,
)
from .interpolate import (
    SeriesImputer,
    baseline_fill,
    interpolation_rmse,
    slot_feature,
    window_features,
    zero_fill,
)
from .io import (
    AdmissionFileSchema,
    EventFileSchema,
    read_cohort,
    read_series_matrix,
    write_quality_report,
    write_series_matrix,
)
from .quality import (
    QualityReport,
    correlation_histogram,
    missing_metrics,
    pearson,
    pearson_sign_label,
    select_signs,
)
from .records import (
    AdmissionRecord,
    Cohort,
    EventTable,
    FilledSeriesSet,
    GroundTruth,
    SeriesSet,
    SignEvent,
    SignSeries,
    validate_cohort,
)
from .resample import build_series_set, hourly_grid
from .synth import SynthSpec, generate_cohort

__all__ = [
    "AdmissionFileSchema",
    "AdmissionRecord",
    "Cohort",
    "ConfigError",
    "DataError",
    "EvalReport",
    "EventFileSchema",
    "EventTable",
    "FilledSeriesSet",
    "GroundTruth",
    "InvariantError",
    "KNNClassifier",
    "LogisticRegressionGD",
    "PipelineConfig",
    "PipelineResult",
    "QualityReport",
    "RandomForestClassifier",
    "RandomForestRegressor",
    "SeriesImputer",
    "SeriesSet",
    "SignEvent",
    "SignSeries",
    "SynthSpec",
    "TrainedPipeline",
    "VitalgridError",
    "assemble_vectors",
    "auc_pr",
    "auc_roc",
    "baseline_fill",
    "best_split",
    "binary_metrics",
    "build_series_set",
    "correlation_histogram",
    "generate_cohort",
    "grow_tree",
    "hourly_grid",
    "interpolation_rmse",
    "load_forest",
    "missing_metrics",
    "pearson",
    "pearson_sign_label",
    "read_cohort",
    "read_series_matrix",
    "run_pipeline",
    "save_forest",
    "select_signs",
    "slot_feature",
    "train_and_score",
    "train_test_split",
    "validate_cohort",
    "window_features",
    "write_quality_report",
    "write_series_matrix",
    "zero_fill",
]
