"""Vector assembly, train/test split, classifiers and evaluation metrics.

AUC-ROC is the rank statistic (probability a random positive outscores a
random negative, ties counted half), AUC-PR is average precision (stepwise
recall-increment sum with tied scores grouped). Accuracy and F1 use a
fixed 0.5 threshold: score >= 0.5 predicts the positive class.
"""
from __future__ import annotations

import hashlib
import json
import os
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.exceptions import NotFittedError

from .config import PipelineConfig
from .errors import DataError
from .forest import RandomForestClassifier, effective_workers, forest_from_dict, forest_to_dict
from .interpolate import SeriesImputer, baseline_fill
from .quality import QualityReport, missing_metrics, select_signs
from .randomness import DOMAIN_IMPUTER, DOMAIN_SPLIT, DOMAIN_SUBSAMPLE, child_seed, substream
from .records import Cohort, EventTable, FilledSeriesSet, SeriesSet
from .resample import build_series_set
from .validation import as_binary_labels, as_float_matrix, as_float_vector, check_same_length

PIPELINE_FORMAT_VERSION = 1


def assemble_vectors(filled: FilledSeriesSet, labels: np.ndarray | None,
                     sign_order: Sequence[str]) -> np.ndarray:
    """Concatenate each admission's interpolated series in a fixed sign order.

    Returns the (n_admissions, n_signs * H) feature matrix, sign-major: the
    block for ``sign_order[k]`` occupies columns [k*H, (k+1)*H).
    """
    if len(sign_order) == 0:
        raise DataError("sign_order must be nonempty")
    n_adm = len(filled.admission_ids)
    grid_hours = filled.grid_hours
    X = np.empty((n_adm, len(sign_order) * grid_hours))
    for k, sid in enumerate(sign_order):
        try:
            s = filled.sign_ids.index(sid)
        except ValueError:
            raise DataError(f"sign {sid!r} missing from the filled series set") from None
        X[:, k * grid_hours:(k + 1) * grid_hours] = filled.values[s]
    if not np.isfinite(X).all():
        raise DataError("assembled vectors contain non-finite values")
    if labels is not None:
        check_same_length(X, labels, "vectors, labels")
    return X


def train_test_split(labels: np.ndarray, test_fraction: float, seed: int,
                     stratify: bool = True) -> tuple[np.ndarray, np.ndarray]:
    """Deterministic shuffled split on admission indices.

    Stratified mode preserves the class ratio within one instance per class
    (largest-remainder apportionment of the rounded test size).
    """
    labels = as_binary_labels(labels, "labels")
    n = len(labels)
    if not 0.0 < test_fraction < 1.0:
        raise DataError("test_fraction must be in (0, 1)")
    n_test = int(round(n * test_fraction))
    if n_test < 1 or n_test >= n:
        raise DataError(f"test_fraction {test_fraction} leaves an empty side of the split")
    rng = substream(seed, DOMAIN_SPLIT, 0)

    if not stratify:
        perm = rng.permutation(n)
        return np.sort(perm[n_test:]), np.sort(perm[:n_test])

    test_parts: list[np.ndarray] = []
    train_parts: list[np.ndarray] = []
    classes = [0, 1]
    sizes = {}
    exact = {c: (labels == c).sum() * test_fraction for c in classes}
    for c in classes:
        sizes[c] = int(exact[c])
    remainder = n_test - sum(sizes.values())
    # hand out remaining test slots by largest fractional part, class 0 first on ties
    order = sorted(classes, key=lambda c: (-(exact[c] - int(exact[c])), c))
    for c in order[:remainder]:
        sizes[c] += 1
    for c in classes:
        idx = np.flatnonzero(labels == c)
        if len(idx) < 2:
            raise DataError(f"need at least 2 instances of class {c} for a stratified split")
        take = sizes[c]
        if take == 0 or take == len(idx):
            raise DataError(f"class {c} would be absent from one side of the split")
        perm = idx[rng.permutation(len(idx))]
        test_parts.append(perm[:take])
        train_parts.append(perm[take:])
    return np.sort(np.concatenate(train_parts)), np.sort(np.concatenate(test_parts))


def split_digest(test_ids: Sequence[str]) -> str:
    """Stable fingerprint of a test-set membership, for paired-design checks."""
    joined = "\n".join(sorted(str(t) for t in test_ids))
    return hashlib.sha256(joined.encode("utf-8")).hexdigest()[:16]


# --- metrics -----------------------------------------------------------------

def _midranks(x: np.ndarray) -> np.ndarray:
    order = np.argsort(x, kind="stable")
    ranks = np.empty(len(x))
    xs = x[order]
    i = 0
    while i < len(xs):
        j = i
        while j + 1 < len(xs) and xs[j + 1] == xs[i]:
            j += 1
        ranks[order[i:j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    return ranks


def auc_roc(scores: np.ndarray, labels: np.ndarray) -> float | None:
    """Rank-statistic AUC: share of (pos, neg) pairs ranked correctly, ties at 0.5."""
    scores = as_float_vector(scores, "scores")
    labels = as_binary_labels(labels, "labels")
    check_same_length(scores, labels, "scores, labels")
    n_pos = int(labels.sum())
    n_neg = len(labels) - n_pos
    if n_pos == 0 or n_neg == 0:
        return None
    ranks = _midranks(scores)
    u = ranks[labels == 1].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def auc_pr(scores: np.ndarray, labels: np.ndarray) -> float | None:
    """Average precision: sum of precision x recall-increment over descending
    score thresholds, tied scores grouped into one step."""
    scores = as_float_vector(scores, "scores")
    labels = as_binary_labels(labels, "labels")
    check_same_length(scores, labels, "scores, labels")
    n_pos = int(labels.sum())
    if n_pos == 0 or n_pos == len(labels):
        return None
    order = np.argsort(-scores, kind="stable")
    s_sorted = scores[order]
    y_sorted = labels[order]
    tp = fp = 0
    ap = 0.0
    i = 0
    n = len(s_sorted)
    while i < n:
        j = i
        while j + 1 < n and s_sorted[j + 1] == s_sorted[i]:
            j += 1
        tp_new = int(y_sorted[i:j + 1].sum())
        fp_new = (j - i + 1) - tp_new
        tp += tp_new
        fp += fp_new
        if tp_new:
            precision = tp / (tp + fp)
            ap += precision * (tp_new / n_pos)
        i = j + 1
    return float(ap)


@dataclass(frozen=True)
class EvalReport:
    """Test-set evaluation summary; AUCs are None when only one class is present."""

    accuracy: float
    f1: float
    auc_roc: float | None
    auc_pr: float | None
    tp: int
    fp: int
    tn: int
    fn: int
    n_train: int
    n_test: int
    seed: int
    split_digest: str
    method: str = ""
    config_snapshot: str = ""  # compact JSON of the run's PipelineConfig

    def to_dict(self) -> dict:
        return {
            "method": self.method,
            "accuracy": self.accuracy,
            "f1": self.f1,
            "auc_roc": self.auc_roc,
            "auc_pr": self.auc_pr,
            "tp": self.tp, "fp": self.fp, "tn": self.tn, "fn": self.fn,
            "n_train": self.n_train, "n_test": self.n_test,
            "seed": self.seed, "split_digest": self.split_digest,
            "config_snapshot": self.config_snapshot,
        }


def _config_snapshot(config: PipelineConfig) -> str:
    d = config.to_dict()
    d.pop("workers", None)  # execution detail, kept out of data outputs
    return json.dumps(d, sort_keys=True)


def binary_metrics(scores, labels, threshold: float = 0.5, *, n_train: int = 0,
                   seed: int = 0, digest: str = "", method: str = "",
                   config_snapshot: str = "") -> EvalReport:
    scores = as_float_vector(scores, "scores")
    labels = as_binary_labels(labels, "labels")
    check_same_length(scores, labels, "scores, labels")
    if len(labels) == 0:
        raise DataError("cannot score an empty test set")
    pred = scores >= threshold
    pos = labels == 1
    tp = int((pred & pos).sum())
    fp = int((pred & ~pos).sum())
    fn = int((~pred & pos).sum())
    tn = int((~pred & ~pos).sum())
    accuracy = (tp + tn) / len(labels)
    f1 = 2 * tp / (2 * tp + fp + fn) if (2 * tp + fp + fn) > 0 else 0.0
    return EvalReport(
        accuracy=float(accuracy), f1=float(f1),
        auc_roc=auc_roc(scores, labels), auc_pr=auc_pr(scores, labels),
        tp=tp, fp=fp, tn=tn, fn=fn,
        n_train=n_train, n_test=len(labels), seed=seed,
        split_digest=digest, method=method, config_snapshot=config_snapshot,
    )


# --- plug-in baseline classifiers --------------------------------------------

class KNNClassifier(BaseEstimator, ClassifierMixin):
    """Euclidean k-nearest-neighbours baseline; score = positive share among neighbours."""

    def __init__(self, k=5):
        self.k = k

    def fit(self, X, y):
        self.X_ = as_float_matrix(X)
        self.y_ = as_binary_labels(y).astype(np.float64)
        check_same_length(self.X_, self.y_)
        self.n_features_in_ = self.X_.shape[1]
        return self

    def predict_proba(self, X):
        if not hasattr(self, "X_"):
            raise NotFittedError("KNNClassifier is not fitted")
        X = as_float_matrix(X)
        k = min(self.k, len(self.y_))
        train_sq = (self.X_ * self.X_).sum(axis=1)
        p1 = np.empty(len(X))
        chunk = max(1, int(2e7) // max(1, len(self.y_)))
        for start in range(0, len(X), chunk):
            block = X[start:start + chunk]
            d2 = (block * block).sum(axis=1)[:, None] - 2.0 * block @ self.X_.T + train_sq[None, :]
            nearest = np.argpartition(d2, k - 1, axis=1)[:, :k]
            p1[start:start + len(block)] = self.y_[nearest].mean(axis=1)
        return np.column_stack([1.0 - p1, p1])

    def predict(self, X):
        return (self.predict_proba(X)[:, 1] >= 0.5).astype(np.int64)


class LogisticRegressionGD(BaseEstimator, ClassifierMixin):
    """Gradient-descent logistic regression baseline on standardized features."""

    def __init__(self, learning_rate=0.1, n_iter=300, l2=1e-4, seed=0):
        self.learning_rate = learning_rate
        self.n_iter = n_iter
        self.l2 = l2
        self.seed = seed

    def fit(self, X, y):
        X = as_float_matrix(X)
        y = as_binary_labels(y).astype(np.float64)
        check_same_length(X, y)
        self.mu_ = X.mean(axis=0)
        self.sigma_ = X.std(axis=0)
        self.sigma_[self.sigma_ == 0.0] = 1.0
        Z = (X - self.mu_) / self.sigma_
        w = np.zeros(Z.shape[1])
        b = 0.0
        n = len(y)
        for _ in range(self.n_iter):
            p = 1.0 / (1.0 + np.exp(-(Z @ w + b)))
            err = p - y
            w -= self.learning_rate * (Z.T @ err / n + self.l2 * w)
            b -= self.learning_rate * float(err.mean())
        self.w_, self.b_ = w, b
        self.n_features_in_ = X.shape[1]
        return self

    def predict_proba(self, X):
        if not hasattr(self, "w_"):
            raise NotFittedError("LogisticRegressionGD is not fitted")
        X = as_float_matrix(X)
        Z = (X - self.mu_) / self.sigma_
        p1 = 1.0 / (1.0 + np.exp(-(Z @ self.w_ + self.b_)))
        return np.column_stack([1.0 - p1, p1])

    def predict(self, X):
        return (self.predict_proba(X)[:, 1] >= 0.5).astype(np.int64)


def make_classifier(config: PipelineConfig):
    if config.classifier == "random_forest":
        return RandomForestClassifier(
            n_trees=config.n_trees, max_depth=config.max_depth, min_leaf=config.min_leaf,
            max_features=config.mtry_rule, seed=config.seed, workers=config.workers,
        )
    if config.classifier == "knn":
        return KNNClassifier(k=5)
    return LogisticRegressionGD(seed=config.seed)


def train_and_score(train_x, train_y, test_x, classifier) -> tuple[object, np.ndarray]:
    """Fit the classifier and return it with class-1 scores for the test block."""
    train_y = as_binary_labels(train_y)
    if len(np.unique(train_y)) < 2:
        raise DataError("training set contains a single class")
    classifier.fit(train_x, train_y)
    return classifier, classifier.predict_proba(test_x)[:, 1]


# --- end-to-end pipeline ------------------------------------------------------

@dataclass
class TrainedPipeline:
    """Everything needed to score new admissions: selected signs, per-sign
    imputers, the fitted classifier, and the config snapshot."""

    config: PipelineConfig
    sign_order: list[str]
    imputers: dict[str, SeriesImputer]
    classifier: object
    split_digest: str = ""

    def fill_features(self, series: SeriesSet) -> np.ndarray:
        grid_hours = series.grid_hours
        X = np.empty((len(series.admission_ids), len(self.sign_order) * grid_hours))
        for k, sid in enumerate(self.sign_order):
            filled, _ = self.imputers[sid].transform(series.sign_matrix(sid))
            X[:, k * grid_hours:(k + 1) * grid_hours] = filled
        return X

    def predict_scores(self, cohort: Cohort) -> tuple[list[str], np.ndarray]:
        series = build_series_set(cohort, self.sign_order, self.config.grid_hours)
        X = self.fill_features(series)
        scores = self.classifier.predict_proba(X)[:, 1]
        return list(series.admission_ids), scores

    def save(self, out_dir) -> None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "imputers").mkdir(exist_ok=True)
        # worker count is an execution detail, not part of the model
        config_snapshot = self.config.to_dict()
        config_snapshot.pop("workers", None)
        manifest = {
            "format": "vitalgrid-pipeline",
            "version": PIPELINE_FORMAT_VERSION,
            "config": config_snapshot,
            "sign_order": self.sign_order,
            "split_digest": self.split_digest,
            "imputer_files": {sid: f"imputers/imputer_{k:03d}.json"
                              for k, sid in enumerate(self.sign_order)},
        }
        with open(out / "pipeline.json", "w", encoding="utf-8") as fh:
            json.dump(manifest, fh, sort_keys=True, indent=2)
        with open(out / "classifier.json", "w", encoding="utf-8") as fh:
            json.dump(forest_to_dict(self.classifier), fh, sort_keys=True)
        for sid, rel in manifest["imputer_files"].items():
            with open(out / rel, "w", encoding="utf-8") as fh:
                json.dump(self.imputers[sid].to_dict(), fh, sort_keys=True)

    @classmethod
    def load(cls, in_dir) -> "TrainedPipeline":
        root = Path(in_dir)
        try:
            with open(root / "pipeline.json", "r", encoding="utf-8") as fh:
                manifest = json.load(fh)
        except FileNotFoundError as exc:
            raise DataError(f"no pipeline manifest under {root}") from exc
        if manifest.get("format") != "vitalgrid-pipeline":
            raise DataError("not a serialized pipeline directory")
        if manifest.get("version") != PIPELINE_FORMAT_VERSION:
            raise DataError(f"unsupported pipeline version {manifest.get('version')!r}")
        config = PipelineConfig.from_dict(manifest["config"])
        with open(root / "classifier.json", "r", encoding="utf-8") as fh:
            classifier = forest_from_dict(json.load(fh))
        imputers = {}
        for sid, rel in manifest["imputer_files"].items():
            with open(root / rel, "r", encoding="utf-8") as fh:
                imputers[sid] = SeriesImputer.from_dict(json.load(fh))
        return cls(
            config=config,
            sign_order=list(manifest["sign_order"]),
            imputers=imputers,
            classifier=classifier,
            split_digest=manifest.get("split_digest", ""),
        )


@dataclass
class PipelineResult:
    pipeline: TrainedPipeline
    report_baseline: EvalReport
    report_forest: EvalReport
    quality: QualityReport
    selection_findings: list[str]
    timings: dict[str, float] = field(default_factory=dict)


def _make_imputer(config: PipelineConfig, sign_position: int, workers) -> SeriesImputer:
    return SeriesImputer(
        window=config.window, n_trees=config.interp_trees,
        max_depth=config.interp_depth, min_leaf=config.interp_min_leaf,
        sample_cap=config.interp_sample_cap, variation=config.variation,
        seed=child_seed(config.seed, DOMAIN_IMPUTER, sign_position), workers=workers,
    )


# Fork-shared state for the sign-parallel imputer stage.
_IMPUTE_CONTEXT: dict = {}


def _impute_one_sign(k: int):
    config: PipelineConfig = _IMPUTE_CONTEXT["config"]
    matrix = _IMPUTE_CONTEXT["series"].values[k]
    imp = _make_imputer(config, k, workers=None)
    filled, _ = imp.fit_transform(matrix)
    return k, filled, imp


def _fit_fill_all_signs(series_sel: SeriesSet, config: PipelineConfig):
    """Fit one imputer per sign and fill its grids; parallel across signs.

    Results are assembled by sign position, so output is independent of
    worker scheduling.
    """
    n_signs = len(series_sel.sign_ids)
    workers = min(effective_workers(config.workers), n_signs)
    if workers > 1 and n_signs > 1 and hasattr(os, "fork"):
        import multiprocessing as mp

        _IMPUTE_CONTEXT.update(series=series_sel, config=config)
        try:
            ctx = mp.get_context("fork")
            with ctx.Pool(processes=workers) as pool:
                results = pool.map(_impute_one_sign, range(n_signs), chunksize=1)
        finally:
            _IMPUTE_CONTEXT.clear()
    else:
        results = []
        for k in range(n_signs):
            imp = _make_imputer(config, k, config.workers)
            filled, _ = imp.fit_transform(series_sel.values[k])
            results.append((k, filled, imp))
    results.sort(key=lambda r: r[0])
    return results


def _limit_admissions(cohort: Cohort, limit: int | None, seed: int) -> Cohort:
    if limit is None or cohort.n_admissions <= limit:
        return cohort
    rng = substream(seed, DOMAIN_SUBSAMPLE, 1)
    keep_rows = np.sort(rng.choice(cohort.n_admissions, size=limit, replace=False))
    admissions = tuple(cohort.admissions[i] for i in keep_rows)
    keep_ids = {a.admission_id for a in admissions}
    ev = cohort.events
    keep_codes = np.array([aid in keep_ids for aid in ev.admission_ids], dtype=bool)
    mask = keep_codes[ev.admission_code]
    events = EventTable.from_columns(
        ev.admission_id_column()[mask], ev.sign_id_column()[mask],
        ev.charttime[mask], ev.value[mask],
    )
    return Cohort(admissions=admissions, events=events)


def run_pipeline(config: PipelineConfig, cohort: Cohort) -> PipelineResult:
    """Resample, measure, select, interpolate both ways, train and evaluate.

    The baseline-interpolation and forest-interpolation branches share the
    same admissions, split and classifier settings so their reports form a
    paired comparison.
    """
    config.validate()
    timings: dict[str, float] = {}
    t0 = time.perf_counter()

    cohort = _limit_admissions(cohort, config.sample_limit, config.seed)
    catalog = cohort.sign_catalog()
    if not catalog:
        raise DataError("cohort has no sign events")
    k_freq = min(config.top_by_count, len(catalog))
    k_corr = min(config.top_by_correlation, k_freq)
    freq_signs = [sid for sid, _ in catalog[:k_freq]]

    series = build_series_set(cohort, freq_signs, config.grid_hours)
    timings["resample_s"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    report = missing_metrics(series, cohort)
    selected, findings = select_signs(report, cohort, k_freq, k_corr)
    if not selected:
        raise DataError("sign selection kept no signs (no defined correlations)")
    timings["quality_s"] = time.perf_counter() - t0

    series_sel = series.subset_signs(selected)
    labels = cohort.labels()
    train_idx, test_idx = train_test_split(
        labels, config.test_fraction, config.seed, config.stratify
    )
    digest = split_digest([series_sel.admission_ids[i] for i in test_idx])

    grid_hours = config.grid_hours
    n_adm = cohort.n_admissions

    def evaluate_branch(fill_one_sign, method: str) -> tuple[EvalReport, object]:
        X = np.empty((n_adm, len(selected) * grid_hours))
        for k, sid in enumerate(selected):
            filled, _ = fill_one_sign(sid)
            X[:, k * grid_hours:(k + 1) * grid_hours] = filled
        if not np.isfinite(X).all():
            raise DataError("interpolated features contain non-finite values")
        clf = make_classifier(config)
        t_fit = time.perf_counter()
        clf, scores = train_and_score(X[train_idx], labels[train_idx], X[test_idx], clf)
        timings[f"classifier_fit_{method}_s"] = time.perf_counter() - t_fit
        rep = binary_metrics(
            scores, labels[test_idx], n_train=len(train_idx), seed=config.seed,
            digest=digest, method=method, config_snapshot=_config_snapshot(config),
        )
        return rep, clf

    t0 = time.perf_counter()
    report_baseline, _ = evaluate_branch(
        lambda sid: baseline_fill(series_sel.sign_matrix(sid)), "baseline_interpolation"
    )
    timings["baseline_branch_s"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    fills = _fit_fill_all_signs(series_sel, config)
    imputers = {selected[k]: imp for k, _, imp in fills}
    filled_by_sign = {selected[k]: filled for k, filled, _ in fills}
    timings["imputer_fit_s"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    report_forest, classifier = evaluate_branch(
        lambda sid: (filled_by_sign.pop(sid), None), "forest_interpolation"
    )
    timings["forest_branch_s"] = time.perf_counter() - t0
    timings["classifier_fit_s"] = timings["classifier_fit_forest_interpolation_s"]

    pipeline = TrainedPipeline(
        config=config, sign_order=list(selected), imputers=imputers,
        classifier=classifier, split_digest=digest,
    )
    return PipelineResult(
        pipeline=pipeline,
        report_baseline=report_baseline,
        report_forest=report_forest,
        quality=report,
        selection_findings=findings,
        timings=timings,
    )
