"""Data-quality measurement and two-step sign selection.

Four missing-rate views of a resampled cohort:

* ``sign_patient_missing[i]``  - share of admissions that never recorded sign i
* ``sign_slot_missing[i]``     - share of all hourly slots of sign i left empty
* ``patient_sign_missing[a]``  - share of the considered sign types admission a never recorded
* ``patient_slot_missing[a]``  - share of admission a's sign x hour slots left empty

plus the per-sign Pearson correlation between the admission-level mean of
a sign's observed values and the mortality label (point-biserial form: one
pair per admission that recorded the sign). Correlations are None when
fewer than two pairs exist or either side has zero variance.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DataError
from .records import Cohort, SeriesSet


@dataclass(frozen=True)
class QualityReport:
    sign_ids: tuple[str, ...]
    admission_ids: tuple[str, ...]
    sign_patient_missing: np.ndarray  # (K,)
    sign_slot_missing: np.ndarray  # (K,)
    patient_sign_missing: np.ndarray  # (A,)
    patient_slot_missing: np.ndarray  # (A,)
    pearson: tuple[float | None, ...]  # (K,), None where undefined

    @property
    def n_signs_considered(self) -> int:
        return len(self.sign_ids)

    def pearson_by_sign(self) -> dict[str, float | None]:
        return dict(zip(self.sign_ids, self.pearson))


def missing_metrics(series_set: SeriesSet, cohort: Cohort) -> QualityReport:
    """Compute all four missing-rate metrics plus per-sign correlations."""
    if cohort.n_admissions == 0:
        raise DataError("cannot measure an empty cohort")
    if tuple(series_set.admission_ids) != tuple(a.admission_id for a in cohort.admissions):
        raise DataError("series_set admissions do not match cohort admissions")

    observed = np.isfinite(series_set.values)  # (K, A, H)
    n_signs, n_adm, grid_hours = observed.shape

    sign_has_patient = observed.any(axis=2)  # (K, A)
    sign_patient_missing = 1.0 - sign_has_patient.sum(axis=1) / n_adm
    sign_slot_missing = 1.0 - observed.sum(axis=(1, 2)) / (n_adm * grid_hours)
    patient_sign_missing = 1.0 - sign_has_patient.sum(axis=0) / n_signs
    patient_slot_missing = 1.0 - observed.sum(axis=(0, 2)) / (n_signs * grid_hours)

    labels = cohort.labels()
    pearson = tuple(
        _pearson_from_series(series_set.values[s], observed[s], labels)
        for s in range(n_signs)
    )
    return QualityReport(
        sign_ids=tuple(series_set.sign_ids),
        admission_ids=tuple(series_set.admission_ids),
        sign_patient_missing=sign_patient_missing,
        sign_slot_missing=sign_slot_missing,
        patient_sign_missing=patient_sign_missing,
        patient_slot_missing=patient_slot_missing,
        pearson=pearson,
    )


def _pearson_from_series(grids: np.ndarray, observed: np.ndarray, labels: np.ndarray) -> float | None:
    has = observed.any(axis=1)
    if has.sum() < 2:
        return None
    counts = observed[has].sum(axis=1)
    sums = np.where(observed[has], grids[has], 0.0).sum(axis=1)
    x = sums / counts
    return pearson(x, labels[has].astype(np.float64))


def pearson(x: np.ndarray, y: np.ndarray) -> float | None:
    """Two-pass Pearson coefficient; None when undefined (zero variance or n < 2)."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if len(x) != len(y):
        raise DataError("pearson inputs have different lengths")
    if len(x) < 2:
        return None
    dx = x - x.mean()
    dy = y - y.mean()
    sxx = float(dx @ dx)
    syy = float(dy @ dy)
    if sxx == 0.0 or syy == 0.0:
        return None
    r = float(dx @ dy) / math.sqrt(sxx * syy)
    return max(-1.0, min(1.0, r))


def pearson_sign_label(series_set: SeriesSet, cohort: Cohort, sign_id: str) -> float | None:
    """Correlation between one sign's per-admission mean and the mortality flag."""
    s = series_set.sign_index(sign_id)
    grids = series_set.values[s]
    return _pearson_from_series(grids, np.isfinite(grids), cohort.labels())


def _abs_or_rank_last(r: float | None) -> tuple[int, float]:
    # sort key: defined correlations first (by |r| descending), undefined last
    return (1, 0.0) if r is None else (0, -abs(r))


def select_signs(report: QualityReport, cohort: Cohort, top_by_count: int,
                 top_by_correlation: int) -> tuple[list[str], list[str]]:
    """Two-step selection: highest raw record counts, then largest |pearson|.

    Returns (selected sign ids sorted by |r| descending, findings). Ties
    break lexicographically on sign_id. If fewer than ``top_by_correlation``
    of the frequency-filtered signs have a defined correlation, all defined
    ones are returned and a finding says so.
    """
    catalog = {sid: cnt for sid, cnt in cohort.sign_catalog()}
    considered = list(report.sign_ids)
    if not (1 <= top_by_correlation <= top_by_count):
        raise DataError("need 1 <= top_by_correlation <= top_by_count")
    if top_by_count > len(considered):
        raise DataError(
            f"top_by_count={top_by_count} exceeds the {len(considered)} measured signs"
        )

    by_count = sorted(considered, key=lambda s: (-catalog.get(s, 0), s))[:top_by_count]
    r_of = report.pearson_by_sign()
    ranked = sorted(by_count, key=lambda s: (*_abs_or_rank_last(r_of.get(s)), s))

    defined = [s for s in ranked if r_of.get(s) is not None]
    findings: list[str] = []
    if len(defined) < top_by_correlation:
        findings.append(
            f"only {len(defined)} of {len(by_count)} frequency-filtered signs have a "
            f"defined correlation; requested {top_by_correlation}"
        )
        return defined, findings
    return ranked[:top_by_correlation], findings


def correlation_histogram(report: QualityReport, bin_width: float) -> list[tuple[float, float, int]]:
    """Counts of signs per correlation bin over [-1, 1], plot-ready.

    Bins are left-closed ``[lo, lo + width)`` except the last, which also
    includes 1.0. Undefined correlations are not counted.
    """
    if bin_width <= 0:
        raise DataError("bin_width must be positive")
    n_bins = math.ceil(2.0 / bin_width)
    counts = [0] * n_bins
    for r in report.pearson:
        if r is None:
            continue
        # the 1e-9 nudge keeps values sitting exactly on a bin edge in the
        # bin that edge opens, despite float division error
        j = min(int(math.floor((r + 1.0) / bin_width + 1e-9)), n_bins - 1)
        counts[j] += 1
    return [
        (-1.0 + j * bin_width, min(-1.0 + (j + 1) * bin_width, 1.0), counts[j])
        for j in range(n_bins)
    ]
