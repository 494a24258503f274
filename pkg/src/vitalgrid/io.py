"""CSV ingestion and report/artifact writing.

Readers skip-and-count unusable rows rather than aborting (clinical
extracts are dirty); writers use a stable row order and shortest
round-trip float formatting so identical inputs produce byte-identical
files.

Timestamps are minute-precision, parsed with a configurable format
(default the ``YYYY-MM-DD HH:MM:SS`` convention of EHR chart extracts) and
held internally as integer minutes since 1970-01-01.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
import pandas as pd

from .errors import DataError
from .quality import QualityReport
from .records import AdmissionRecord, Cohort, EventTable, GroundTruth, SeriesSet

DEFAULT_TIME_FORMAT = "%Y-%m-%d %H:%M:%S"
_EPOCH = pd.Timestamp("1970-01-01")


@dataclass(frozen=True)
class EventFileSchema:
    """Column mapping for an event extract."""

    admission_col: str = "admission_id"
    sign_col: str = "sign_id"
    time_col: str = "charttime"
    value_col: str = "value"
    delimiter: str = ","
    time_format: str = DEFAULT_TIME_FORMAT

    def __post_init__(self) -> None:
        cols = (self.admission_col, self.sign_col, self.time_col, self.value_col)
        if len(set(cols)) != 4:
            raise DataError(f"event schema columns must be distinct, got {cols}")

    @property
    def columns(self) -> tuple[str, ...]:
        return (self.admission_col, self.sign_col, self.time_col, self.value_col)


@dataclass(frozen=True)
class AdmissionFileSchema:
    """Column mapping for an admissions extract."""

    admission_col: str = "admission_id"
    discharge_col: str = "discharge_time"
    expire_col: str = "expire_flag"
    delimiter: str = ","
    time_format: str = DEFAULT_TIME_FORMAT

    def __post_init__(self) -> None:
        cols = (self.admission_col, self.discharge_col, self.expire_col)
        if len(set(cols)) != 3:
            raise DataError(f"admission schema columns must be distinct, got {cols}")

    @property
    def columns(self) -> tuple[str, ...]:
        return (self.admission_col, self.discharge_col, self.expire_col)


@dataclass
class IngestStats:
    """Row accounting from read_cohort, reported alongside the Cohort."""

    events_read: int = 0
    events_kept: int = 0
    events_skipped_unparseable: int = 0
    events_skipped_orphan: int = 0
    admissions_read: int = 0
    admissions_kept: int = 0
    admissions_skipped: int = 0


def parse_timestamp(text: str, fmt: str = DEFAULT_TIME_FORMAT) -> int:
    """One timestamp string -> integer minutes since 1970-01-01."""
    ts = pd.Timestamp(pd.to_datetime(text, format=fmt))
    return int((ts - _EPOCH).total_seconds() // 60)


def format_timestamp(minutes: int, fmt: str = DEFAULT_TIME_FORMAT) -> str:
    return (_EPOCH + pd.Timedelta(minutes=int(minutes))).strftime(fmt)


def _minutes_since_epoch(series: pd.Series, fmt: str) -> pd.Series:
    parsed = pd.to_datetime(series, format=fmt, errors="coerce")
    minutes = (parsed - _EPOCH) // pd.Timedelta(minutes=1)
    return minutes


def _require_columns(df: pd.DataFrame, cols: Sequence[str], path) -> None:
    missing = [c for c in cols if c not in df.columns]
    if missing:
        raise DataError(f"{path}: missing column(s) {missing}; found {list(df.columns)}")


def read_cohort(events_path, admissions_path,
                event_schema: EventFileSchema | None = None,
                admission_schema: AdmissionFileSchema | None = None,
                require_labels: bool = True) -> tuple[Cohort, IngestStats]:
    """Read a cohort from two CSV extracts.

    Unparseable rows (bad timestamp, empty/non-finite value, missing id) and
    events referencing unknown admissions are counted and skipped. With
    ``require_labels=False`` a missing expire-flag column defaults to 0,
    for scoring admissions whose outcome is unknown.
    """
    es = event_schema or EventFileSchema()
    ams = admission_schema or AdmissionFileSchema()
    stats = IngestStats()

    apath, epath = Path(admissions_path), Path(events_path)
    for p in (apath, epath):
        if not p.exists():
            raise DataError(f"input file not found: {p}")

    adf = pd.read_csv(apath, sep=ams.delimiter, dtype=str, keep_default_na=False)
    need = [ams.admission_col, ams.discharge_col]
    if require_labels:
        need.append(ams.expire_col)
    _require_columns(adf, need, apath)
    stats.admissions_read = len(adf)

    discharge = _minutes_since_epoch(adf[ams.discharge_col], ams.time_format)
    if require_labels or ams.expire_col in adf.columns:
        flags = pd.to_numeric(adf[ams.expire_col], errors="coerce")
    else:
        flags = pd.Series(np.zeros(len(adf)))
    aid = adf[ams.admission_col].astype(str)
    ok = discharge.notna() & flags.isin((0, 1)) & (aid.str.len() > 0)
    first = ~aid.duplicated(keep="first")
    keep = ok & first
    stats.admissions_skipped = int((~keep).sum())
    stats.admissions_kept = int(keep.sum())
    if stats.admissions_kept == 0:
        raise DataError(f"{apath}: no parseable admissions")
    admissions = tuple(
        AdmissionRecord(str(a), int(d), int(f))
        for a, d, f in zip(aid[keep], discharge[keep], flags[keep])
    )

    edf = pd.read_csv(epath, sep=es.delimiter, dtype=str, keep_default_na=False)
    _require_columns(edf, es.columns, epath)
    stats.events_read = len(edf)

    times = _minutes_since_epoch(edf[es.time_col], es.time_format)
    values = pd.to_numeric(edf[es.value_col], errors="coerce")
    e_aid = edf[es.admission_col].astype(str)
    e_sid = edf[es.sign_col].astype(str)
    parseable = (
        times.notna() & values.notna() & np.isfinite(values.to_numpy(dtype=np.float64, na_value=np.nan))
        & (e_aid.str.len() > 0) & (e_sid.str.len() > 0)
    )
    stats.events_skipped_unparseable = int((~parseable).sum())

    known = {a.admission_id for a in admissions}
    resident = e_aid.isin(known)
    stats.events_skipped_orphan = int((parseable & ~resident).sum())
    keep_ev = parseable & resident
    stats.events_kept = int(keep_ev.sum())

    # numpy's parser is correctly rounded; pandas' fast path can be an ulp off
    exact_values = edf.loc[keep_ev, es.value_col].to_numpy(dtype=np.float64)
    events = EventTable.from_columns(
        e_aid[keep_ev].to_numpy(dtype=object),
        e_sid[keep_ev].to_numpy(dtype=object),
        times[keep_ev].to_numpy(dtype=np.int64),
        exact_values,
    )
    return Cohort(admissions=admissions, events=events), stats


def write_admissions_csv(admissions: Sequence[AdmissionRecord], path,
                         schema: AdmissionFileSchema | None = None) -> None:
    s = schema or AdmissionFileSchema()
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, delimiter=s.delimiter, lineterminator="\n")
        w.writerow(s.columns)
        for a in admissions:
            w.writerow([a.admission_id, format_timestamp(a.discharge_time, s.time_format), a.expire_flag])


def write_events_csv(events: EventTable, path, schema: EventFileSchema | None = None) -> None:
    s = schema or EventFileSchema()
    if s.time_format == DEFAULT_TIME_FORMAT:
        # column-wise formatting keeps multi-million-row writes fast
        t = np.asarray(events.charttime, dtype="datetime64[m]").astype("datetime64[s]")
        tstr = np.datetime_as_string(t, unit="s")
        tstr = np.char.replace(tstr, "T", " ")
    else:
        idx = pd.to_datetime(np.asarray(events.charttime, dtype="datetime64[m]"))
        tstr = idx.strftime(s.time_format).to_numpy(dtype=object)
    # pandas' float formatter drops sub-ulp digits; repr round-trips exactly
    values = np.array([repr(v) for v in events.value.tolist()], dtype=object)
    df = pd.DataFrame({
        s.admission_col: events.admission_id_column(),
        s.sign_col: events.sign_id_column(),
        s.time_col: tstr,
        s.value_col: values,
    })
    df.to_csv(path, sep=s.delimiter, index=False, lineterminator="\n")


def _fmt(v: float) -> str:
    """Shortest decimal that round-trips; empty string for missing."""
    if v is None or (isinstance(v, float) and math.isnan(v)):
        return ""
    return repr(float(v))


def write_series_matrix(series: SeriesSet | Iterable, path) -> None:
    """CSV with header admission_id,sign_id,t0..t{H-1}; rows sorted by
    (admission_id, sign_id); missing slots are empty cells."""
    if isinstance(series, SeriesSet):
        sset = series
        rows = [
            (aid, sid, sset.values[s, a])
            for a, aid in enumerate(sset.admission_ids)
            for s, sid in enumerate(sset.sign_ids)
        ]
        grid_hours = sset.grid_hours
    else:
        items = list(series)
        hs = {len(x.values) for x in items}
        if len(hs) > 1:
            raise DataError(f"series have mixed grid lengths: {sorted(hs)}")
        grid_hours = hs.pop() if hs else 0
        rows = [(x.admission_id, x.sign_id, x.values) for x in items]
    rows.sort(key=lambda r: (r[0], r[1]))
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["admission_id", "sign_id"] + [f"t{i}" for i in range(grid_hours)])
        for aid, sid, vals in rows:
            w.writerow([aid, sid] + [_fmt(v) for v in vals])


def read_series_matrix(path) -> SeriesSet:
    """Read a series-matrix CSV back; grid ends are unknown (None)."""
    p = Path(path)
    if not p.exists():
        raise DataError(f"input file not found: {p}")
    df = pd.read_csv(p, dtype={"admission_id": str, "sign_id": str},
                     float_precision="round_trip")
    _require_columns(df, ["admission_id", "sign_id"], p)
    tcols = [c for c in df.columns if c.startswith("t") and c[1:].isdigit()]
    tcols.sort(key=lambda c: int(c[1:]))
    adm_ids = list(dict.fromkeys(df["admission_id"]))
    sign_ids = sorted(set(df["sign_id"]))
    a_row = {a: i for i, a in enumerate(adm_ids)}
    s_row = {s: i for i, s in enumerate(sign_ids)}
    values = np.full((len(sign_ids), len(adm_ids), len(tcols)), np.nan)
    block = df[tcols].to_numpy(dtype=np.float64)
    for i in range(len(df)):
        values[s_row[df["sign_id"].iat[i]], a_row[df["admission_id"].iat[i]]] = block[i]
    return SeriesSet(tuple(sign_ids), tuple(adm_ids), values, None)


def write_provenance_matrix(filled, path) -> None:
    """Companion to write_series_matrix: per-slot provenance labels."""
    from .records import PROVENANCE_LABELS

    rows = [
        (aid, sid, filled.provenance[s, a])
        for a, aid in enumerate(filled.admission_ids)
        for s, sid in enumerate(filled.sign_ids)
    ]
    rows.sort(key=lambda r: (r[0], r[1]))
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["admission_id", "sign_id"] + [f"t{i}" for i in range(filled.grid_hours)])
        for aid, sid, prov in rows:
            w.writerow([aid, sid] + [PROVENANCE_LABELS[p] for p in prov])


QUALITY_FILES = {
    "sign_patient_missing": "missing_sign_patient.csv",
    "sign_slot_missing": "missing_sign_record.csv",
    "patient_sign_missing": "missing_patient_sign.csv",
    "patient_slot_missing": "missing_patient_record.csv",
    "pearson": "sign_label_correlation.csv",
}


def write_quality_report(report: QualityReport, out_dir) -> None:
    """Five plot-ready CSVs: the four missing-rate metrics plus per-sign
    correlations sorted by |r| descending (undefined last, empty cell)."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    def write_pairs(name, ids, rates):
        with open(out / QUALITY_FILES[name], "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            key = "sign_id" if name.startswith("sign") else "admission_id"
            w.writerow([key, "missing_rate"])
            for i, r in zip(ids, rates):
                w.writerow([i, _fmt(float(r))])

    write_pairs("sign_patient_missing", report.sign_ids, report.sign_patient_missing)
    write_pairs("sign_slot_missing", report.sign_ids, report.sign_slot_missing)
    write_pairs("patient_sign_missing", report.admission_ids, report.patient_sign_missing)
    write_pairs("patient_slot_missing", report.admission_ids, report.patient_slot_missing)

    ranked = sorted(
        zip(report.sign_ids, report.pearson),
        key=lambda t: ((1, 0.0) if t[1] is None else (0, -abs(t[1])), t[0]),
    )
    with open(out / QUALITY_FILES["pearson"], "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["sign_id", "pearson_r"])
        for sid, r in ranked:
            w.writerow([sid, "" if r is None else _fmt(r)])


def write_histogram(rows: Sequence[tuple[float, float, int]], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["bin_low", "bin_high", "count"])
        for lo, hi, c in rows:
            w.writerow([_fmt(lo), _fmt(hi), c])


def write_eval_report(report, csv_path) -> None:
    d = report.to_dict()
    with open(csv_path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(list(d.keys()))
        w.writerow(["" if v is None else (_fmt(v) if isinstance(v, float) else v) for v in d.values()])


def write_eval_summary(reports: Sequence, path) -> None:
    """Human-readable side-by-side summary of evaluation reports."""
    lines = []
    for rep in reports:
        lines.append(f"[{rep.method}]")
        lines.append(f"  n_train={rep.n_train} n_test={rep.n_test} split={rep.split_digest}")
        lines.append(
            "  accuracy={:.4f} f1={:.4f} auc_roc={} auc_pr={}".format(
                rep.accuracy, rep.f1,
                "n/a" if rep.auc_roc is None else f"{rep.auc_roc:.4f}",
                "n/a" if rep.auc_pr is None else f"{rep.auc_pr:.4f}",
            )
        )
        lines.append(f"  confusion: tp={rep.tp} fp={rep.fp} tn={rep.tn} fn={rep.fn}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def write_ground_truth(truth: GroundTruth, out_dir) -> None:
    """Series-matrix CSV of the unmasked values plus a sign table flagging
    which signs carry signal."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_series_matrix(truth.as_series_set(), out / "truth_series.csv")
    informative = set(truth.informative_signs)
    with open(out / "truth_signs.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["sign_id", "informative"])
        for sid in truth.sign_ids:
            w.writerow([sid, int(sid in informative)])
