import numpy as np
import pytest

from vitalgrid.errors import DataError
from vitalgrid.io import (
    AdmissionFileSchema,
    EventFileSchema,
    format_timestamp,
    parse_timestamp,
    read_cohort,
    read_series_matrix,
    write_admissions_csv,
    write_events_csv,
    write_quality_report,
    write_series_matrix,
)
from vitalgrid.quality import missing_metrics
from vitalgrid.records import SeriesSet, SignSeries
from vitalgrid.synth import SynthSpec, generate_cohort

def test_timestamp_round_trip():
    assert parse_timestamp("1970-01-01 00:01:00") == 1
    text = "2101-07-14 09:27:00"
    assert format_timestamp(parse_timestamp(text)) == text


def test_schema_distinct_columns_enforced():
    with pytest.raises(DataError):
        EventFileSchema(admission_col="x", sign_col="x")
    with pytest.raises(DataError):
        AdmissionFileSchema(admission_col="x", discharge_col="x")


def _write_basic_inputs(tmp_path, events_rows, admissions_rows):
    ev = tmp_path / "events.csv"
    adm = tmp_path / "admissions.csv"
    ev.write_text("admission_id,sign_id,charttime,value\n" + "\n".join(events_rows) + "\n")
    adm.write_text("admission_id,discharge_time,expire_flag\n" + "\n".join(admissions_rows) + "\n")
    return ev, adm


def test_read_cohort_basic(tmp_path):
    ev, adm = _write_basic_inputs(
        tmp_path,
        [
            "a,hr,2101-01-01 10:15:00,4.0",
            "a,hr,2101-01-01 10:45:00,6.0",
            "a,bp,2101-01-01 09:59:00,80",
        ],
        ["a,2101-01-01 11:00:00,0"],
    )
    cohort, stats = read_cohort(ev, adm)
    assert cohort.n_admissions == 1
    assert len(cohort.events) == 3
    assert stats.events_kept == 3 and stats.events_skipped_unparseable == 0
    assert cohort.admissions[0].expire_flag == 0


def test_read_cohort_skips_and_counts(tmp_path):
    ev, adm = _write_basic_inputs(
        tmp_path,
        [
            "a,hr,2101-01-01 10:15:00,4.0",
            "a,hr,2101-01-01 10:45:00,",  # empty value cell
            "a,hr,not-a-date,5.0",  # bad timestamp
            "a,hr,2101-01-01 10:50:00,inf",  # non-finite
            "ghost,hr,2101-01-01 10:55:00,1.0",  # orphan admission
        ],
        ["a,2101-01-01 11:00:00,0", "b,bad-date,1", "c,2101-01-01 12:00:00,7"],
    )
    cohort, stats = read_cohort(ev, adm)
    assert stats.events_kept == 1
    assert stats.events_skipped_unparseable == 3
    assert stats.events_skipped_orphan == 1
    assert stats.admissions_kept == 1  # b: bad date, c: flag outside {0,1}
    assert stats.admissions_skipped == 2


def test_read_cohort_errors(tmp_path):
    ev, adm = _write_basic_inputs(tmp_path, ["a,hr,2101-01-01 10:15:00,4.0"],
                                  ["a,bad,0"])
    with pytest.raises(DataError):
        read_cohort(ev, adm)  # zero parseable admissions
    with pytest.raises(DataError):
        read_cohort(tmp_path / "missing.csv", adm)
    bad_adm = tmp_path / "noflag.csv"
    bad_adm.write_text("admission_id,discharge_time\na,2101-01-01 11:00:00\n")
    with pytest.raises(DataError):
        read_cohort(ev, bad_adm)  # expire column required by default
    cohort, _ = read_cohort(ev, bad_adm, require_labels=False)
    assert cohort.admissions[0].expire_flag == 0


def test_cohort_round_trip(tmp_path):
    cohort, _ = generate_cohort(SynthSpec(n_admissions=15, n_signs=3, grid_hours=8,
                                          obs_rate=0.7, seed=3))
    write_events_csv(cohort.events, tmp_path / "e.csv")
    write_admissions_csv(cohort.admissions, tmp_path / "a.csv")
    back, stats = read_cohort(tmp_path / "e.csv", tmp_path / "a.csv")
    assert stats.events_skipped_unparseable == 0
    assert back == cohort


def test_output_bytes_stable(tmp_path):
    cohort, truth = generate_cohort(SynthSpec(n_admissions=10, n_signs=2, grid_hours=6,
                                              obs_rate=0.5, seed=9))
    for name in ("x1.csv", "x2.csv"):
        write_events_csv(cohort.events, tmp_path / name)
    assert (tmp_path / "x1.csv").read_bytes() == (tmp_path / "x2.csv").read_bytes()

    ss = truth.as_series_set()
    for name in ("m1.csv", "m2.csv"):
        write_series_matrix(ss, tmp_path / name)
    assert (tmp_path / "m1.csv").read_bytes() == (tmp_path / "m2.csv").read_bytes()


def test_series_matrix_format(tmp_path):
    s = SignSeries("a", "s", np.array([1.0, np.nan, 2.0]), 180)
    write_series_matrix([s], tmp_path / "m.csv")
    lines = (tmp_path / "m.csv").read_text().splitlines()
    assert lines[0] == "admission_id,sign_id,t0,t1,t2"
    assert lines[1] == "a,s,1.0,,2.0"


def test_series_matrix_empty_and_mixed(tmp_path):
    write_series_matrix([], tmp_path / "empty.csv")
    assert (tmp_path / "empty.csv").read_text() == "admission_id,sign_id\n"
    mixed = [
        SignSeries("a", "s", np.array([1.0]), 60),
        SignSeries("a", "t", np.array([1.0, 2.0]), 60),
    ]
    with pytest.raises(DataError):
        write_series_matrix(mixed, tmp_path / "bad.csv")


def test_series_matrix_row_order_stable(tmp_path):
    series = [
        SignSeries("b", "s2", np.array([1.0]), 60),
        SignSeries("a", "s2", np.array([2.0]), 60),
        SignSeries("b", "s1", np.array([3.0]), 60),
    ]
    write_series_matrix(series, tmp_path / "m.csv")
    rows = (tmp_path / "m.csv").read_text().splitlines()[1:]
    assert [r.split(",")[0:2] for r in rows] == [["a", "s2"], ["b", "s1"], ["b", "s2"]]


def test_series_matrix_read_back(tmp_path):
    cohort, truth = generate_cohort(SynthSpec(n_admissions=6, n_signs=3, grid_hours=5,
                                              obs_rate=1.0, seed=4))
    write_series_matrix(truth.as_series_set(), tmp_path / "t.csv")
    back = read_series_matrix(tmp_path / "t.csv")
    assert set(back.sign_ids) == set(truth.sign_ids)
    assert set(back.admission_ids) == set(truth.admission_ids)
    for sid in truth.sign_ids:
        rows = [back.admission_ids.index(a) for a in truth.admission_ids]
        assert np.allclose(back.sign_matrix(sid)[rows], truth.values[truth.sign_ids.index(sid)])


def test_provenance_matrix_companion(tmp_path):
    from vitalgrid.interpolate import baseline_fill
    from vitalgrid.io import write_provenance_matrix
    from vitalgrid.records import FilledSeriesSet

    raw = np.array([[[np.nan, 2.0, np.nan]], [[1.0, np.nan, np.nan]]])
    filled = np.empty_like(raw)
    prov = np.empty(raw.shape, dtype=np.uint8)
    for k in range(2):
        filled[k], prov[k] = baseline_fill(raw[k])
    fset = FilledSeriesSet(("s1", "s2"), ("a",), filled, prov, None)
    write_series_matrix(SeriesSet(("s1", "s2"), ("a",), filled, None), tmp_path / "f.csv")
    write_provenance_matrix(fset, tmp_path / "p.csv")
    lines = (tmp_path / "p.csv").read_text().splitlines()
    assert lines[0] == "admission_id,sign_id,t0,t1,t2"
    assert lines[1] == "a,s1,bfill,observed,ffill"
    assert lines[2] == "a,s2,observed,ffill,ffill"


def test_quality_report_files(tmp_path, tiny_cohort):
    from vitalgrid.resample import build_series_set

    ss = build_series_set(tiny_cohort, ["hr", "bp"], 4)
    rep = missing_metrics(ss, tiny_cohort)
    write_quality_report(rep, tmp_path)
    sign_rows = (tmp_path / "missing_sign_patient.csv").read_text().splitlines()
    assert len(sign_rows) == 1 + 2  # header + one row per sign
    adm_rows = (tmp_path / "missing_patient_record.csv").read_text().splitlines()
    assert len(adm_rows) == 1 + 2  # header + one row per admission
    pearson_rows = (tmp_path / "sign_label_correlation.csv").read_text().splitlines()
    assert len(pearson_rows) == 1 + 2
    # undefined correlations serialize as empty cells, ranked last
    rs = [line.split(",")[1] for line in pearson_rows[1:]]
    assert all(r == "" or abs(float(r)) <= 1.0 for r in rs)
    non_empty = [abs(float(r)) for r in rs if r != ""]
    assert non_empty == sorted(non_empty, reverse=True)
