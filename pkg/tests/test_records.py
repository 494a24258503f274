import numpy as np
import pytest

from vitalgrid.records import (
    AdmissionRecord,
    Cohort,
    EventTable,
    SeriesSet,
    SignEvent,
    SignSeries,
    ceil_to_hour,
    validate_cohort,
)

from conftest import make_cohort


@pytest.mark.parametrize(
    "minutes,expected",
    [(0, 0), (1, 60), (59, 60), (60, 60), (61, 120), (807, 840), (-30, 0), (-60, -60)],
)
def test_ceil_to_hour(minutes, expected):
    assert ceil_to_hour(minutes) == expected


def test_validate_clean_cohort(tiny_cohort):
    assert validate_cohort(tiny_cohort) == []


def test_validate_empty_cohort():
    cohort = Cohort(admissions=(), events=EventTable.empty())
    assert validate_cohort(cohort) == []


def test_validate_orphan_event():
    cohort = make_cohort([("ghost", "hr", 10, 1.0)], [("a", 90, 0)])
    findings = validate_cohort(cohort)
    assert len(findings) == 1
    assert "ghost" in findings[0]


def test_validate_nonfinite_value():
    ev = EventTable.from_columns(
        np.array(["a"], dtype=object), np.array(["hr"], dtype=object),
        np.array([5], dtype=np.int64), np.array([np.inf]),
    )
    cohort = Cohort(admissions=(AdmissionRecord("a", 90, 0),), events=ev)
    findings = validate_cohort(cohort)
    assert len(findings) == 1 and "non-finite" in findings[0]


def test_validate_duplicate_admission_and_bad_flag():
    cohort = Cohort(
        admissions=(AdmissionRecord("a", 90, 0), AdmissionRecord("a", 80, 2)),
        events=EventTable.empty(),
    )
    findings = validate_cohort(cohort)
    assert any("duplicate" in f for f in findings)
    assert any("expire_flag" in f for f in findings)


def test_event_table_round_trip_and_equality():
    events = [SignEvent("a", "hr", 10, 1.5), SignEvent("b", "hr", 20, 2.5),
              SignEvent("a", "bp", 30, 3.5)]
    t1 = EventTable.from_events(events)
    t2 = EventTable.from_events(events)
    assert t1 == t2
    assert list(t1) == events
    assert len(t1) == 3
    # identifiers compare by value, not by code assignment order
    t3 = EventTable.from_events(list(reversed(events)))
    assert t3 != t1
    assert sorted(t3, key=lambda e: e.charttime) == events


def test_sign_catalog_counts(tiny_cohort):
    assert tiny_cohort.sign_catalog() == [("hr", 3), ("bp", 1)]


def test_sign_series_invariants():
    s = SignSeries("a", "hr", np.array([1.0, np.nan]), 120)
    assert s.grid_hours == 2
    assert s.observed_mask().tolist() == [True, False]
    with pytest.raises(ValueError):
        SignSeries("a", "hr", np.array([1.0]), 119)  # off-hour grid end


def test_series_set_views_and_subset():
    vals = np.arange(12, dtype=float).reshape(2, 3, 2)
    ss = SeriesSet(("s1", "s2"), ("a", "b", "c"), vals, np.array([60, 120, 180]))
    assert ss.grid_hours == 2
    assert len(ss) == 6
    assert ss.sign_matrix("s2").shape == (3, 2)
    one = ss.series("b", "s1")
    assert one.values.tolist() == [2.0, 3.0] and one.grid_end == 120
    sub = ss.subset_signs(["s2"])
    assert sub.sign_ids == ("s2",) and np.array_equal(sub.values[0], vals[1])
    with pytest.raises(KeyError):
        ss.sign_matrix("nope")


def test_series_set_immutable():
    ss = SeriesSet(("s",), ("a",), np.zeros((1, 1, 4)), np.array([60]))
    with pytest.raises(ValueError):
        ss.values[0, 0, 0] = 1.0
