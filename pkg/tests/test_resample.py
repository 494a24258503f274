import numpy as np
import pytest

from vitalgrid.errors import ConfigError, DataError
from vitalgrid.records import SignEvent
from vitalgrid.resample import build_series_set, hourly_grid, slot_of

from oracles import naive_slot_assignment

H10 = 600  # 10:00 in minutes
H11 = 660
H14 = 840


def ev(minute, value, aid="a", sid="hr"):
    return SignEvent(aid, sid, minute, value)


def test_hourly_mean_within_hour():
    # events at 10:15 and 10:45, grid over (09:00, 11:00]
    s = hourly_grid([ev(H10 + 15, 4.0), ev(H10 + 45, 6.0)], discharge_time=H11, grid_hours=2)
    assert s.grid_end == H11
    assert np.isnan(s.values[0])
    assert s.values[1] == 5.0


def test_exact_hour_goes_to_interval_ending_there():
    # an event exactly at 10:00 belongs to the hour ending 10:00, not 11:00
    s = hourly_grid([ev(H10, 7.0)], discharge_time=H11, grid_hours=2)
    assert s.values[0] == 7.0
    assert np.isnan(s.values[1])


def test_discharge_rounds_up():
    s = hourly_grid([ev(H14 - 10, 1.0)], discharge_time=13 * 60 + 27, grid_hours=1)
    assert s.grid_end == H14  # 13:27 -> 14:00


def test_on_the_hour_discharge_unchanged():
    s = hourly_grid([], discharge_time=H14, grid_hours=3)
    assert s.grid_end == H14


def test_events_outside_window_ignored():
    s = hourly_grid([ev(H10 - 200, 9.0), ev(H11 + 1, 9.0)], discharge_time=H11, grid_hours=2)
    assert np.isnan(s.values).all()


def test_mixed_series_rejected():
    with pytest.raises(DataError):
        hourly_grid([ev(10, 1.0, "a"), ev(20, 1.0, "b")], 60, 1)
    with pytest.raises(ConfigError):
        hourly_grid([ev(10, 1.0)], 60, 0)


def test_build_series_set_cardinality(tiny_cohort):
    ss = build_series_set(tiny_cohort, ["hr", "bp", "ghost_sign"], grid_hours=4)
    assert ss.values.shape == (3, 2, 4)
    assert len(ss) == 6
    # a sign never recorded for an admission is an all-missing series
    assert np.isnan(ss.sign_matrix("ghost_sign")).all()
    assert np.isnan(ss.sign_matrix("bp")[1]).all()


def test_build_series_set_matches_hourly_grid(tiny_cohort):
    ss = build_series_set(tiny_cohort, ["hr", "bp"], grid_hours=4)
    by_adm = {a.admission_id: a for a in tiny_cohort.admissions}
    for sid in ("hr", "bp"):
        for aid in ("a", "b"):
            events = [e for e in tiny_cohort.events if e.admission_id == aid and e.sign_id == sid]
            want = hourly_grid(events, by_adm[aid].discharge_time, 4) if events else None
            got = ss.series(aid, sid)
            if want is None:
                assert np.isnan(got.values).all()
            else:
                assert got.grid_end == want.grid_end
                assert np.array_equal(got.values, want.values, equal_nan=True)


def test_build_series_set_validations(tiny_cohort):
    with pytest.raises(DataError):
        build_series_set(tiny_cohort, [], 4)
    with pytest.raises(DataError):
        build_series_set(tiny_cohort, ["hr", "hr"], 4)


def test_duplicate_timestamps_enter_the_mean():
    s = hourly_grid([ev(H10 + 5, 2.0), ev(H10 + 5, 4.0)], discharge_time=H11, grid_hours=1)
    assert s.values[0] == 3.0


def _random_event_set(rng):
    grid_hours = int(rng.integers(1, 8))
    grid_end = int(rng.integers(10, 3000)) * 60
    n = int(rng.integers(0, 30))
    lo = grid_end - (grid_hours + 2) * 60
    times = rng.integers(lo, grid_end + 120, size=n)
    values = np.round(rng.normal(0, 5, size=n), 3)
    return grid_hours, grid_end, times.astype(np.int64), values


def test_resampler_properties_random(rng):
    """Slot assignment, conservation, mean-in-range and translation invariance
    on randomized event sets (the brute-force slot finder is the oracle)."""
    for _ in range(300):
        grid_hours, grid_end, times, values = _random_event_set(rng)
        events = [ev(int(t), float(v)) for t, v in zip(times, values)]
        s = hourly_grid(events, grid_end, grid_hours)
        assert s.grid_end == grid_end

        # each event lands in exactly the slot the naive scan finds
        per_slot = {}
        ignored = 0
        for t, v in zip(times, values):
            slot = naive_slot_assignment(int(t), grid_end, grid_hours)
            fast = slot_of(np.array([t]), np.array([grid_end]), grid_hours)[0]
            assert (slot if slot is not None else -1) == fast
            if slot is None:
                ignored += 1
            else:
                per_slot.setdefault(slot, []).append(float(v))
        assert ignored + sum(len(v) for v in per_slot.values()) == len(events)

        for t in range(grid_hours):
            if t in per_slot:
                vals = per_slot[t]
                assert s.values[t] == pytest.approx(np.mean(vals), abs=1e-12)
                assert min(vals) - 1e-12 <= s.values[t] <= max(vals) + 1e-12
            else:
                assert np.isnan(s.values[t])

        # shifting everything by whole hours changes nothing
        shift = int(rng.integers(-5, 6)) * 60
        shifted = [ev(e.charttime + shift, e.value) for e in events]
        s2 = hourly_grid(shifted, grid_end + shift, grid_hours)
        assert np.array_equal(s.values, s2.values, equal_nan=True)
