"""Irregular events -> fixed hourly grids.

The grid for an admission ends at its discharge time rounded up to the
next whole hour and extends ``grid_hours`` slots back. Each slot holds the
arithmetic mean of the event values falling in its left-open right-closed
hour; an event exactly on an hour boundary belongs to the interval that
ends there. Events outside the window are ignored.
"""
from __future__ import annotations

from typing import Sequence

import numpy as np

from .errors import ConfigError, DataError
from .records import MINUTES_PER_HOUR, Cohort, SeriesSet, SignEvent, SignSeries, ceil_to_hour


def slot_of(charttime: np.ndarray, grid_end: np.ndarray, grid_hours: int) -> np.ndarray:
    """Slot index for each event time, or -1 when outside the grid window.

    ``(grid_end - t) // 60`` counts whole hours back from the grid end with
    the right-closed convention: an event exactly on an hour boundary lands
    in the interval ending at that boundary.
    """
    back = (np.asarray(grid_end, dtype=np.int64) - np.asarray(charttime, dtype=np.int64)) // MINUTES_PER_HOUR
    slot = grid_hours - 1 - back
    return np.where((back >= 0) & (back < grid_hours), slot, -1)


def hourly_grid(events: Sequence[SignEvent], discharge_time: int, grid_hours: int) -> SignSeries:
    """Resample the events of one (admission, sign) pair onto the hourly grid."""
    if grid_hours < 1:
        raise ConfigError("grid_hours must be >= 1")
    events = list(events)
    pairs = {(e.admission_id, e.sign_id) for e in events}
    if len(pairs) > 1:
        raise DataError(f"hourly_grid got events from multiple series: {sorted(pairs)}")
    admission_id, sign_id = next(iter(pairs)) if pairs else ("", "")

    grid_end = ceil_to_hour(discharge_time)
    sums = np.zeros(grid_hours)
    counts = np.zeros(grid_hours, dtype=np.int64)
    if events:
        t = np.array([e.charttime for e in events], dtype=np.int64)
        v = np.array([e.value for e in events], dtype=np.float64)
        slot = slot_of(t, grid_end, grid_hours)
        keep = slot >= 0
        np.add.at(sums, slot[keep], v[keep])
        np.add.at(counts, slot[keep], 1)
    values = np.full(grid_hours, np.nan)
    hit = counts > 0
    values[hit] = sums[hit] / counts[hit]
    return SignSeries(admission_id, sign_id, values, grid_end)


def build_series_set(cohort: Cohort, signs: Sequence[str], grid_hours: int) -> SeriesSet:
    """One SignSeries per (admission, sign); all-missing when never recorded.

    Vectorized equivalent of calling :func:`hourly_grid` for every pair.
    """
    if not signs:
        raise DataError("signs must be nonempty")
    if grid_hours < 1:
        raise ConfigError("grid_hours must be >= 1")
    signs = list(signs)
    if len(set(signs)) != len(signs):
        raise DataError("signs contains duplicates")

    n_adm = cohort.n_admissions
    n_signs = len(signs)
    grid_ends = np.array([ceil_to_hour(a.discharge_time) for a in cohort.admissions], dtype=np.int64)

    ev = cohort.events
    # Map event sign codes onto selected-sign rows (-1 = not selected).
    sign_row = {s: i for i, s in enumerate(signs)}
    code_to_row = np.full(max(len(ev.sign_ids), 1), -1, dtype=np.int64)
    for code, sid in enumerate(ev.sign_ids):
        code_to_row[code] = sign_row.get(sid, -1)
    # Event admission codes onto cohort admission rows.
    adm_row_by_id = cohort.admission_index()
    adm_code_to_row = np.full(max(len(ev.admission_ids), 1), -1, dtype=np.int64)
    for code, aid in enumerate(ev.admission_ids):
        if aid not in adm_row_by_id:
            raise DataError(f"event admission {aid!r} missing from cohort admissions")
        adm_code_to_row[code] = adm_row_by_id[aid]

    total = n_signs * n_adm * grid_hours
    if len(ev):
        s_row = code_to_row[ev.sign_code]
        a_row = adm_code_to_row[ev.admission_code]
        slot = slot_of(ev.charttime, grid_ends[a_row], grid_hours)
        keep = (s_row >= 0) & (slot >= 0)
        flat = (s_row[keep] * n_adm + a_row[keep]) * grid_hours + slot[keep]
        values = np.bincount(flat, weights=ev.value[keep], minlength=total)
        counts = np.bincount(flat, minlength=total)
    else:
        values = np.zeros(total)
        counts = np.zeros(total, dtype=np.int64)

    hit = counts > 0
    values[hit] /= counts[hit]
    values[~hit] = np.nan
    return SeriesSet(
        tuple(signs),
        tuple(a.admission_id for a in cohort.admissions),
        values.reshape(n_signs, n_adm, grid_hours),
        grid_ends,
    )
