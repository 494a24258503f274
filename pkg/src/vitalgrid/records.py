"""Core domain types shared by every pipeline stage.

All types are immutable after construction (ndarray buffers are marked
read-only) and safe to share across worker processes.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator, Sequence

import numpy as np

MINUTES_PER_HOUR = 60


def ceil_to_hour(minutes: int) -> int:
    """Round a minute timestamp up to the next whole hour (no-op if already on one)."""
    return -((-int(minutes)) // MINUTES_PER_HOUR) * MINUTES_PER_HOUR


@dataclass(frozen=True)
class SignEvent:
    """One raw clinical measurement."""

    admission_id: str
    sign_id: str
    charttime: int  # minutes since epoch
    value: float


@dataclass(frozen=True)
class AdmissionRecord:
    """One hospital stay with its in-hospital mortality label."""

    admission_id: str
    discharge_time: int  # minutes since epoch
    expire_flag: int  # 0 survived, 1 died in hospital


def _freeze(arr: np.ndarray) -> np.ndarray:
    arr = np.ascontiguousarray(arr)
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True)
class EventTable:
    """Columnar store of SignEvents.

    Identifiers are dictionary-encoded (int32 codes into the id tuples) so
    multi-million-row cohorts stay compact. Iteration yields SignEvent
    objects for convenience at small scale.
    """

    admission_ids: tuple[str, ...]
    sign_ids: tuple[str, ...]
    admission_code: np.ndarray  # int32, index into admission_ids
    sign_code: np.ndarray  # int32, index into sign_ids
    charttime: np.ndarray  # int64 minutes
    value: np.ndarray  # float64

    def __post_init__(self) -> None:
        n = len(self.value)
        for name in ("admission_code", "sign_code", "charttime"):
            if len(getattr(self, name)) != n:
                raise ValueError(f"EventTable column {name!r} length mismatch")
        object.__setattr__(self, "admission_code", _freeze(np.asarray(self.admission_code, dtype=np.int32)))
        object.__setattr__(self, "sign_code", _freeze(np.asarray(self.sign_code, dtype=np.int32)))
        object.__setattr__(self, "charttime", _freeze(np.asarray(self.charttime, dtype=np.int64)))
        object.__setattr__(self, "value", _freeze(np.asarray(self.value, dtype=np.float64)))

    @classmethod
    def from_events(cls, events: Sequence[SignEvent]) -> "EventTable":
        adm = [e.admission_id for e in events]
        sig = [e.sign_id for e in events]
        return cls.from_columns(
            adm, sig,
            np.array([e.charttime for e in events], dtype=np.int64),
            np.array([e.value for e in events], dtype=np.float64),
        )

    @classmethod
    def from_columns(cls, admission_id, sign_id, charttime, value) -> "EventTable":
        """Build from parallel columns of raw (string) ids, encoding as it goes."""
        import pandas as pd

        a_codes, a_ids = pd.factorize(np.asarray(admission_id, dtype=object))
        s_codes, s_ids = pd.factorize(np.asarray(sign_id, dtype=object))
        return cls(
            admission_ids=tuple(str(x) for x in a_ids),
            sign_ids=tuple(str(x) for x in s_ids),
            admission_code=a_codes,
            sign_code=s_codes,
            charttime=charttime,
            value=value,
        )

    @classmethod
    def empty(cls) -> "EventTable":
        z32 = np.zeros(0, dtype=np.int32)
        return cls((), (), z32, z32, np.zeros(0, dtype=np.int64), np.zeros(0))

    def __len__(self) -> int:
        return len(self.value)

    def __iter__(self) -> Iterator[SignEvent]:
        for i in range(len(self)):
            yield SignEvent(
                self.admission_ids[self.admission_code[i]],
                self.sign_ids[self.sign_code[i]],
                int(self.charttime[i]),
                float(self.value[i]),
            )

    def admission_id_column(self) -> np.ndarray:
        return np.array(self.admission_ids, dtype=object)[self.admission_code]

    def sign_id_column(self) -> np.ndarray:
        return np.array(self.sign_ids, dtype=object)[self.sign_code]

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, EventTable):
            return NotImplemented
        return (
            len(self) == len(other)
            and np.array_equal(self.charttime, other.charttime)
            and np.array_equal(self.value, other.value)
            and np.array_equal(self.admission_id_column(), other.admission_id_column())
            and np.array_equal(self.sign_id_column(), other.sign_id_column())
        )


@dataclass(frozen=True)
class Cohort:
    """A set of admissions plus the raw event stream recorded for them."""

    admissions: tuple[AdmissionRecord, ...]
    events: EventTable

    def __post_init__(self) -> None:
        object.__setattr__(self, "admissions", tuple(self.admissions))

    @property
    def n_admissions(self) -> int:
        return len(self.admissions)

    def admission_index(self) -> dict[str, int]:
        return {a.admission_id: i for i, a in enumerate(self.admissions)}

    def labels(self) -> np.ndarray:
        return np.array([a.expire_flag for a in self.admissions], dtype=np.int64)

    def sign_catalog(self) -> list[tuple[str, int]]:
        """Distinct sign ids with raw record counts, sorted by count desc then id."""
        counts = np.bincount(self.events.sign_code, minlength=len(self.events.sign_ids))
        cat = [(sid, int(c)) for sid, c in zip(self.events.sign_ids, counts)]
        cat.sort(key=lambda t: (-t[1], t[0]))
        return cat

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Cohort):
            return NotImplemented
        return self.admissions == other.admissions and self.events == other.events


@dataclass(frozen=True)
class SignSeries:
    """Fixed-length hourly grid for one (admission, sign) pair.

    ``values[t]`` is NaN when slot t holds no observation. Slot t covers the
    left-open right-closed hour ending at ``grid_end - (len(values)-1-t)`` hours.
    """

    admission_id: str
    sign_id: str
    values: np.ndarray  # (H,) float64, NaN = missing
    grid_end: int  # minutes, always on a whole hour

    def __post_init__(self) -> None:
        v = np.asarray(self.values, dtype=np.float64)
        object.__setattr__(self, "values", _freeze(v))
        if self.grid_end % MINUTES_PER_HOUR != 0:
            raise ValueError("grid_end must lie on a whole hour")

    @property
    def grid_hours(self) -> int:
        return len(self.values)

    def observed_mask(self) -> np.ndarray:
        return np.isfinite(self.values)


def validate_cohort(cohort: Cohort) -> list[str]:
    """Check Cohort invariants; returns findings naming offending records.

    Findings are data, not failures: an empty list means the cohort is valid.
    """
    findings: list[str] = []
    seen: set[str] = set()
    for a in cohort.admissions:
        if a.admission_id in seen:
            findings.append(f"duplicate admission_id {a.admission_id!r}")
        seen.add(a.admission_id)
        if a.expire_flag not in (0, 1):
            findings.append(f"admission {a.admission_id!r} expire_flag {a.expire_flag!r} not in {{0,1}}")

    ev = cohort.events
    known = {a.admission_id for a in cohort.admissions}
    orphan = [aid for aid in ev.admission_ids if aid not in known]
    if orphan:
        counts = np.bincount(ev.admission_code, minlength=len(ev.admission_ids))
        for aid in orphan:
            idx = ev.admission_ids.index(aid)
            findings.append(
                f"{int(counts[idx])} event(s) reference admission_id {aid!r} absent from admissions"
            )
    bad = ~np.isfinite(ev.value)
    if bad.any():
        for i in np.flatnonzero(bad)[:50]:
            findings.append(
                f"event #{int(i)} (admission {ev.admission_ids[ev.admission_code[i]]!r}, "
                f"sign {ev.sign_ids[ev.sign_code[i]]!r}) has non-finite value"
            )
        extra = int(bad.sum()) - min(int(bad.sum()), 50)
        if extra:
            findings.append(f"... and {extra} more non-finite event values")
    return findings


@dataclass(frozen=True)
class SeriesSet:
    """Dense collection of SignSeries over signs x admissions.

    ``values[s, a, t]`` is the hourly grid for sign ``sign_ids[s]`` and
    admission ``admission_ids[a]``; NaN marks missing slots. Iterating the
    set yields SignSeries objects (admission-major, matching the stable
    on-disk row order).
    """

    sign_ids: tuple[str, ...]
    admission_ids: tuple[str, ...]
    values: np.ndarray  # (n_signs, n_admissions, H) float64
    grid_ends: np.ndarray | None  # (n_admissions,) int64 minutes, None if unknown

    def __post_init__(self) -> None:
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 3 or v.shape[0] != len(self.sign_ids) or v.shape[1] != len(self.admission_ids):
            raise ValueError("SeriesSet values shape does not match id lists")
        object.__setattr__(self, "values", _freeze(v))
        if self.grid_ends is not None:
            object.__setattr__(self, "grid_ends", _freeze(np.asarray(self.grid_ends, dtype=np.int64)))

    @property
    def grid_hours(self) -> int:
        return self.values.shape[2]

    def __len__(self) -> int:
        return len(self.sign_ids) * len(self.admission_ids)

    def __iter__(self) -> Iterator[SignSeries]:
        for a, aid in enumerate(self.admission_ids):
            for s, sid in enumerate(self.sign_ids):
                yield self.series(aid, sid)

    def sign_index(self, sign_id: str) -> int:
        try:
            return self.sign_ids.index(sign_id)
        except ValueError:
            raise KeyError(f"sign {sign_id!r} not in series set") from None

    def sign_matrix(self, sign_id: str) -> np.ndarray:
        """(n_admissions, H) view of one sign's grids."""
        return self.values[self.sign_index(sign_id)]

    def series(self, admission_id: str, sign_id: str) -> SignSeries:
        a = self.admission_ids.index(admission_id)
        s = self.sign_index(sign_id)
        end = int(self.grid_ends[a]) if self.grid_ends is not None else 0
        return SignSeries(admission_id, sign_id, self.values[s, a], end)

    def subset_signs(self, signs: Sequence[str]) -> "SeriesSet":
        rows = [self.sign_index(s) for s in signs]
        return SeriesSet(tuple(signs), self.admission_ids, self.values[rows], self.grid_ends)


# Fill provenance codes for interpolated series.
OBSERVED, REGRESSOR, FFILL, BFILL, ZERO = 0, 1, 2, 3, 4
PROVENANCE_LABELS = ("observed", "regressor", "ffill", "bfill", "zero")


@dataclass(frozen=True)
class FilledSeriesSet:
    """A SeriesSet with every slot filled, plus per-slot fill provenance."""

    sign_ids: tuple[str, ...]
    admission_ids: tuple[str, ...]
    values: np.ndarray  # (n_signs, n_admissions, H) float64, no NaN
    provenance: np.ndarray  # same shape, uint8 codes into PROVENANCE_LABELS
    grid_ends: np.ndarray | None

    def __post_init__(self) -> None:
        object.__setattr__(self, "values", _freeze(np.asarray(self.values, dtype=np.float64)))
        object.__setattr__(self, "provenance", _freeze(np.asarray(self.provenance, dtype=np.uint8)))

    @property
    def grid_hours(self) -> int:
        return self.values.shape[2]

    def sign_matrix(self, sign_id: str) -> np.ndarray:
        return self.values[self.sign_ids.index(sign_id)]


@dataclass(frozen=True)
class GroundTruth:
    """Complete (unmasked) hourly values behind a synthetic cohort."""

    sign_ids: tuple[str, ...]
    admission_ids: tuple[str, ...]
    values: np.ndarray  # (n_signs, n_admissions, H) float64, fully observed
    informative_signs: tuple[str, ...]
    grid_ends: np.ndarray

    def __post_init__(self) -> None:
        object.__setattr__(self, "values", _freeze(np.asarray(self.values, dtype=np.float64)))
        object.__setattr__(self, "grid_ends", _freeze(np.asarray(self.grid_ends, dtype=np.int64)))

    def as_series_set(self) -> SeriesSet:
        return SeriesSet(self.sign_ids, self.admission_ids, self.values, self.grid_ends)
