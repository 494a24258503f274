import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))  # make oracles importable

from vitalgrid.records import AdmissionRecord, Cohort, EventTable, SignEvent


def make_cohort(events, admissions) -> Cohort:
    """Build a Cohort from lists of (aid, sid, minutes, value) and
    (aid, discharge_minutes, flag) tuples."""
    ev = EventTable.from_events([SignEvent(*e) for e in events])
    adm = tuple(AdmissionRecord(*a) for a in admissions)
    return Cohort(admissions=adm, events=ev)


@pytest.fixture
def tiny_cohort() -> Cohort:
    # two admissions, two signs, grid_end of adm a = 120 (discharge 90 -> ceil)
    events = [
        ("a", "hr", 61, 10.0),
        ("a", "hr", 90, 14.0),
        ("a", "bp", 119, 80.0),
        ("b", "hr", 241, 6.0),
    ]
    admissions = [("a", 90, 0), ("b", 300, 1)]
    return make_cohort(events, admissions)


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(1234)
