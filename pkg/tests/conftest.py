import datetime as dt
import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from obtkit.ingest import EpochSeries, SubjectProfile, age_group  # noqa: E402

MONDAY = dt.datetime(2005, 1, 3)  # a Monday, midnight


def make_profile(sid, age=20, sex="female", weight=1.0, stratum=None, psu=None, self_report=None):
    return SubjectProfile(sid, age, sex, age_group(age), weight, stratum, psu, self_report)


def week_of_wear(start=MONDAY, days=7, sid="S1", seed=0):
    """Positive-count series of whole days starting at midnight."""
    rng = np.random.default_rng(seed)
    return EpochSeries(sid, start, rng.integers(100, 3000, days * 1440))


def plant(series, start_index, end_index):
    series.counts[start_index:end_index] = 0
    return series


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
