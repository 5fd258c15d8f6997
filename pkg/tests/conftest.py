import numpy as np
import pytest

import db
from diarysim.diary import MobilityDiary
from diarysim.engine import SampledTrajectory
from diarysim.ingestion import AbstractTrajectory, RawRecord
from diarysim.tessellation import WeightedTessellation

HOUR = 3600
# 96 hours after the epoch is Monday 1970-01-05 00:00 UTC
MONDAY = 96 * HOUR


@pytest.fixture(autouse=True)
def no_registry():
    """Keep tests off any DATABASE_URL found in the environment."""
    db.configure("")
    yield
    db.configure("")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def collinear():
    """Three planar locations at x = 0, 1, 2 km with equal relevance."""
    return WeightedTessellation(np.array([0.0, 1.0, 2.0]), np.zeros(3), np.ones(3), geographic=False)


@pytest.fixture
def line_tessellation():
    """Ten planar locations one kilometer apart with increasing relevance."""
    n = 10
    return WeightedTessellation(np.arange(n, dtype=float), np.zeros(n), np.arange(1, n + 1, dtype=float),
                                geographic=False)


def records(user, locations, start=0, step=HOUR):
    """One record per entry; None leaves the slot empty and a tuple puts several records in one slot."""
    out = []
    for i, entry in enumerate(locations):
        if entry is None:
            continue
        entries = entry if isinstance(entry, tuple) else (entry,)
        for j, location in enumerate(entries):
            out.append(RawRecord(user, float(location), 0.0, start + i * step + j))
    return out


def abstract(slots, user="u", start_slot=0, slot_seconds=HOUR):
    return AbstractTrajectory(user, slot_seconds, start_slot * slot_seconds, np.asarray(slots))


def sampled(slots, agent=0, slot_seconds=HOUR):
    return SampledTrajectory(agent, slot_seconds, np.asarray(slots))


def diary(tokens):
    return MobilityDiary(tokens)
