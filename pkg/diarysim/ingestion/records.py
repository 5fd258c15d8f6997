import logging
from collections import Counter
from dataclasses import dataclass, field
from typing import Callable, Dict, Hashable, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from ..base import EmptyCorpusError, EmptyUserError, MalformedRecordError

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class RawRecord:
    """One time-stamped observation of a user (a call, or a GPS fix)."""
    user: str
    x: float
    y: float
    timestamp: int


@dataclass
class AbstractTrajectory:
    """Per-slot abstract location ids of one user.

    Abstract ids are small integers in first-appearance order; ``labels[i]`` is
    the key (coordinates or snapped location id) abstract id ``i`` stands for.
    """
    user: str
    slot_seconds: int
    start_slot_epoch: int
    slots: np.ndarray
    labels: Tuple[Hashable, ...] = field(default=())

    def __post_init__(self):
        self.slots = np.asarray(self.slots, dtype=np.int64)

    def __len__(self) -> int:
        return len(self.slots)

    @property
    def first_slot(self) -> int:
        """Index of slot 0 on the epoch-aligned slot grid."""
        return self.start_slot_epoch // self.slot_seconds

    def phase(self, period: int) -> int:
        """Position of slot 0 inside the period."""
        return self.first_slot % period


def coordinate_key(record: RawRecord) -> Hashable:
    return (record.x, record.y)


def assign_slots(
    records: Sequence[RawRecord],
    slot_seconds: int,
    weighting: str = "count",
    key: Callable[[RawRecord], Hashable] = coordinate_key,
) -> AbstractTrajectory:
    """Abstract trajectory of one user from their raw records.

    Each slot holds the location with the most records in it (or the most
    dwell time with ``weighting="dwell"``); ties go to the location most
    frequent over the whole record, then to the smaller abstract id. Empty
    slots repeat the previous slot. Slots are aligned to multiples of
    ``slot_seconds`` since the epoch.
    """
    if slot_seconds <= 0:
        raise ValueError(f"slot_seconds must be positive, got {slot_seconds}")
    if weighting not in ("count", "dwell"):
        raise ValueError(f"unknown weighting {weighting!r}")
    if not records:
        raise EmptyUserError("user has no records")

    ordered = sorted(records, key=lambda r: r.timestamp)
    ids: Dict[Hashable, int] = {}
    abstract = []
    for record in ordered:
        abstract.append(ids.setdefault(key(record), len(ids)))
    overall = Counter(abstract)

    first_slot = ordered[0].timestamp // slot_seconds
    slot_of = [r.timestamp // slot_seconds - first_slot for r in ordered]
    n_slots = slot_of[-1] + 1

    weights: List[Optional[Dict[int, float]]] = [None] * n_slots
    counts: List[Optional[Dict[int, int]]] = [None] * n_slots
    for i, (record, location, slot) in enumerate(zip(ordered, abstract, slot_of)):
        if counts[slot] is None:
            counts[slot] = {}
            weights[slot] = {}
        counts[slot][location] = counts[slot].get(location, 0) + 1
        if weighting == "dwell":
            slot_end = (first_slot + slot + 1) * slot_seconds
            following = ordered[i + 1].timestamp if i + 1 < len(ordered) else record.timestamp
            weights[slot][location] = weights[slot].get(location, 0.0) + min(following, slot_end) - record.timestamp

    slots = np.empty(n_slots, dtype=np.int64)
    previous = abstract[0]
    for slot in range(n_slots):
        if counts[slot] is None:
            slots[slot] = previous
            continue
        scores = counts[slot]
        if weighting == "dwell" and any(w > 0 for w in weights[slot].values()):
            scores = weights[slot]
        previous = min(scores, key=lambda loc: (-scores[loc], -overall[loc], loc))
        slots[slot] = previous

    labels = tuple(sorted(ids, key=ids.get))
    return AbstractTrajectory(
        user=ordered[0].user,
        slot_seconds=slot_seconds,
        start_slot_epoch=int(first_slot * slot_seconds),
        slots=slots,
        labels=labels,
    )


def group_by_user(records: Sequence[RawRecord]) -> Dict[str, List[RawRecord]]:
    """Records per user in timestamp order, users in sorted order."""
    grouped: Dict[str, List[RawRecord]] = {}
    for record in records:
        grouped.setdefault(record.user, []).append(record)
    return {user: sorted(grouped[user], key=lambda r: r.timestamp) for user in sorted(grouped)}


def read_records(path: str) -> Dict[str, List[RawRecord]]:
    """Read ``user_id,lat,lon,timestamp`` into per-user record lists."""
    try:
        frame = pd.read_csv(path, dtype=str, keep_default_na=False)
    except pd.errors.EmptyDataError:
        raise EmptyCorpusError(f"{path} is empty")

    expected = ["user_id", "lat", "lon", "timestamp"]
    missing = [c for c in expected if c not in frame.columns]
    if missing:
        raise MalformedRecordError(path, 1, f"missing columns {missing}")
    if frame.empty:
        raise EmptyCorpusError(f"{path} has no records")

    coords = frame[["lat", "lon"]].apply(pd.to_numeric, errors="coerce")
    timestamps = pd.to_numeric(frame["timestamp"], errors="coerce")
    bad = (coords.isna().any(axis=1) | timestamps.isna() | (timestamps % 1 != 0)).to_numpy()
    bad |= (frame["user_id"].str.len() == 0).to_numpy()
    if bad.any():
        row = int(np.argmax(bad))
        raise MalformedRecordError(path, row + 2, "expected user_id,lat,lon,integer timestamp")

    records = [
        RawRecord(user, float(lat), float(lon), int(ts))
        for user, lat, lon, ts in zip(frame["user_id"], coords["lat"], coords["lon"], timestamps)
    ]
    logger.info(f"📋 Read {len(records)} records from {path}")
    return group_by_user(records)


def write_abstract_trajectories(trajectories: Sequence[AbstractTrajectory], path: str) -> None:
    """``user_id,slot_index,abstract_location`` with slot_index on the epoch-aligned slot grid."""
    frames = [
        pd.DataFrame({
            "user_id": traj.user,
            "slot_index": traj.first_slot + np.arange(len(traj)),
            "abstract_location": traj.slots,
        })
        for traj in trajectories
    ]
    frame = pd.concat(frames, ignore_index=True) if frames else pd.DataFrame(
        columns=["user_id", "slot_index", "abstract_location"]
    )
    frame.to_csv(path, index=False)


def read_abstract_trajectories(path: str, slot_seconds: int) -> List[AbstractTrajectory]:
    try:
        frame = pd.read_csv(path, dtype={"user_id": str})
    except pd.errors.EmptyDataError:
        raise EmptyCorpusError(f"{path} is empty")
    expected = ["user_id", "slot_index", "abstract_location"]
    missing = [c for c in expected if c not in frame.columns]
    if missing:
        raise MalformedRecordError(path, 1, f"missing columns {missing}")
    if frame[expected].isna().any(axis=None):
        row = int(np.argmax(frame[expected].isna().any(axis=1).to_numpy()))
        raise MalformedRecordError(path, row + 2, "empty field")

    trajectories = []
    for user, group in frame.groupby("user_id", sort=True):
        group = group.sort_values("slot_index")
        index = group["slot_index"].to_numpy(dtype=np.int64)
        if np.any(np.diff(index) != 1):
            raise MalformedRecordError(path, int(group.index[0]) + 2, f"slots of user {user} are not contiguous")
        trajectories.append(AbstractTrajectory(
            user=str(user),
            slot_seconds=slot_seconds,
            start_slot_epoch=int(index[0]) * slot_seconds,
            slots=group["abstract_location"].to_numpy(dtype=np.int64),
        ))
    if not trajectories:
        raise EmptyCorpusError(f"{path} has no trajectories")
    return trajectories
