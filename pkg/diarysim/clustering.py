"""Typical weeks, edit distance between them, and density-based clustering of users' routines."""
import logging
from dataclasses import dataclass
from typing import List, Optional, Sequence, Union

import numpy as np
from sklearn.cluster import DBSCAN
from sklearn.metrics import silhouette_samples

from .base import ConfigError, InsufficientHistoryError, InsufficientPointsError, UndefinedSilhouetteError
from .config import CONFIG
from .ingestion.records import AbstractTrajectory

logger = logging.getLogger(__name__)

HOURS_PER_WEEK = 168
# the epoch began on a Thursday; shift so hour-of-week 0 is Monday 00:00 UTC
EPOCH_HOUR_OF_WEEK = 72


@dataclass(eq=False)
class TypicalWeek:
    user: str
    slots: np.ndarray

    def __post_init__(self):
        self.slots = np.asarray(self.slots, dtype=np.int64)
        if len(self.slots) != HOURS_PER_WEEK:
            raise ValueError(f"a typical week has {HOURS_PER_WEEK} slots, got {len(self.slots)}")

    @property
    def canonical(self) -> np.ndarray:
        return canonical_labels(self.slots)


def canonical_labels(slots: Sequence[int]) -> np.ndarray:
    """Relabel symbols 0, 1, 2, ... in order of first appearance."""
    slots = np.asarray(slots)
    if len(slots) == 0:
        return slots.astype(np.int64)
    _, first, inverse = np.unique(slots, return_index=True, return_inverse=True)
    rank = np.empty(len(first), dtype=np.int64)
    rank[np.argsort(first)] = np.arange(len(first))
    return rank[np.asarray(inverse).reshape(-1)]


def extract_typical_week(traj: AbstractTrajectory) -> TypicalWeek:
    """Most frequent location at each hour of the week; ties by overall frequency, then smaller id."""
    if traj.slot_seconds != 3600:
        raise ConfigError(f"typical weeks need hourly slots, got {traj.slot_seconds}-second slots")
    if len(traj) < HOURS_PER_WEEK:
        raise InsufficientHistoryError(f"user {traj.user} has {len(traj)} hourly slots, a week needs {HOURS_PER_WEEK}")

    overall = np.bincount(traj.slots)
    hour_of_week = (traj.first_slot + np.arange(len(traj)) + EPOCH_HOUR_OF_WEEK) % HOURS_PER_WEEK
    week = np.empty(HOURS_PER_WEEK, dtype=np.int64)
    for hour in range(HOURS_PER_WEEK):
        counts = np.bincount(traj.slots[hour_of_week == hour], minlength=len(overall))
        candidates = np.flatnonzero(counts == counts.max())
        # candidates are ascending, so argmax picks the smaller id on a second tie
        week[hour] = candidates[np.argmax(overall[candidates])]
    return TypicalWeek(traj.user, week)


def _symbols(seq: Union[TypicalWeek, Sequence[int]]) -> np.ndarray:
    return seq.slots if isinstance(seq, TypicalWeek) else np.asarray(seq)


def levenshtein(a: Union[TypicalWeek, Sequence[int]], b: Union[TypicalWeek, Sequence[int]]) -> int:
    """Unit-cost edit distance, one vectorized DP row at a time."""
    a, b = _symbols(a), _symbols(b)
    m = len(b)
    if len(a) == 0 or m == 0:
        return int(max(len(a), m))
    offsets = np.arange(m + 1)
    previous = offsets.copy()
    current = np.empty(m + 1, dtype=np.int64)
    for i, symbol in enumerate(a.tolist(), start=1):
        current[0] = i
        current[1:] = np.minimum(previous[:-1] + (b != symbol), previous[1:] + 1)
        # insertions: current[j] = min over k <= j of current[k] + (j - k)
        current = np.minimum.accumulate(current - offsets) + offsets
        previous, current = current, previous
    return int(previous[m])


def distance_matrix(weeks: Sequence[TypicalWeek]) -> np.ndarray:
    """Pairwise edit distances between canonically relabelled weeks."""
    symbols = [week.canonical for week in weeks]
    n = len(symbols)
    distances = np.zeros((n, n), dtype=np.int64)
    for i in range(n):
        for j in range(i + 1, n):
            distances[i, j] = distances[j, i] = levenshtein(symbols[i], symbols[j])
    logger.info(f"📋 Computed {n * (n - 1) // 2} pairwise week distances")
    return distances


def dbscan(points: Sequence[TypicalWeek], eps: float = None, min_pts: int = None,
           distances: Optional[np.ndarray] = None) -> np.ndarray:
    """Cluster labels under edit distance; noise is -1."""
    eps = CONFIG.cluster.eps if eps is None else eps
    min_pts = CONFIG.cluster.min_pts if min_pts is None else min_pts
    if eps < 0 or min_pts < 1:
        raise ConfigError("eps must be >= 0 and min_pts >= 1")
    if len(points) == 0:
        return np.zeros(0, dtype=np.int64)
    distances = distance_matrix(points) if distances is None else distances
    labels = DBSCAN(eps=eps, min_samples=min_pts, metric="precomputed").fit_predict(distances)
    return labels.astype(np.int64)


def silhouette_values(distances: np.ndarray, labels: Sequence[int]) -> np.ndarray:
    """Per-point silhouette over non-noise points (noise gets NaN)."""
    labels = np.asarray(labels)
    result = np.full(len(labels), np.nan)
    clustered = np.flatnonzero(labels != -1)
    cluster_ids = np.unique(labels[clustered])
    if len(cluster_ids) < 2:
        raise UndefinedSilhouetteError(f"silhouette needs two clusters, found {len(cluster_ids)}")
    if len(cluster_ids) == len(clustered):
        result[clustered] = 0.0
        return result
    sub = distances[np.ix_(clustered, clustered)]
    result[clustered] = silhouette_samples(sub, labels[clustered], metric="precomputed")
    return result


def silhouette(points: Sequence[TypicalWeek], labels: Sequence[int], distances: Optional[np.ndarray] = None) -> float:
    distances = distance_matrix(points) if distances is None else distances
    return float(np.nanmean(silhouette_values(distances, labels)))


def knee_profile(points: Sequence[TypicalWeek], k: int = None, distances: Optional[np.ndarray] = None) -> np.ndarray:
    """Ascending distances of every point to its k-th nearest neighbour."""
    k = CONFIG.cluster.knee_k if k is None else k
    if len(points) <= k:
        raise InsufficientPointsError(f"{len(points)} points cannot have a {k}-th nearest neighbour")
    distances = (distance_matrix(points) if distances is None else distances).astype(float)
    np.fill_diagonal(distances, np.inf)
    return np.sort(np.sort(distances, axis=1)[:, k - 1])


def medoid(distances: np.ndarray, labels: Sequence[int], label: int) -> int:
    """Index of the member with the smallest total distance to its cluster."""
    members = np.flatnonzero(np.asarray(labels) == label)
    totals = distances[np.ix_(members, members)].sum(axis=1)
    return int(members[np.argmin(totals)])


def cluster_sizes(labels: Sequence[int]) -> dict:
    ids, counts = np.unique(np.asarray(labels), return_counts=True)
    return {int(i): int(c) for i, c in zip(ids, counts)}


def typical_weeks(trajectories: Sequence[AbstractTrajectory]) -> List[TypicalWeek]:
    """Typical weeks of users with at least a week of history; shorter users are skipped."""
    weeks = []
    for traj in trajectories:
        try:
            weeks.append(extract_typical_week(traj))
        except InsufficientHistoryError as e:
            logger.warning(f"⚠️ Skipping user: {e}")
    return weeks
