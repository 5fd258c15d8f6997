"""Individual and collective mobility measures and their empirical distributions."""
import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from .base import EmptyDistributionError
from .config import CONFIG, BinningConfig
from .engine import SampledTrajectory
from .tessellation import WeightedTessellation, haversine_km

logger = logging.getLogger(__name__)

Population = Sequence[SampledTrajectory]


class Binning(str, Enum):
    LOG = "log"
    LINEAR = "linear"


class MeasureKind(str, Enum):
    TRIP_DISTANCE = "trip_distance"
    RADIUS_OF_GYRATION = "radius_of_gyration"
    ENTROPY = "entropy"
    TRIPS_PER_HOUR = "trips_per_hour"
    TRIPS_PER_DAY = "trips_per_day"
    STAY_TIME = "stay_time"
    VISITS_PER_LOCATION = "visits_per_location"
    LOCATIONS_PER_USER = "locations_per_user"
    LOCATION_FREQUENCY = "location_frequency"

    @property
    def binning(self) -> Binning:
        return Binning.LOG if self in HEAVY_TAILED else Binning.LINEAR


HEAVY_TAILED = {
    MeasureKind.TRIP_DISTANCE,
    MeasureKind.RADIUS_OF_GYRATION,
    MeasureKind.VISITS_PER_LOCATION,
    MeasureKind.STAY_TIME,
    MeasureKind.LOCATIONS_PER_USER,
}


@dataclass(eq=False)
class MeasureDistribution:
    """Density histogram; ``densities * widths`` sums to 1."""
    kind: MeasureKind
    binning: Binning
    edges: np.ndarray
    densities: np.ndarray
    sample_count: int
    samples: Optional[np.ndarray] = field(default=None, repr=False)
    weights: Optional[np.ndarray] = field(default=None, repr=False)

    def __post_init__(self):
        self.edges = np.asarray(self.edges, dtype=float)
        self.densities = np.asarray(self.densities, dtype=float)
        if len(self.edges) != len(self.densities) + 1 or np.any(np.diff(self.edges) <= 0):
            raise ValueError("edges must be strictly increasing with one more entry than densities")
        if np.any(self.densities < 0):
            raise ValueError("densities must be non-negative")

    @property
    def widths(self) -> np.ndarray:
        return np.diff(self.edges)

    @property
    def masses(self) -> np.ndarray:
        return self.densities * self.widths


def _location_changes(slots: np.ndarray) -> np.ndarray:
    """Indices i where slot i+1 holds a different location than slot i."""
    return np.flatnonzero(slots[1:] != slots[:-1])


def trip_distances(traj: SampledTrajectory, t: WeightedTessellation) -> np.ndarray:
    changes = _location_changes(traj.slots)
    origins, destinations = traj.slots[changes], traj.slots[changes + 1]
    if t.geographic:
        return haversine_km(t.x[origins], t.y[origins], t.x[destinations], t.y[destinations])
    return np.hypot(t.x[origins] - t.x[destinations], t.y[origins] - t.y[destinations])


def radius_of_gyration(traj: SampledTrajectory, t: WeightedTessellation) -> float:
    locations, counts = np.unique(traj.slots, return_counts=True)
    if len(locations) <= 1:
        return 0.0
    p = counts / counts.sum()
    center_x = np.average(t.x[locations], weights=p)
    center_y = np.average(t.y[locations], weights=p)
    d = t.distances_to_point(center_x, center_y)[locations]
    return float(np.sqrt(np.sum(p * d ** 2)))


def mobility_entropy(traj: SampledTrajectory) -> float:
    _, counts = np.unique(traj.slots, return_counts=True)
    if len(counts) <= 1:
        return 0.0
    p = counts / counts.sum()
    return float(-np.sum(p * np.log(p)) / np.log(len(counts)))


def location_frequency_by_rank(trajs: Population) -> np.ndarray:
    """Mean visitation fraction of each user's k-th most visited location, over users with at least k locations."""
    totals: Dict[int, float] = {}
    users: Dict[int, int] = {}
    for traj in trajs:
        if len(traj) == 0:
            continue
        _, counts = np.unique(traj.slots, return_counts=True)
        fractions = np.sort(counts)[::-1] / counts.sum()
        for rank, fraction in enumerate(fractions.tolist(), start=1):
            totals[rank] = totals.get(rank, 0.0) + fraction
            users[rank] = users.get(rank, 0) + 1
    return np.array([totals[r] / users[r] for r in range(1, len(totals) + 1)])


def visits_per_location(trajs: Population) -> Dict[int, int]:
    """Slots spent at each visited location, summed over the population."""
    visits: Dict[int, int] = {}
    for traj in trajs:
        locations, counts = np.unique(traj.slots, return_counts=True)
        for location, count in zip(locations.tolist(), counts.tolist()):
            visits[location] = visits.get(location, 0) + count
    return dict(sorted(visits.items()))


def locations_per_user(trajs: Population) -> np.ndarray:
    return np.array([len(np.unique(traj.slots)) for traj in trajs], dtype=np.int64)


def trips_per_hour(trajs: Population) -> np.ndarray:
    """Trips by hour of day of arrival; slot 0 starts at midnight."""
    hours = np.zeros(24, dtype=np.int64)
    for traj in trajs:
        arrivals = (_location_changes(traj.slots) + 1) * traj.slot_seconds
        hours += np.bincount((arrivals // 3600) % 24, minlength=24)
    return hours


def trips_per_day(trajs: Population) -> np.ndarray:
    """Trip count of every user on every day their trajectory spans, zero-trip days included."""
    per_day = []
    for traj in trajs:
        if len(traj) == 0:
            continue
        n_days = (len(traj) - 1) * traj.slot_seconds // 86400 + 1
        arrivals = (_location_changes(traj.slots) + 1) * traj.slot_seconds
        per_day.append(np.bincount(arrivals // 86400, minlength=n_days)[:n_days])
    return np.concatenate(per_day) if per_day else np.zeros(0, dtype=np.int64)


def stay_times(trajs: Population) -> np.ndarray:
    """Length in hours of every maximal run at one location."""
    stays = []
    for traj in trajs:
        if len(traj) == 0:
            continue
        boundaries = np.r_[0, _location_changes(traj.slots) + 1, len(traj)]
        stays.append(np.diff(boundaries) * traj.slot_seconds / 3600.0)
    return np.concatenate(stays) if stays else np.zeros(0)


def bin_edges(binning: Binning, low: float, high: float, integral: bool, config: BinningConfig = None) -> np.ndarray:
    config = config or CONFIG.binning
    if binning is Binning.LOG:
        if low == high:
            return np.array([low / np.sqrt(2.0), low * np.sqrt(2.0)])
        return np.geomspace(low, high, config.n_bins + 1)
    if integral and high - low <= config.max_integer_bins:
        return np.arange(low, high + 2.0) - 0.5
    if low == high:
        return np.array([low - 0.5, low + 0.5])
    return np.linspace(low, high, config.n_bins + 1)


def histogram(values: np.ndarray, weights: Optional[np.ndarray], edges: np.ndarray) -> np.ndarray:
    """Density over ``edges``; values outside them are ignored."""
    counts, _ = np.histogram(values, bins=edges, weights=weights)
    total = counts.sum()
    if total <= 0:
        return np.zeros(len(edges) - 1)
    return counts / (total * np.diff(edges))


def _usable(samples, weights, binning: Binning) -> Tuple[np.ndarray, Optional[np.ndarray]]:
    values = np.asarray(samples, dtype=float).reshape(-1)
    w = None if weights is None else np.asarray(weights, dtype=float).reshape(-1)
    keep = np.isfinite(values)
    if binning is Binning.LOG:
        keep &= values > 0
    if w is not None:
        keep &= w > 0
    return values[keep], (None if w is None else w[keep])


def build_distribution(samples, kind: MeasureKind, binning: Optional[Binning] = None, weights=None,
                       config: BinningConfig = None) -> MeasureDistribution:
    """Normalized histogram. Log binning ignores non-positive samples."""
    binning = Binning(binning) if binning is not None else MeasureKind(kind).binning
    values, w = _usable(samples, weights, binning)
    if len(values) == 0:
        raise EmptyDistributionError(f"no usable samples for {MeasureKind(kind).value}")
    integral = bool(np.all(values == np.round(values)))
    edges = bin_edges(binning, float(values.min()), float(values.max()), integral, config)
    return MeasureDistribution(
        kind=MeasureKind(kind), binning=binning, edges=edges, densities=histogram(values, w, edges),
        sample_count=len(values), samples=values, weights=w,
    )


def ccdf(samples) -> Tuple[np.ndarray, np.ndarray]:
    """Distinct sample values and P(X >= x) for each."""
    values = np.sort(np.asarray(samples, dtype=float).reshape(-1))
    if len(values) == 0:
        raise EmptyDistributionError("no samples for a CCDF")
    distinct, first = np.unique(values, return_index=True)
    return distinct, 1.0 - first / len(values)


def measure_samples(kind: MeasureKind, trajs: Population, t: WeightedTessellation) -> Tuple[np.ndarray, Optional[np.ndarray]]:
    """(samples, weights) feeding the distribution of one measure."""
    kind = MeasureKind(kind)
    if kind is MeasureKind.TRIP_DISTANCE:
        parts = [trip_distances(traj, t) for traj in trajs]
        return (np.concatenate(parts) if parts else np.zeros(0)), None
    if kind is MeasureKind.RADIUS_OF_GYRATION:
        return np.array([radius_of_gyration(traj, t) for traj in trajs]), None
    if kind is MeasureKind.ENTROPY:
        return np.array([mobility_entropy(traj) for traj in trajs]), None
    if kind is MeasureKind.TRIPS_PER_HOUR:
        return np.arange(24, dtype=float), trips_per_hour(trajs).astype(float)
    if kind is MeasureKind.TRIPS_PER_DAY:
        return trips_per_day(trajs).astype(float), None
    if kind is MeasureKind.STAY_TIME:
        return stay_times(trajs), None
    if kind is MeasureKind.VISITS_PER_LOCATION:
        return np.array(list(visits_per_location(trajs).values()), dtype=float), None
    if kind is MeasureKind.LOCATIONS_PER_USER:
        return locations_per_user(trajs).astype(float), None
    frequencies = location_frequency_by_rank(trajs)
    return np.arange(1, len(frequencies) + 1, dtype=float), frequencies


def compute_all(trajs: Population, t: WeightedTessellation,
                kinds: Sequence[MeasureKind] = tuple(MeasureKind)) -> Dict[MeasureKind, Tuple[np.ndarray, Optional[np.ndarray]]]:
    return {MeasureKind(kind): measure_samples(kind, trajs, t) for kind in kinds}


def summarize(samples: Dict[MeasureKind, Tuple[np.ndarray, Optional[np.ndarray]]]) -> dict:
    """Sample count and mean per measure, weighted where the measure carries weights."""
    summary = {}
    for kind, (values, weights) in samples.items():
        if len(values) == 0 or (weights is not None and weights.sum() <= 0):
            summary[kind.value] = {"count": 0, "mean": None}
            continue
        # trips per hour is stored as 24 weighted hour samples; report trips
        count = len(values) if weights is None or kind is MeasureKind.LOCATION_FREQUENCY else round(weights.sum())
        summary[kind.value] = {"count": int(count), "mean": float(np.average(values, weights=weights))}
    return summary


def distribution_frame(distribution: MeasureDistribution) -> pd.DataFrame:
    return pd.DataFrame({
        "bin_left": distribution.edges[:-1],
        "bin_right": distribution.edges[1:],
        "density": distribution.densities,
    })
