import logging
from dataclasses import dataclass
from typing import Callable, Dict, Hashable, Iterable, List, Mapping, Sequence, Set

import numpy as np

from ..config import CONFIG, GpsFilterConfig
from ..tessellation import WeightedTessellation
from .filters import SECONDS_PER_DAY
from .records import RawRecord, coordinate_key

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class Trip:
    """A maximal run of GPS fixes with no gap above the stop threshold."""
    origin: RawRecord
    destination: RawRecord

    @property
    def start_time(self) -> int:
        return self.origin.timestamp

    @property
    def end_time(self) -> int:
        return self.destination.timestamp


def segment_gps_trips(points: Sequence[RawRecord], stop_threshold: int) -> List[Trip]:
    """Split a time-sorted track wherever consecutive fixes are more than stop_threshold apart."""
    if stop_threshold <= 0:
        raise ValueError(f"stop_threshold must be positive, got {stop_threshold}")
    if len(points) < 2:
        return []

    trips = []
    start = points[0]
    for previous, current in zip(points, points[1:]):
        if current.timestamp - previous.timestamp > stop_threshold:
            trips.append(Trip(start, previous))
            start = current
    trips.append(Trip(start, points[-1]))
    return trips


def stop_threshold_sweep(points_by_vehicle: Mapping[str, Sequence[RawRecord]], thresholds: Iterable[int] = None) -> Dict[int, int]:
    """Total trip count across vehicles for each candidate stop threshold."""
    thresholds = thresholds or CONFIG.gps.sweep_thresholds
    return {
        threshold: sum(len(segment_gps_trips(points, threshold)) for points in points_by_vehicle.values())
        for threshold in sorted(thresholds)
    }


def snap_to_tessellation(x: float, y: float, t: WeightedTessellation) -> int:
    """Nearest centroid id, ties broken by the smaller id."""
    return int(t.nearest([x], [y])[0])


def snapped_key(records: Iterable[RawRecord], t: WeightedTessellation) -> Callable[[RawRecord], Hashable]:
    """Record → location id lookup, snapping every distinct coordinate pair once."""
    coords = sorted({(r.x, r.y) for r in records})
    if not coords:
        return lambda record: None
    xs, ys = zip(*coords)
    ids = t.nearest(np.array(xs), np.array(ys))
    lookup = {c: int(i) for c, i in zip(coords, ids)}
    return lambda record: lookup[(record.x, record.y)]


def trips_to_records(trips: Sequence[Trip]) -> List[RawRecord]:
    """Stop observations implied by trips: each origin at departure, each destination at arrival."""
    records = []
    for trip in trips:
        records.append(trip.origin)
        if trip.destination != trip.origin:
            records.append(trip.destination)
    return records


def filter_active_vehicles(
    trips_by_vehicle: Mapping[str, List[Trip]],
    config: GpsFilterConfig = None,
    key: Callable[[RawRecord], Hashable] = coordinate_key,
) -> Set[str]:
    """Vehicles with enough distinct stop locations and enough trips per day.

    Trips per day are averaged over the calendar days of the whole observation
    period (``day_window="calendar"``) or over the days the vehicle was seen.
    """
    config = config or CONFIG.gps
    populated = [trips for trips in trips_by_vehicle.values() if trips]
    if not populated:
        return set()
    first_day = min(trips[0].start_time for trips in populated) // SECONDS_PER_DAY
    last_day = max(trips[-1].end_time for trips in populated) // SECONDS_PER_DAY
    calendar_days = last_day - first_day + 1

    kept = set()
    for vehicle, trips in trips_by_vehicle.items():
        if not trips:
            continue
        locations = {key(r) for r in trips_to_records(trips)}
        if config.day_window == "calendar":
            days = calendar_days
        else:
            days = len({t.start_time // SECONDS_PER_DAY for t in trips} | {t.end_time // SECONDS_PER_DAY for t in trips})
        if len(locations) >= config.min_locations and len(trips) / days >= config.min_trips_per_day:
            kept.add(vehicle)
    logger.info(f"📋 GPS filters: kept {len(kept)}/{len(trips_by_vehicle)} vehicles ({config.day_window} days)")
    return kept
