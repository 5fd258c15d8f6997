"""Weighted spatial tessellation: centroids with relevance, distances, gravity matrix."""
import logging
from dataclasses import dataclass
from functools import cached_property, lru_cache
from typing import Tuple

import numpy as np
import pandas as pd

from .base import DegenerateDistanceError, EmptyRelevanceError, MalformedRecordError
from .utils import weighted_choice

logger = logging.getLogger(__name__)

EARTH_RADIUS_KM = 6371.0088
GRAVITY_BLOCK_ROWS = 512
SNAP_BLOCK_POINTS = 4096
# cumulative rows kept per matrix or generator
ROW_CACHE_SIZE = 1024


def haversine_km(lat1, lon1, lat2, lon2) -> np.ndarray:
    """Great-circle distance in kilometers; broadcasts over numpy arrays."""
    lat1, lon1, lat2, lon2 = (np.radians(np.asarray(v, dtype=float)) for v in (lat1, lon1, lat2, lon2))
    a = np.sin((lat2 - lat1) / 2.0) ** 2 + np.cos(lat1) * np.cos(lat2) * np.sin((lon2 - lon1) / 2.0) ** 2
    return 2.0 * EARTH_RADIUS_KM * np.arcsin(np.sqrt(np.clip(a, 0.0, 1.0)))


@dataclass(frozen=True, eq=False)
class WeightedTessellation:
    """Centroids of the tessellation cells.

    Location ids are the positions 0..n-1. For geographic tessellations
    ``x`` is latitude and ``y`` longitude, in degrees; planar coordinates are
    interpreted as kilometers.
    """
    x: np.ndarray
    y: np.ndarray
    relevance: np.ndarray
    geographic: bool = True

    def __post_init__(self):
        x = np.asarray(self.x, dtype=float)
        y = np.asarray(self.y, dtype=float)
        relevance = np.asarray(self.relevance, dtype=float)
        if not (x.shape == y.shape == relevance.shape) or x.ndim != 1:
            raise ValueError("x, y and relevance must be 1-D arrays of equal length")
        if len(x) < 2:
            raise ValueError(f"a tessellation needs at least 2 locations, got {len(x)}")
        if np.any(relevance < 0) or not np.all(np.isfinite(relevance)):
            raise ValueError("relevance values must be finite and non-negative")
        if not np.any(relevance > 0):
            raise EmptyRelevanceError("all location relevances are zero")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "relevance", relevance)

    def __len__(self) -> int:
        return len(self.x)

    def check_id(self, location: int) -> int:
        if not 0 <= location < len(self):
            raise IndexError(f"location id {location} outside [0, {len(self)})")
        return int(location)

    def distances_from(self, location: int) -> np.ndarray:
        """Distances in km from one location to every location."""
        self.check_id(location)
        return self.distances_to_point(self.x[location], self.y[location])

    def distances_to_point(self, x: float, y: float) -> np.ndarray:
        if self.geographic:
            return haversine_km(x, y, self.x, self.y)
        return np.hypot(self.x - x, self.y - y)

    def nearest(self, xs, ys) -> np.ndarray:
        """Nearest centroid id for each point; ties resolve to the smaller id."""
        xs = np.atleast_1d(np.asarray(xs, dtype=float))
        ys = np.atleast_1d(np.asarray(ys, dtype=float))
        result = np.empty(len(xs), dtype=np.int64)
        for start in range(0, len(xs), SNAP_BLOCK_POINTS):
            bx = xs[start:start + SNAP_BLOCK_POINTS, None]
            by = ys[start:start + SNAP_BLOCK_POINTS, None]
            if self.geographic:
                d = haversine_km(bx, by, self.x[None, :], self.y[None, :])
            else:
                d = np.hypot(self.x[None, :] - bx, self.y[None, :] - by)
            # argmin returns the first minimum, i.e. the smallest id
            result[start:start + SNAP_BLOCK_POINTS] = np.argmin(d, axis=1)
        return result

    @cached_property
    def relevance_cdf(self) -> np.ndarray:
        return np.cumsum(self.relevance)


@dataclass(frozen=True, eq=False)
class GravityMatrix:
    """Globally normalized trip probabilities p_ij ~ r_i r_j / d_ij^2 with a zero diagonal."""
    probs: np.ndarray
    cache_rows: int = ROW_CACHE_SIZE

    def __post_init__(self):
        # row_cdf(location): cumulative sum of one row, the most recently used cache_rows rows kept
        object.__setattr__(self, "row_cdf", lru_cache(maxsize=self.cache_rows)(self._cumulative_row))

    def _cumulative_row(self, location: int) -> np.ndarray:
        return np.cumsum(self.probs[location])


def distance(a: int, b: int, t: WeightedTessellation) -> float:
    """Distance in kilometers between two locations (haversine or Euclidean)."""
    t.check_id(a)
    t.check_id(b)
    if a == b:
        return 0.0
    if t.geographic:
        return float(haversine_km(t.x[a], t.y[a], t.x[b], t.y[b]))
    return float(np.hypot(t.x[a] - t.x[b], t.y[a] - t.y[b]))


def build_gravity_matrix(t: WeightedTessellation) -> GravityMatrix:
    """Dense gravity matrix, built in row blocks to bound temporary memory."""
    n = len(t)
    logger.info(f"🔗 Building gravity matrix for {n} locations")
    weights = np.empty((n, n), dtype=float)

    for start in range(0, n, GRAVITY_BLOCK_ROWS):
        stop = min(start + GRAVITY_BLOCK_ROWS, n)
        rows = np.arange(start, stop)
        if t.geographic:
            d = haversine_km(t.x[rows, None], t.y[rows, None], t.x[None, :], t.y[None, :])
        else:
            d = np.hypot(t.x[rows, None] - t.x[None, :], t.y[rows, None] - t.y[None, :])
        d[rows - start, rows] = np.inf
        if np.any(d == 0):
            i, j = np.argwhere(d == 0)[0]
            raise DegenerateDistanceError(
                f"locations {start + i} and {j} share coordinates; merge coincident locations first"
            )
        weights[start:stop] = t.relevance[rows, None] * t.relevance[None, :] / d ** 2

    z = weights.sum()
    if z <= 0:
        raise EmptyRelevanceError("fewer than two locations have positive relevance")
    weights /= z
    return GravityMatrix(probs=weights)


def sample_by_relevance(t: WeightedTessellation, rng: np.random.Generator) -> int:
    """Location id drawn with probability r_j / sum(r)."""
    cdf = t.relevance_cdf
    return int(np.searchsorted(cdf, rng.random() * cdf[-1], side="right"))


def sample_by_relevance_excluding(t: WeightedTessellation, excluded: int, rng: np.random.Generator) -> int:
    """Relevance-weighted draw over every location except ``excluded``."""
    weights = t.relevance.copy()
    weights[excluded] = 0.0
    if not np.any(weights > 0):
        weights = np.ones(len(t))
        weights[excluded] = 0.0
        logger.debug(f"⚠️ No relevance outside location {excluded}, drawing uniformly")
    return weighted_choice(rng, weights)


def merge_coincident(t: WeightedTessellation) -> Tuple[WeightedTessellation, np.ndarray]:
    """Collapse locations sharing coordinates onto the smallest id, summing relevances.

    Returns the merged tessellation and an array mapping each old id to its new id.
    """
    coords = np.column_stack([t.x, t.y])
    _, first_index, inverse = np.unique(coords, axis=0, return_index=True, return_inverse=True)
    inverse = np.asarray(inverse).reshape(-1)
    order = np.argsort(first_index)
    rank = np.empty(len(order), dtype=np.int64)
    rank[order] = np.arange(len(order))
    remap = rank[inverse]
    keep = first_index[order]
    relevance = np.bincount(remap, weights=t.relevance, minlength=len(keep))
    merged_count = len(t) - len(keep)
    if merged_count:
        logger.info(f"🔗 Merged {merged_count} coincident locations ({len(t)} → {len(keep)})")
    return WeightedTessellation(t.x[keep], t.y[keep], relevance, geographic=t.geographic), remap


def _coordinate_columns(planar: bool) -> Tuple[str, str]:
    return ("x", "y") if planar else ("lat", "lon")


def load_tessellation(path: str, planar: bool = False) -> WeightedTessellation:
    """Read ``location_id,lat,lon,relevance`` (or ``location_id,x,y,relevance``)."""
    cx, cy = _coordinate_columns(planar)
    frame = pd.read_csv(path, dtype=str, keep_default_na=False)
    expected = ["location_id", cx, cy, "relevance"]
    missing = [c for c in expected if c not in frame.columns]
    if missing:
        raise MalformedRecordError(path, 1, f"missing columns {missing}")

    numeric = frame[expected].apply(pd.to_numeric, errors="coerce")
    bad = numeric.isna().any(axis=1).to_numpy()
    if bad.any():
        row = int(np.argmax(bad))
        raise MalformedRecordError(path, row + 2, "non-numeric field")

    ids = numeric["location_id"].to_numpy()
    if not np.array_equal(np.sort(ids), np.arange(len(ids))):
        raise MalformedRecordError(path, 1, "location ids must be unique and contiguous from 0")
    if (numeric["relevance"] < 0).any():
        row = int(np.argmax((numeric["relevance"] < 0).to_numpy()))
        raise MalformedRecordError(path, row + 2, "negative relevance")
    numeric = numeric.sort_values("location_id")
    return WeightedTessellation(
        numeric[cx].to_numpy(), numeric[cy].to_numpy(), numeric["relevance"].to_numpy(), geographic=not planar
    )


def write_tessellation(t: WeightedTessellation, path: str) -> None:
    cx, cy = _coordinate_columns(not t.geographic)
    frame = pd.DataFrame({"location_id": np.arange(len(t)), cx: t.x, cy: t.y, "relevance": t.relevance})
    frame.to_csv(path, index=False)
