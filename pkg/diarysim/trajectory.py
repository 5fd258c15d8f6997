"""Next-location choice for non-routine runs: d-EPR, SWIM and LATP."""
import logging
from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Dict, Iterable, Optional

import numpy as np

from .base import DegenerateDistanceError
from .config import CONFIG, DeprConfig, LatpConfig, SwimConfig
from .tessellation import ROW_CACHE_SIZE, GravityMatrix, WeightedTessellation, sample_by_relevance_excluding
from .utils import weighted_choice

logger = logging.getLogger(__name__)


@dataclass
class AgentSpatialState:
    """Where an agent is and how often it has been everywhere it has been."""
    home: int
    current: int
    visit_counts: Dict[int, int] = field(default_factory=dict)

    def __post_init__(self):
        if not self.visit_counts:
            self.visit_counts = {self.current: 1}
        if self.current not in self.visit_counts:
            raise ValueError(f"current location {self.current} has no recorded visit")

    @classmethod
    def at_home(cls, home: int) -> "AgentSpatialState":
        return cls(home=home, current=home, visit_counts={home: 1})

    @property
    def distinct_count(self) -> int:
        return len(self.visit_counts)

    def visit(self, location: int, times: int = 1) -> None:
        self.visit_counts[location] = self.visit_counts.get(location, 0) + times
        self.current = location


class TrajectoryGenerator(ABC):
    """Chooses the location of the next non-routine run."""

    def __init__(self, tessellation: WeightedTessellation):
        self.tessellation = tessellation

    @abstractmethod
    def next_location(self, state: AgentSpatialState, rng: np.random.Generator) -> int:
        pass

    @abstractmethod
    def candidate_weights(self, state: AgentSpatialState) -> np.ndarray:
        """Unnormalized choice weights over all locations, as used for exploration."""
        pass

    def best_candidate(self, state: AgentSpatialState, excluded: Iterable[int]) -> Optional[int]:
        """Highest-weight location outside ``excluded``; ties resolve to the smaller id."""
        excluded = list(excluded)
        for weights in (self.candidate_weights(state), self.tessellation.relevance):
            masked = np.array(weights, dtype=float)
            masked[excluded] = -np.inf
            best = int(np.argmax(masked))
            if masked[best] > 0:
                return best
        remaining = sorted(set(range(len(self.tessellation))) - set(excluded))
        return remaining[0] if remaining else None

    def _relevance_fallback(self, state: AgentSpatialState, rng: np.random.Generator) -> int:
        logger.debug(f"⚠️ No choice weight outside location {state.current}, falling back to relevance")
        return sample_by_relevance_excluding(self.tessellation, state.current, rng)


class DeprGenerator(TrajectoryGenerator):
    """Explore with probability rho * N^-gamma via the gravity row, otherwise return by visit frequency."""

    def __init__(self, tessellation: WeightedTessellation, gravity: GravityMatrix, config: DeprConfig = None):
        super().__init__(tessellation)
        self.gravity = gravity
        self.config = config or CONFIG.depr

    def exploration_probability(self, distinct_count: int) -> float:
        return self.config.rho * max(1, distinct_count) ** (-self.config.gamma)

    def next_location(self, state: AgentSpatialState, rng: np.random.Generator) -> int:
        if rng.random() < self.exploration_probability(state.distinct_count):
            return self.explore(state, rng)
        return self.prefer_return(state, rng)

    def explore(self, state: AgentSpatialState, rng: np.random.Generator) -> int:
        cdf = self.gravity.row_cdf(state.current)
        if cdf[-1] <= 0:
            return self._relevance_fallback(state, rng)
        return int(np.searchsorted(cdf, rng.random() * cdf[-1], side="right"))

    def prefer_return(self, state: AgentSpatialState, rng: np.random.Generator) -> int:
        candidates = [loc for loc in state.visit_counts if loc != state.current]
        if not candidates:
            # nothing to return to yet
            return self.explore(state, rng)
        weights = np.array([state.visit_counts[loc] for loc in candidates], dtype=float)
        return candidates[weighted_choice(rng, weights)]

    def candidate_weights(self, state: AgentSpatialState) -> np.ndarray:
        return self.gravity.probs[state.current]


class SwimGenerator(TrajectoryGenerator):
    """Weights mix a distance-to-home kernel with min-max normalized relevance."""

    def __init__(self, tessellation: WeightedTessellation, config: SwimConfig = None, cache_rows: int = ROW_CACHE_SIZE):
        super().__init__(tessellation)
        self.config = config or CONFIG.swim
        relevance = tessellation.relevance
        spread = relevance.max() - relevance.min()
        self.scaled_relevance = (relevance - relevance.min()) / spread if spread > 0 else np.ones_like(relevance)
        self.home_weights = lru_cache(maxsize=cache_rows)(self._home_weights)

    def _home_weights(self, home: int) -> np.ndarray:
        kernel = 1.0 / (1.0 + self.tessellation.distances_from(home)) ** 2
        return self.config.alpha * kernel + (1.0 - self.config.alpha) * self.scaled_relevance

    def candidate_weights(self, state: AgentSpatialState) -> np.ndarray:
        return self.home_weights(state.home)

    def next_location(self, state: AgentSpatialState, rng: np.random.Generator) -> int:
        weights = self.home_weights(state.home).copy()
        weights[state.current] = 0.0
        if not np.any(weights > 0):
            return self._relevance_fallback(state, rng)
        return weighted_choice(rng, weights)


class LatpGenerator(TrajectoryGenerator):
    """Weights decay as distance(current, L)^-a; locations coincident with current are excluded."""

    def __init__(self, tessellation: WeightedTessellation, config: LatpConfig = None, cache_rows: int = ROW_CACHE_SIZE):
        super().__init__(tessellation)
        self.config = config or CONFIG.latp
        self.origin_cdf = lru_cache(maxsize=cache_rows)(self._origin_cdf)

    def origin_weights(self, origin: int) -> np.ndarray:
        d = self.tessellation.distances_from(origin)
        weights = np.zeros_like(d)
        positive = d > 0
        weights[positive] = d[positive] ** (-self.config.exponent)
        return weights

    def candidate_weights(self, state: AgentSpatialState) -> np.ndarray:
        return self.origin_weights(state.current)

    def _origin_cdf(self, origin: int) -> np.ndarray:
        weights = self.origin_weights(origin)
        if not np.any(weights > 0):
            raise DegenerateDistanceError(f"every location coincides with location {origin}")
        return np.cumsum(weights)

    def next_location(self, state: AgentSpatialState, rng: np.random.Generator) -> int:
        cdf = self.origin_cdf(state.current)
        return int(np.searchsorted(cdf, rng.random() * cdf[-1], side="right"))


def depr_next(state: AgentSpatialState, gravity: GravityMatrix, rho: float, gamma: float, rng: np.random.Generator,
              tessellation: WeightedTessellation) -> int:
    return DeprGenerator(tessellation, gravity, DeprConfig(rho=rho, gamma=gamma)).next_location(state, rng)


def swim_next(state: AgentSpatialState, t: WeightedTessellation, alpha: float, rng: np.random.Generator) -> int:
    return SwimGenerator(t, SwimConfig(alpha=alpha)).next_location(state, rng)


def latp_next(state: AgentSpatialState, t: WeightedTessellation, exponent: float, rng: np.random.Generator) -> int:
    return LatpGenerator(t, LatpConfig(exponent=exponent)).next_location(state, rng)
