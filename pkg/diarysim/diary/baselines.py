import logging
from functools import lru_cache
from typing import Tuple

import numpy as np
from scipy.integrate import cumulative_trapezoid

from ..config import CONFIG, WaitingTimeConfig
from .language import DiaryToken, MobilityDiary

logger = logging.getLogger(__name__)


def rd_generate(n_slots: int, slot_seconds: int = 3600) -> MobilityDiary:
    """A trip in every slot."""
    if n_slots < 1:
        raise ValueError(f"n_slots must be at least 1, got {n_slots}")
    return MobilityDiary((DiaryToken.NON_ROUTINE.value + DiaryToken.SEPARATOR.value) * n_slots, slot_seconds)


def waiting_time_density(hours: np.ndarray, beta: float, tau_hours: float) -> np.ndarray:
    """Unnormalized dt^(-1-beta) exp(-dt/tau)."""
    return hours ** (-1.0 - beta) * np.exp(-hours / tau_hours)


@lru_cache(maxsize=32)
def _inverse_cdf_table(beta: float, tau_hours: float, low: float, high: float, points: int) -> Tuple[np.ndarray, np.ndarray]:
    grid = np.geomspace(low, high, points)
    cdf = cumulative_trapezoid(waiting_time_density(grid, beta, tau_hours), grid, initial=0.0)
    return cdf / cdf[-1], grid


def sample_waiting_times(n: int, slot_seconds: int, rng: np.random.Generator, config: WaitingTimeConfig = None) -> np.ndarray:
    """Stay durations in hours by inverse transform over [1 slot, max_hours]."""
    config = config or CONFIG.waiting_time
    slot_hours = slot_seconds / 3600.0
    high = max(config.max_hours, slot_hours * 1.000001)
    cdf, grid = _inverse_cdf_table(config.beta, config.tau_hours, slot_hours, high, config.grid_points)
    return np.interp(rng.random(n), cdf, grid)


def wt_generate(n_slots: int, slot_seconds: int, rng: np.random.Generator, config: WaitingTimeConfig = None) -> MobilityDiary:
    """Consecutive stays of power-law-with-cutoff duration, each ending in a trip."""
    if n_slots < 1:
        raise ValueError(f"n_slots must be at least 1, got {n_slots}")
    # at most one stay per slot is ever needed
    stays = np.maximum(1, np.rint(sample_waiting_times(n_slots, slot_seconds, rng, config) * 3600.0 / slot_seconds))
    pieces = []
    emitted = 0
    zero = DiaryToken.NON_ROUTINE.value
    separator = DiaryToken.SEPARATOR.value
    for stay in stays.astype(np.int64).tolist():
        stay = min(stay, n_slots - emitted)
        pieces.append(zero * stay + separator)
        emitted += stay
        if emitted == n_slots:
            break
    return MobilityDiary("".join(pieces), slot_seconds)
