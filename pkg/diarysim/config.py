import os
from dataclasses import dataclass, field

from dotenv import load_dotenv

load_dotenv()  # Load from .env file


def _env_int(name: str, default: int) -> int:
    value = os.getenv(name)
    return int(value) if value else default


@dataclass
class DeprConfig:
    """Exploration and preferential return constants."""
    rho: float = 0.6
    gamma: float = 0.21

    def __post_init__(self):
        if not 0 < self.rho <= 1:
            raise ValueError(f"rho must lie in (0, 1], got {self.rho}")
        if self.gamma < 0:
            raise ValueError(f"gamma must be non-negative, got {self.gamma}")


@dataclass
class SwimConfig:
    alpha: float = 0.75

    def __post_init__(self):
        if not 0 <= self.alpha <= 1:
            raise ValueError(f"alpha must lie in [0, 1], got {self.alpha}")


@dataclass
class LatpConfig:
    exponent: float = 1.5

    def __post_init__(self):
        if self.exponent <= 0:
            raise ValueError(f"LATP exponent must be positive, got {self.exponent}")


@dataclass
class WaitingTimeConfig:
    """Truncated power law P(dt) ~ dt^(-1-beta) exp(-dt/tau) over [1 slot, max_hours]."""
    beta: float = 0.8
    tau_hours: float = 17.0
    max_hours: float = 168.0
    grid_points: int = 20000

    def __post_init__(self):
        if self.beta <= 0 or self.tau_hours <= 0:
            raise ValueError("beta and tau_hours must be positive")
        if self.grid_points < 2:
            raise ValueError("grid_points must be at least 2")


@dataclass
class CdrFilterConfig:
    """Location and activity filters for call records."""
    min_location_freq: float = 0.005
    min_call_rate: float = 0.5
    hours_per_day: int = 24

    def __post_init__(self):
        if not 0 <= self.min_location_freq <= 1:
            raise ValueError(f"min_location_freq must lie in [0, 1], got {self.min_location_freq}")


@dataclass
class GpsFilterConfig:
    """Trip segmentation and vehicle filters for GPS tracks."""
    stop_threshold: int = 1200
    min_trips_per_day: float = 1.0
    min_locations: int = 2
    day_window: str = "calendar"  # or "observed"
    sweep_thresholds: tuple = (300, 600, 900, 1200, 1800, 2400)

    def __post_init__(self):
        if self.stop_threshold <= 0:
            raise ValueError("stop_threshold must be positive")
        if self.day_window not in ("calendar", "observed"):
            raise ValueError(f"day_window must be 'calendar' or 'observed', got {self.day_window!r}")


@dataclass
class ClusterConfig:
    eps: float = 70.0
    min_pts: int = 4
    knee_k: int = 4

    def __post_init__(self):
        if self.eps < 0 or self.min_pts < 1:
            raise ValueError("eps must be >= 0 and min_pts >= 1")


@dataclass
class BinningConfig:
    """Histogram and divergence settings shared by measures and evaluation."""
    n_bins: int = 20
    max_integer_bins: int = 200
    smoothing: float = 1e-12
    incomparable_mass: float = 0.5


@dataclass
class EngineConfig:
    """Agent generation settings."""
    max_home_resamples: int = 16
    visit_counting: str = "slot"  # or "trip"
    chunk_size: int = 250
    progress_log_frequency: int = 1000

    # Threading configuration
    enable_threading: bool = False
    max_workers: int = 4

    def __post_init__(self):
        if self.visit_counting not in ("slot", "trip"):
            raise ValueError(f"visit_counting must be 'slot' or 'trip', got {self.visit_counting!r}")


@dataclass
class RunConfig:
    """Main configuration."""
    slot_seconds: int = 3600
    period: int = 24

    depr: DeprConfig = field(default_factory=DeprConfig)
    swim: SwimConfig = field(default_factory=SwimConfig)
    latp: LatpConfig = field(default_factory=LatpConfig)
    waiting_time: WaitingTimeConfig = field(default_factory=WaitingTimeConfig)
    cdr: CdrFilterConfig = field(default_factory=CdrFilterConfig)
    gps: GpsFilterConfig = field(default_factory=GpsFilterConfig)
    cluster: ClusterConfig = field(default_factory=ClusterConfig)
    binning: BinningConfig = field(default_factory=BinningConfig)
    engine: EngineConfig = field(default_factory=EngineConfig)

    def __post_init__(self):
        self.engine.max_workers = _env_int("DIARYSIM_MAX_WORKERS", self.engine.max_workers)
        self.engine.chunk_size = _env_int("DIARYSIM_CHUNK_SIZE", self.engine.chunk_size)
        self.binning.n_bins = _env_int("DIARYSIM_N_BINS", self.binning.n_bins)


@dataclass
class GenerationStats:
    """Statistics tracking for agent generation."""
    total_agents: int = 0
    total_slots: int = 0
    generator_calls: int = 0
    home_resamples: int = 0
    fallbacks: int = 0

    def add_stats(self, other: 'GenerationStats'):
        """Add stats from another instance."""
        self.total_agents += other.total_agents
        self.total_slots += other.total_slots
        self.generator_calls += other.generator_calls
        self.home_resamples += other.home_resamples
        self.fallbacks += other.fallbacks

    def __str__(self) -> str:
        return (f"Stats(agents={self.total_agents}, slots={self.total_slots}, calls={self.generator_calls}, "
                f"resamples={self.home_resamples}, fallbacks={self.fallbacks})")


# Global configuration instance
CONFIG = RunConfig()
