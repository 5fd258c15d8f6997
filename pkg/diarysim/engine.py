"""Composition loop: a diary generator decides when agents move, a trajectory generator decides where."""
import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, List, Optional, Sequence, Set, Tuple

import numpy as np
import pandas as pd

from .base import AgentBatchProcessor, ConfigError, ConfigMismatchError, DiarySimError, GenerationError, MalformedRecordError
from .config import CONFIG, DeprConfig, EngineConfig, GenerationStats, LatpConfig, SwimConfig, WaitingTimeConfig
from .diary import MarkovDiaryModel, MobilityDiary, TypicalDiary, md_generate, rd_generate, wt_generate
from .tessellation import GravityMatrix, WeightedTessellation, build_gravity_matrix, sample_by_relevance
from .trajectory import AgentSpatialState, DeprGenerator, LatpGenerator, SwimGenerator, TrajectoryGenerator
from .utils import agent_rng, weighted_choice

logger = logging.getLogger(__name__)

DiaryGenerator = Callable[[np.random.Generator, int], MobilityDiary]


class DiaryKind(str, Enum):
    MD = "md"
    RD = "rd"
    WT = "wt"


class TrajectoryKind(str, Enum):
    DEPR = "depr"
    SWIM = "swim"
    LATP = "latp"


@dataclass(eq=False)
class SampledTrajectory:
    """Physical location id per slot for one agent."""
    agent: int
    slot_seconds: int
    slots: np.ndarray

    def __post_init__(self):
        self.slots = np.asarray(self.slots, dtype=np.int64)

    def __len__(self) -> int:
        return len(self.slots)

    def __eq__(self, other) -> bool:
        return (isinstance(other, SampledTrajectory) and self.agent == other.agent
                and self.slot_seconds == other.slot_seconds and np.array_equal(self.slots, other.slots))


@dataclass
class SimulationConfig:
    n_agents: int
    n_slots: int
    slot_seconds: int = 3600
    diary_kind: DiaryKind = DiaryKind.MD
    trajectory_kind: TrajectoryKind = TrajectoryKind.DEPR
    seed: int = 0
    depr: DeprConfig = field(default_factory=lambda: CONFIG.depr)
    swim: SwimConfig = field(default_factory=lambda: CONFIG.swim)
    latp: LatpConfig = field(default_factory=lambda: CONFIG.latp)
    waiting_time: WaitingTimeConfig = field(default_factory=lambda: CONFIG.waiting_time)
    engine: EngineConfig = field(default_factory=lambda: CONFIG.engine)

    def __post_init__(self):
        if self.n_agents < 1:
            raise ConfigError(f"n_agents must be at least 1, got {self.n_agents}")
        if self.n_slots < 1:
            raise ConfigError(f"n_slots must be at least 1, got {self.n_slots}")
        if self.slot_seconds <= 0:
            raise ConfigError(f"slot_seconds must be positive, got {self.slot_seconds}")
        try:
            self.diary_kind = DiaryKind(self.diary_kind)
            self.trajectory_kind = TrajectoryKind(self.trajectory_kind)
        except ValueError as e:
            raise ConfigError(str(e))


def make_diary_generator(config: SimulationConfig, model: Optional[MarkovDiaryModel] = None) -> DiaryGenerator:
    if config.diary_kind is DiaryKind.MD:
        if model is None:
            raise ConfigError("the md diary needs a learned model")
        if model.slot_seconds != config.slot_seconds:
            raise ConfigMismatchError(
                f"model uses {model.slot_seconds}-second slots but the run asks for {config.slot_seconds}"
            )
        return lambda rng, n: md_generate(model, n, rng)
    if config.diary_kind is DiaryKind.RD:
        return lambda rng, n: rd_generate(n, config.slot_seconds)
    return lambda rng, n: wt_generate(n, config.slot_seconds, rng, config.waiting_time)


def make_trajectory_generator(config: SimulationConfig, t: WeightedTessellation,
                              gravity: Optional[GravityMatrix] = None) -> TrajectoryGenerator:
    if config.trajectory_kind is TrajectoryKind.DEPR:
        return DeprGenerator(t, gravity if gravity is not None else build_gravity_matrix(t), config.depr)
    if config.trajectory_kind is TrajectoryKind.SWIM:
        return SwimGenerator(t, config.swim)
    return LatpGenerator(t, config.latp)


def materialize_typical_diary(typical: TypicalDiary, t: WeightedTessellation, rng: np.random.Generator,
                              n_slots: Optional[int] = None) -> np.ndarray:
    """Physical location per slot; each distinct abstract location gets one relevance-weighted draw."""
    n_slots = n_slots or len(typical.slots)
    physical = {}
    for abstract in typical.slots.tolist():
        if abstract not in physical:
            physical[abstract] = sample_by_relevance(t, rng)
    mapped = np.array([physical[a] for a in typical.slots.tolist()], dtype=np.int64)
    return np.resize(mapped, n_slots)


class AgentSimulator:
    """Generates one agent at a time from shared, read-only generators."""

    def __init__(self, diary_gen: DiaryGenerator, traj_gen: TrajectoryGenerator, t: WeightedTessellation,
                 config: SimulationConfig, typicals: Sequence[TypicalDiary] = None,
                 typical_weights: Sequence[float] = None):
        self.diary_gen = diary_gen
        self.traj_gen = traj_gen
        self.tessellation = t
        self.config = config
        self.typicals = list(typicals) if typicals else [TypicalDiary.constant()]
        self.typical_weights = np.asarray(typical_weights if typical_weights is not None else np.ones(len(self.typicals)), dtype=float)
        if len(self.typical_weights) != len(self.typicals) or not np.any(self.typical_weights > 0):
            raise ConfigError("typical diary weights must match the diaries and include a positive weight")
        self.per_trip = config.engine.visit_counting == "trip"

    def simulate(self, agent: int) -> Tuple[SampledTrajectory, GenerationStats]:
        stats = GenerationStats(total_agents=1)
        n_slots = self.config.n_slots
        rng = agent_rng(self.config.seed, agent)

        typical = self.typicals[weighted_choice(rng, self.typical_weights) if len(self.typicals) > 1 else 0]
        routine_locations = materialize_typical_diary(typical, self.tessellation, rng, n_slots)
        diary = self.diary_gen(rng, n_slots)
        if diary.slot_count != n_slots:
            raise GenerationError(agent, 0, ValueError(f"diary has {diary.slot_count} slots, expected {n_slots}"))

        state = AgentSpatialState.at_home(int(routine_locations[0]))
        slots = np.empty(n_slots, dtype=np.int64)
        position = 0
        for is_routine, length in diary.runs():
            if is_routine:
                segment = routine_locations[position:position + length]
                slots[position:position + length] = segment
                if typical.is_constant:
                    state.visit(int(segment[0]), 1 if self.per_trip else length)
                else:
                    for location in segment.tolist():
                        state.visit(location)
            else:
                typical_here = set(routine_locations[position:position + length].tolist())
                location = self._choose(agent, position, state, typical_here, rng, stats)
                slots[position:position + length] = location
                state.visit(location, 1 if self.per_trip else length)
            position += length

        stats.total_slots = n_slots
        return SampledTrajectory(agent, self.config.slot_seconds, slots), stats

    def _choose(self, agent: int, slot: int, state: AgentSpatialState, excluded: Set[int],
                rng: np.random.Generator, stats: GenerationStats) -> int:
        """Location for a non-routine run; it must differ from the typical location of every slot the run covers."""
        stats.generator_calls += 1
        try:
            location = self.traj_gen.next_location(state, rng)
            for _ in range(self.config.engine.max_home_resamples):
                if location not in excluded:
                    return location
                stats.home_resamples += 1
                location = self.traj_gen.next_location(state, rng)
            if location not in excluded:
                return location
            fallback = self.traj_gen.best_candidate(state, excluded | {state.current})
        except DiarySimError as e:
            raise GenerationError(agent, slot, e) from e
        except (ValueError, IndexError) as e:
            raise GenerationError(agent, slot, e) from e

        stats.fallbacks += 1
        if fallback is None:
            logger.debug(f"⚠️ Agent {agent} slot {slot}: no location outside the typical ones and current, staying put")
            return state.current
        return fallback


def run_ditras(diary_gen: DiaryGenerator, traj_gen: TrajectoryGenerator, t: WeightedTessellation,
               config: SimulationConfig, typicals: Sequence[TypicalDiary] = None,
               typical_weights: Sequence[float] = None) -> List[SampledTrajectory]:
    """Sampled trajectories for agents 0..n_agents-1, identical whether or not threads are used."""
    simulator = AgentSimulator(diary_gen, traj_gen, t, config, typicals, typical_weights)
    processor = AgentBatchProcessor(config.engine)
    logger.info(
        f"🚀 Generating {config.n_agents} agents × {config.n_slots} slots "
        f"({config.diary_kind.value} diary, {config.trajectory_kind.value} trajectories, seed {config.seed})"
    )
    trajectories = processor.process(range(config.n_agents), simulator.simulate)
    logger.info(f"✅ Generation finished: {processor.stats}")
    return trajectories


def _coordinate_columns(t: WeightedTessellation) -> Tuple[str, str]:
    return ("lat", "lon") if t.geographic else ("x", "y")


def trajectories_to_frame(trajectories: Sequence[SampledTrajectory], t: WeightedTessellation) -> pd.DataFrame:
    cx, cy = _coordinate_columns(t)
    if not trajectories:
        return pd.DataFrame(columns=["agent_id", "slot_index", "location_id", cx, cy])
    locations = np.concatenate([traj.slots for traj in trajectories])
    return pd.DataFrame({
        "agent_id": np.repeat([traj.agent for traj in trajectories], [len(traj) for traj in trajectories]),
        "slot_index": np.concatenate([np.arange(len(traj)) for traj in trajectories]),
        "location_id": locations,
        cx: t.x[locations],
        cy: t.y[locations],
    })


def compact_frame(trajectories: Sequence[SampledTrajectory]) -> pd.DataFrame:
    """Run-length form ``agent_id,start_slot,end_slot,location_id`` with inclusive end slots."""
    rows = []
    for traj in trajectories:
        slots = traj.slots
        if len(slots) == 0:
            continue
        starts = np.flatnonzero(np.r_[True, slots[1:] != slots[:-1]])
        ends = np.r_[starts[1:] - 1, len(slots) - 1]
        rows.append(pd.DataFrame({
            "agent_id": traj.agent, "start_slot": starts, "end_slot": ends, "location_id": slots[starts],
        }))
    if not rows:
        return pd.DataFrame(columns=["agent_id", "start_slot", "end_slot", "location_id"])
    return pd.concat(rows, ignore_index=True)


def write_trajectories(trajectories: Sequence[SampledTrajectory], t: WeightedTessellation, path: str,
                       compact: bool = False) -> None:
    frame = compact_frame(trajectories) if compact else trajectories_to_frame(trajectories, t)
    frame.to_csv(path, index=False, float_format="%.10g")
    logger.info(f"✅ Wrote {len(trajectories)} trajectories to {path}")


def read_trajectories(path: str, slot_seconds: int = 3600, n_locations: Optional[int] = None) -> List[SampledTrajectory]:
    """Read either the per-slot or the run-length trajectory format."""
    frame = pd.read_csv(path)
    if {"agent_id", "slot_index", "location_id"} <= set(frame.columns):
        kind = "slots"
    elif {"agent_id", "start_slot", "end_slot", "location_id"} <= set(frame.columns):
        kind = "runs"
    else:
        raise MalformedRecordError(path, 1, "expected agent_id,slot_index,location_id or agent_id,start_slot,end_slot,location_id")
    if frame.isna().any(axis=None):
        row = int(np.argmax(frame.isna().any(axis=1).to_numpy()))
        raise MalformedRecordError(path, row + 2, "empty field")
    if n_locations is not None:
        invalid = ((frame["location_id"] < 0) | (frame["location_id"] >= n_locations)).to_numpy()
        if invalid.any():
            raise MalformedRecordError(path, int(np.argmax(invalid)) + 2, "location id outside the tessellation")

    trajectories = []
    for agent, group in frame.groupby("agent_id", sort=True):
        if kind == "slots":
            group = group.sort_values("slot_index")
            if not np.array_equal(group["slot_index"].to_numpy(), np.arange(len(group))):
                raise MalformedRecordError(path, int(group.index[0]) + 2, f"slots of agent {agent} are not 0..n-1")
            slots = group["location_id"].to_numpy(dtype=np.int64)
        else:
            group = group.sort_values("start_slot")
            slots = np.repeat(group["location_id"].to_numpy(dtype=np.int64),
                              (group["end_slot"] - group["start_slot"] + 1).to_numpy())
        trajectories.append(SampledTrajectory(int(agent), slot_seconds, slots))
    logger.info(f"📋 Read {len(trajectories)} trajectories from {path}")
    return trajectories
