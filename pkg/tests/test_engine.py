from dataclasses import replace

import numpy as np
import pytest

from conftest import abstract, diary
from diarysim.base import ConfigError, ConfigMismatchError, GenerationError, MalformedRecordError
from diarysim.config import CONFIG
from diarysim.diary import MarkovDiaryModel, TypicalDiary, mdl_learn
from diarysim.engine import (
    AgentSimulator,
    DiaryKind,
    SampledTrajectory,
    SimulationConfig,
    TrajectoryKind,
    compact_frame,
    make_diary_generator,
    make_trajectory_generator,
    materialize_typical_diary,
    read_trajectories,
    run_ditras,
    trajectories_to_frame,
    write_trajectories,
)
from diarysim.tessellation import WeightedTessellation
from diarysim.trajectory import TrajectoryGenerator


def planar(xs, relevance=None):
    xs = np.asarray(xs, dtype=float)
    return WeightedTessellation(xs, np.zeros(len(xs)),
                                np.ones(len(xs)) if relevance is None else np.asarray(relevance, dtype=float),
                                geographic=False)


class FixedGenerator(TrajectoryGenerator):
    """Always proposes the same location and counts how often it was asked."""

    def __init__(self, tessellation, location):
        super().__init__(tessellation)
        self.location = location
        self.calls = 0

    def next_location(self, state, rng):
        self.calls += 1
        return self.location

    def candidate_weights(self, state):
        return np.arange(len(self.tessellation), dtype=float)


class FailingGenerator(FixedGenerator):
    def next_location(self, state, rng):
        raise ValueError("no route")


class RotatingGenerator(FixedGenerator):
    """Proposes 0, 1, 2, ... in turn, wrapping around the tessellation."""

    def next_location(self, state, rng):
        self.calls += 1
        return (self.calls - 1) % len(self.tessellation)


def fixed_diary(tokens):
    return lambda rng, n: diary(tokens)


class TestComposition:
    def test_worked_example(self):
        t = planar([0.0, 1.0], relevance=[1.0, 0.0])
        generator = FixedGenerator(t, 1)
        (traj,) = run_ditras(fixed_diary("1|00|1"), generator, t, SimulationConfig(n_agents=1, n_slots=4))
        assert traj.slots.tolist() == [0, 1, 1, 0]
        assert generator.calls == 1

        frame = trajectories_to_frame([traj], t)
        assert frame["slot_index"].tolist() == [0, 1, 2, 3]
        assert frame["x"].tolist() == [0.0, 1.0, 1.0, 0.0]

    def test_all_routine_diary_stays_home(self):
        t = planar([0.0, 1.0, 2.0], relevance=[0.0, 0.0, 1.0])
        generator = FixedGenerator(t, 1)
        (traj,) = run_ditras(fixed_diary("11111"), generator, t, SimulationConfig(n_agents=1, n_slots=5))
        assert traj.slots.tolist() == [2] * 5
        assert generator.calls == 0

    def test_random_diary_calls_generator_every_slot(self):
        t = planar([0.0, 1.0, 2.0], relevance=[1.0, 0.0, 0.0])
        generator = FixedGenerator(t, 2)
        config = SimulationConfig(n_agents=1, n_slots=6, diary_kind=DiaryKind.RD)
        run_ditras(make_diary_generator(config), generator, t, config)
        assert generator.calls == 6

    def test_non_routine_runs_avoid_home(self):
        t = planar(np.arange(6), relevance=[1.0, 0, 0, 0, 0, 0])
        config = SimulationConfig(n_agents=20, n_slots=100, diary_kind="wt", trajectory_kind="latp", seed=5)
        population = run_ditras(make_diary_generator(config), make_trajectory_generator(config, t), t, config)
        assert all(len(traj) == 100 for traj in population)
        assert all(0 not in traj.slots for traj in population)

    def test_home_fallback(self, rng):
        t = planar([0.0, 1.0, 2.0], relevance=[1.0, 0.0, 0.0])
        config = SimulationConfig(n_agents=1, n_slots=3)
        simulator = AgentSimulator(fixed_diary("1|0|1"), FixedGenerator(t, 0), t, config)
        traj, stats = simulator.simulate(0)
        assert traj.slots.tolist() == [0, 2, 0]
        assert stats.home_resamples == CONFIG.engine.max_home_resamples
        assert stats.fallbacks == 1

    def test_non_routine_run_avoids_every_typical_location_it_covers(self):
        t = planar(np.arange(4))
        config = SimulationConfig(n_agents=50, n_slots=4, seed=3)
        population = run_ditras(fixed_diary("1|00|1"), RotatingGenerator(t, 0), t, config,
                                typicals=[TypicalDiary([0, 0, 1, 1])])
        for traj in population:
            # slot 0 shows where abstract 0 lives, slot 3 where abstract 1 lives
            away = traj.slots[1]
            assert traj.slots[2] == away
            assert away not in (traj.slots[0], traj.slots[3])

    def test_generator_failure_carries_context(self):
        t = planar([0.0, 1.0], relevance=[1.0, 0.0])
        config = SimulationConfig(n_agents=1, n_slots=4)
        with pytest.raises(GenerationError) as excinfo:
            run_ditras(fixed_diary("11|0|1"), FailingGenerator(t, 1), t, config)
        assert (excinfo.value.agent, excinfo.value.slot) == (0, 2)


class TestMarkovPopulation:
    @pytest.fixture
    def model(self, rng):
        slots = np.where(rng.random(24 * 30) < 0.7, 0, rng.integers(1, 4, size=24 * 30))
        return mdl_learn([abstract(slots)], period=24)

    def test_same_seed_same_population(self, model, line_tessellation):
        config = SimulationConfig(n_agents=8, n_slots=168, seed=7)
        first = run_ditras(make_diary_generator(config, model), make_trajectory_generator(config, line_tessellation),
                           line_tessellation, config)
        second = run_ditras(make_diary_generator(config, model), make_trajectory_generator(config, line_tessellation),
                            line_tessellation, config)
        assert first == second

    def test_threads_do_not_change_output(self, model, line_tessellation):
        sequential = SimulationConfig(n_agents=30, n_slots=100, seed=11, trajectory_kind=TrajectoryKind.SWIM)
        threaded = replace(sequential, engine=replace(CONFIG.engine, enable_threading=True, max_workers=4, chunk_size=3))
        expected = run_ditras(make_diary_generator(sequential, model),
                              make_trajectory_generator(sequential, line_tessellation), line_tessellation, sequential)
        actual = run_ditras(make_diary_generator(threaded, model),
                            make_trajectory_generator(threaded, line_tessellation), line_tessellation, threaded)
        assert actual == expected

    def test_agents_do_not_depend_on_population_size(self, model, line_tessellation):
        small = SimulationConfig(n_agents=3, n_slots=72, seed=4)
        large = replace(small, n_agents=10)
        few = run_ditras(make_diary_generator(small, model), make_trajectory_generator(small, line_tessellation),
                         line_tessellation, small)
        many = run_ditras(make_diary_generator(large, model), make_trajectory_generator(large, line_tessellation),
                          line_tessellation, large)
        assert many[:3] == few

    def test_slot_length_mismatch(self, line_tessellation):
        model = MarkovDiaryModel.empty(48, 1800)
        with pytest.raises(ConfigMismatchError):
            make_diary_generator(SimulationConfig(n_agents=1, n_slots=10), model)

    def test_markov_diary_needs_a_model(self):
        with pytest.raises(ConfigError):
            make_diary_generator(SimulationConfig(n_agents=1, n_slots=10))


@pytest.mark.parametrize("changes", [{"n_agents": 0}, {"n_slots": 0}, {"slot_seconds": 0}, {"diary_kind": "xx"}])
def test_invalid_configuration(changes):
    with pytest.raises(ConfigError):
        SimulationConfig(**{"n_agents": 1, "n_slots": 1, **changes})


class TestTypicalDiary:
    def test_constant_diary(self, line_tessellation, rng):
        locations = materialize_typical_diary(TypicalDiary.constant(0, 4), line_tessellation, rng)
        assert len(locations) == 4
        assert len(set(locations.tolist())) == 1

    def test_zero_relevance_never_home(self, rng):
        t = planar([0.0, 1.0, 2.0], relevance=[1.0, 0.0, 0.0])
        assert {int(materialize_typical_diary(TypicalDiary.constant(), t, rng)[0]) for _ in range(100)} == {0}

    def test_same_abstract_location_same_place(self, line_tessellation, rng):
        typical = TypicalDiary(np.array([0, 1, 1, 0, 1]))
        locations = materialize_typical_diary(typical, line_tessellation, rng, n_slots=10)
        assert len(locations) == 10
        assert locations[0] == locations[3] == locations[5]
        assert locations[1] == locations[2] == locations[4]


class TestFiles:
    def test_compact_runs(self):
        frame = compact_frame([SampledTrajectory(0, 3600, [3, 3, 5])])
        assert frame.values.tolist() == [[0, 0, 1, 3], [0, 2, 2, 5]]

    @pytest.mark.parametrize("compact", [False, True])
    def test_write_and_read(self, tmp_path, line_tessellation, compact):
        population = [SampledTrajectory(0, 3600, [3, 3, 5, 1]), SampledTrajectory(1, 3600, [2])]
        path = tmp_path / "trajectories.csv"
        write_trajectories(population, line_tessellation, str(path), compact=compact)
        assert read_trajectories(str(path), 3600, len(line_tessellation)) == population

    def test_unknown_location(self, tmp_path):
        path = tmp_path / "trajectories.csv"
        path.write_text("agent_id,slot_index,location_id\n0,0,1\n0,1,12\n")
        with pytest.raises(MalformedRecordError) as excinfo:
            read_trajectories(str(path), 3600, n_locations=10)
        assert excinfo.value.line == 3
