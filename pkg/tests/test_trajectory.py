import numpy as np
import pytest
from numpy.testing import assert_allclose
from scipy import stats

from diarysim.base import DegenerateDistanceError
from diarysim.config import DeprConfig, LatpConfig, SwimConfig
from diarysim.tessellation import WeightedTessellation, build_gravity_matrix
from diarysim.trajectory import (
    AgentSpatialState,
    DeprGenerator,
    LatpGenerator,
    SwimGenerator,
    depr_next,
    latp_next,
    swim_next,
)

DRAWS = 100_000


def planar(xs, ys=None, relevance=None):
    xs = np.asarray(xs, dtype=float)
    return WeightedTessellation(xs, np.zeros(len(xs)) if ys is None else np.asarray(ys, dtype=float),
                                np.ones(len(xs)) if relevance is None else np.asarray(relevance, dtype=float),
                                geographic=False)


def frequencies(generator, state, rng, n_locations, draws=DRAWS):
    choices = [generator(state, rng) for _ in range(draws)]
    return np.bincount(choices, minlength=n_locations) / draws


class BranchRecorder(DeprGenerator):
    """Reports which branch was taken instead of a location."""

    def explore(self, state, rng):
        return 1

    def prefer_return(self, state, rng):
        return 0


class TestDepr:
    def test_exploration_probability(self, collinear):
        generator = DeprGenerator(collinear, build_gravity_matrix(collinear), DeprConfig(rho=0.6, gamma=0.21))
        assert generator.exploration_probability(1) == pytest.approx(0.6)
        assert generator.exploration_probability(10) == pytest.approx(0.6 * 10 ** -0.21)

    @pytest.mark.slow
    @pytest.mark.parametrize("distinct", [1, 2, 5, 20])
    def test_exploration_frequency_in_binomial_band(self, collinear, rng, distinct):
        generator = BranchRecorder(collinear, build_gravity_matrix(collinear))
        state = AgentSpatialState(home=0, current=0, visit_counts={k: 1 for k in range(distinct)})
        decisions = 20_000
        explored = sum(generator.next_location(state, rng) for _ in range(decisions))
        low, high = stats.binom.interval(0.99, decisions, 0.6 * distinct ** -0.21)
        assert low <= explored <= high

    def test_return_proportional_to_visits(self, collinear, rng):
        generator = DeprGenerator(collinear, build_gravity_matrix(collinear))
        state = AgentSpatialState(home=0, current=2, visit_counts={0: 3, 1: 1, 2: 1})
        observed = frequencies(generator.prefer_return, state, rng, 3)
        assert_allclose(observed, [0.75, 0.25, 0.0], atol=0.01)

    def test_exploration_follows_gravity_row(self, collinear, rng):
        generator = DeprGenerator(collinear, build_gravity_matrix(collinear))
        state = AgentSpatialState.at_home(0)
        observed = frequencies(generator.explore, state, rng, 3)
        assert_allclose(observed, [0.0, 1 / 1.25, 0.25 / 1.25], atol=0.01)

    def test_return_without_history_explores(self, collinear, rng):
        generator = DeprGenerator(collinear, build_gravity_matrix(collinear))
        state = AgentSpatialState.at_home(1)
        assert {generator.prefer_return(state, rng) for _ in range(200)} == {0, 2}

    def test_functional_form(self, collinear, rng):
        gravity = build_gravity_matrix(collinear)
        state = AgentSpatialState.at_home(0)
        assert depr_next(state, gravity, 0.6, 0.21, rng, collinear) in (1, 2)

    def test_never_returns_current(self, line_tessellation, rng):
        generator = DeprGenerator(line_tessellation, build_gravity_matrix(line_tessellation))
        state = AgentSpatialState(home=0, current=4, visit_counts={0: 5, 4: 2, 7: 1})
        assert all(generator.next_location(state, rng) != 4 for _ in range(2000))


class TestSwim:
    def test_pure_relevance(self, rng):
        t = planar([0.0, 1.0, 2.0, 3.0], relevance=[0.0, 1.0, 3.0, 2.0])
        generator = SwimGenerator(t, SwimConfig(alpha=0.0))
        observed = frequencies(generator.next_location, AgentSpatialState.at_home(3), rng, 4)
        assert_allclose(observed, [0.0, 0.25, 0.75, 0.0], atol=0.01)

    def test_pure_distance_kernel(self):
        t = planar([0.0, 1.0, 3.0], relevance=[1.0, 100.0, 1.0])
        weights = SwimGenerator(t, SwimConfig(alpha=1.0)).home_weights(0)
        assert_allclose(weights, [1.0, 0.25, 1 / 16])

    def test_symmetric_choices(self, rng):
        t = planar([0.0, -1.0, 1.0])
        generator = SwimGenerator(t, SwimConfig(alpha=0.75))
        observed = frequencies(generator.next_location, AgentSpatialState.at_home(0), rng, 3)
        assert_allclose(observed, [0.0, 0.5, 0.5], atol=0.01)

    def test_functional_form(self, rng):
        t = planar([0.0, 1.0])
        assert swim_next(AgentSpatialState.at_home(0), t, 0.75, rng) == 1


class TestLatp:
    def test_two_candidates(self, rng):
        generator = LatpGenerator(planar([0.0, 1.0, 2.0]), LatpConfig(exponent=1.5))
        observed = frequencies(generator.next_location, AgentSpatialState.at_home(0), rng, 3)
        expected = 1 / (1 + 2 ** -1.5)
        assert_allclose(observed, [0.0, expected, 1 - expected], atol=0.01)
        assert expected == pytest.approx(0.739, abs=1e-3)

    def test_origin_cache_keeps_only_recent_rows(self, rng, line_tessellation):
        generator = LatpGenerator(line_tessellation, cache_rows=2)
        for origin in range(len(line_tessellation)):
            generator.next_location(AgentSpatialState.at_home(origin), rng)
        assert generator.origin_cdf.cache_info().currsize == 2

    def test_single_candidate(self, rng):
        t = planar([0.0, 5.0])
        assert {latp_next(AgentSpatialState.at_home(0), t, 1.5, rng) for _ in range(50)} == {1}

    def test_equidistant_candidates(self, rng):
        angles = np.arange(4) * np.pi / 2
        t = planar(np.r_[0.0, np.cos(angles)], np.r_[0.0, np.sin(angles)])
        observed = frequencies(LatpGenerator(t).next_location, AgentSpatialState.at_home(0), rng, 5)
        assert_allclose(observed, [0.0, 0.25, 0.25, 0.25, 0.25], atol=0.01)

    def test_coincident_location_excluded(self, rng):
        t = planar([0.0, 0.0, 1.0])
        assert {latp_next(AgentSpatialState.at_home(0), t, 1.5, rng) for _ in range(100)} == {2}

    def test_everything_coincident(self, rng):
        t = planar([0.0, 0.0, 0.0])
        with pytest.raises(DegenerateDistanceError):
            latp_next(AgentSpatialState.at_home(0), t, 1.5, rng)


class TestBestCandidate:
    def test_highest_weight_outside_exclusions(self, collinear):
        generator = DeprGenerator(collinear, build_gravity_matrix(collinear))
        state = AgentSpatialState.at_home(1)
        assert generator.best_candidate(state, {1}) == 0
        assert generator.best_candidate(state, {0, 1}) == 2

    def test_nothing_left(self):
        t = planar([0.0, 1.0])
        generator = LatpGenerator(t)
        assert generator.best_candidate(AgentSpatialState.at_home(0), {0, 1}) is None


def test_visit_updates_state():
    state = AgentSpatialState.at_home(3)
    state.visit(5, times=4)
    state.visit(3)
    assert state.current == 3
    assert state.visit_counts == {3: 2, 5: 4}
    assert state.distinct_count == 2
