from itertools import groupby

import numpy as np
import pytest
from numpy.testing import assert_allclose
from scipy.integrate import quad

from conftest import HOUR, abstract, diary
from diarysim.base import ConfigMismatchError, EmptyCorpusError, MalformedRecordError
from diarysim.config import WaitingTimeConfig
from diarysim.diary import (
    MarkovDiaryModel,
    MobilityDiary,
    TypicalDiary,
    count_transitions,
    diary_from_trajectory,
    diary_log_likelihood,
    load_model,
    md_generate,
    model_from_dict,
    mdl_learn,
    rd_generate,
    sample_waiting_times,
    save_model,
    validate_diary,
    waiting_time_density,
    wt_generate,
)
from diarysim.diary.markov import state_index

HOME = TypicalDiary.constant(0)


def brute_force_counts(slots, typical_slots, period, phase=0):
    """Transitions between consecutive segments: routine slots alone, non-routine runs by location."""
    slots = list(slots)
    routine = [s == typical_slots[i % len(typical_slots)] for i, s in enumerate(slots)]
    segments = []
    for (is_routine, _), group in groupby(range(len(slots)), key=lambda k: (routine[k], slots[k])):
        indices = list(group)
        if is_routine:
            segments.extend((True, k, k) for k in indices)
        else:
            segments.append((False, indices[0], indices[-1]))
    counts = np.zeros((2 * period, period + 1))
    for (src_routine, _, src_end), (dst_routine, dst_start, dst_end) in zip(segments, segments[1:]):
        h = (phase + src_end) % period
        column = 0 if dst_routine else min(dst_end - dst_start + 1, period)
        counts[state_index(h, int(src_routine)), column] += 1
    return counts


def forced_model(period, transitions, slot_seconds=HOUR):
    counts = np.zeros((2 * period, period + 1))
    for (h, routine), column in transitions:
        counts[state_index(h, routine), column] = 1.0
    return MarkovDiaryModel(period, slot_seconds, counts)


class TestLearner:
    def test_hand_trace(self):
        model = mdl_learn([abstract([0, 0, 1, 1, 0])], HOME, period=4)
        expected = np.zeros((8, 5))
        expected[state_index(0, 1), 0] = 1
        expected[state_index(1, 1), 2] = 1
        expected[state_index(3, 0), 0] = 1
        assert_allclose(model.counts, expected)
        assert model.transition_probability((1, 1), 2) == 1.0
        assert model.target(1, 2) == (3, 0)

    def test_pure_routine(self):
        model = mdl_learn([abstract([0] * 48)], HOME, period=24)
        for h in range(24):
            assert model.transition_probability((h, 1), 0) == 1.0

    def test_matches_brute_force_counts(self, rng):
        for _ in range(200):
            period = int(rng.integers(1, 9))
            typical = rng.integers(0, 3, size=int(rng.integers(1, 5)))
            slots = rng.integers(0, 3, size=int(rng.integers(1, 49)))
            start = int(rng.integers(0, 100))
            traj = abstract(slots, start_slot=start)
            expected = brute_force_counts(slots, typical, period, phase=start % period)
            assert_allclose(count_transitions(traj, TypicalDiary(typical), period), expected)

    def test_leading_non_routine_run_opens_in_its_last_slot(self):
        model = mdl_learn([abstract([1, 1, 0])], HOME, period=4)
        assert model.counts[state_index(1, 0), 0] == 1
        assert model.counts.sum() == 1

    def test_default_routine_is_the_most_visited_location(self):
        default = mdl_learn([abstract([2, 2, 5, 2])], period=4)
        explicit = mdl_learn([abstract([2, 2, 5, 2])], TypicalDiary.constant(2), period=4)
        assert_allclose(default.counts, explicit.counts)

    def test_rows_sum_to_one(self, rng):
        trajectories = [abstract(rng.integers(0, 3, size=60), user=str(u)) for u in range(5)]
        model = mdl_learn(trajectories, period=24)
        observed = model.row_totals > 0
        assert_allclose(model.probs[observed].sum(axis=1), 1.0, atol=1e-9)

    def test_empty_corpus(self):
        with pytest.raises(EmptyCorpusError):
            mdl_learn([], period=24)

    def test_mixed_slot_lengths(self):
        with pytest.raises(ConfigMismatchError):
            mdl_learn([abstract([0, 1]), abstract([0, 1], slot_seconds=1800)], period=24)


class TestMarkovGenerator:
    def test_absorbing_routine(self, rng):
        model = forced_model(24, [((h, r), 0) for h in range(24) for r in (0, 1)])
        assert md_generate(model, 30, rng).tokens == "1" * 30

    def test_forced_trace(self, rng):
        model = forced_model(4, [((0, 1), 2), ((2, 0), 0)])
        assert md_generate(model, 4, rng).tokens == "1|00|1"

    def test_final_stay_truncated(self, rng):
        model = forced_model(4, [((0, 1), 3)])
        generated = md_generate(model, 3, rng)
        assert generated.tokens == "1|00|"
        assert generated.slot_count == 3

    def test_dead_rows_return_to_routine(self, rng):
        assert md_generate(MarkovDiaryModel.empty(24, HOUR), 5, rng).tokens == "11111"

    def test_same_seed_same_diary(self):
        model = mdl_learn([abstract(np.random.default_rng(1).integers(0, 3, size=200))], period=24)
        first = md_generate(model, 500, np.random.default_rng(9))
        second = md_generate(model, 500, np.random.default_rng(9))
        assert first == second

    def test_generated_diaries_are_valid(self, rng):
        model = mdl_learn([abstract(rng.integers(0, 4, size=300))], period=24)
        for n in (1, 2, 17, 200):
            generated = md_generate(model, n, rng)
            assert generated.slot_count == n
            assert validate_diary(generated)

    @pytest.mark.slow
    def test_first_transition_follows_the_model_row(self, rng):
        period = 4
        counts = np.zeros((2 * period, period + 1))
        counts[state_index(0, 1), [0, 1, 2, 4]] = [5, 2, 2, 1]
        model = MarkovDiaryModel(period, HOUR, counts)

        observed = np.zeros(period + 1)
        draws = 100_000
        for _ in range(draws):
            runs = list(md_generate(model, period + 1, rng).runs())
            if runs[0][1] > 1:
                observed[0] += 1
            else:
                observed[runs[1][1]] += 1
        assert np.abs(observed / draws - model.probs[state_index(0, 1)]).sum() < 0.02

    @pytest.mark.slow
    def test_relearned_chain_matches_ground_truth(self):
        period = 24
        counts = np.zeros((2 * period, period + 1))
        for h in range(period):
            counts[state_index(h, 1), [0, 1, 3]] = [0.7, 0.2, 0.1]
            counts[state_index(h, 0), [0, 2]] = [0.6, 0.4]
        truth = MarkovDiaryModel(period, HOUR, counts)

        rng = np.random.default_rng(2024)
        trajectories = []
        for user in range(2000):
            slots = []
            for run, (is_routine, length) in enumerate(md_generate(truth, 720, rng).runs()):
                slots.extend([0] * length if is_routine else [1 + run % 2] * length)
            trajectories.append(abstract(slots, user=str(user)))
        learned = mdl_learn(trajectories, HOME, period)

        busy = learned.row_totals >= 500
        assert busy.any()
        assert np.max(np.abs(learned.probs[busy] - truth.probs[busy])) < 0.02


class TestBaselines:
    def test_random_diary(self):
        assert rd_generate(3).tokens == "0|0|0|"
        assert rd_generate(1).tokens == "0|"
        assert rd_generate(57).slot_count == 57

    def test_waiting_time_diary(self, rng):
        generated = wt_generate(500, HOUR, rng)
        assert generated.slot_count == 500
        assert validate_diary(generated)
        assert all(length >= 1 and not is_routine for is_routine, length in generated.runs())

    def test_waiting_times_follow_the_target_density(self, rng):
        config = WaitingTimeConfig()
        hours = sample_waiting_times(100_000, HOUR, rng, config)
        assert hours.min() >= 1.0 and hours.max() <= config.max_hours

        edges = np.geomspace(1.0, config.max_hours, 21)
        observed = np.histogram(hours, bins=edges)[0] / len(hours)
        target = np.array([
            quad(waiting_time_density, lo, hi, args=(config.beta, config.tau_hours))[0]
            for lo, hi in zip(edges[:-1], edges[1:])
        ])
        target /= target.sum()
        keep = observed > 0
        kl = np.sum(observed[keep] * np.log(observed[keep] / target[keep]))
        assert kl < 0.05


class TestLanguage:
    @pytest.mark.parametrize("tokens, valid", [
        ("11|00|0|1", True),
        ("", True),
        ("1", True),
        ("1|", True),
        ("0|0|0|", True),
        ("||", False),
        ("0", False),
        ("10|", False),
        ("1|2", False),
    ])
    def test_validate(self, tokens, valid):
        assert validate_diary(tokens) is valid

    def test_runs(self):
        assert list(diary("11|00|0|1").runs()) == [(True, 2), (False, 2), (False, 1), (True, 1)]
        assert diary("11|00|0|1").slot_count == 6

    def test_from_trajectory(self):
        assert diary_from_trajectory(abstract([0, 0, 1, 1, 0]), HOME).tokens == "11|00|1"
        assert diary_from_trajectory(abstract([0, 1, 2, 0]), HOME).tokens == "1|0|0|1"
        assert diary_from_trajectory(abstract([0, 1]), HOME).tokens == "1|0|"


class TestLikelihood:
    def test_observed_diary_is_certain_under_its_own_model(self):
        traj = abstract([0, 0, 1, 1, 0])
        model = mdl_learn([traj], HOME, period=4)
        assert diary_log_likelihood(model, diary_from_trajectory(traj, HOME)) == pytest.approx(0.0)

    def test_unseen_transition(self):
        model = mdl_learn([abstract([0, 0, 1, 1, 0])], HOME, period=4)
        assert diary_log_likelihood(model, MobilityDiary("1111")) == float("-inf")

    def test_partial_probability(self):
        counts = np.zeros((4, 3))
        counts[state_index(0, 1), 0] = 1.0
        counts[state_index(1, 1), [0, 1]] = 1.0
        mixed = MarkovDiaryModel(2, HOUR, counts)
        assert diary_log_likelihood(mixed, MobilityDiary("111")) == pytest.approx(np.log(0.5))


class TestModelFiles:
    def test_save_and_load(self, tmp_path, rng):
        model = mdl_learn([abstract(rng.integers(0, 3, size=100))], period=6)
        path = tmp_path / "model.json"
        save_model(model, str(path))
        loaded = load_model(str(path))
        assert (loaded.period, loaded.slot_seconds) == (6, HOUR)
        assert_allclose(loaded.probs, model.probs)

    def test_rows_must_sum_to_one(self, tmp_path):
        path = tmp_path / "model.json"
        path.write_text('{"period": 2, "slot_seconds": 3600, "rows": [{"state": [0, 1], '
                        '"transitions": [{"to": [1, 1], "tau": 1, "p": 0.7}]}]}')
        with pytest.raises(MalformedRecordError):
            load_model(str(path))

    def test_not_json(self, tmp_path):
        path = tmp_path / "model.json"
        path.write_text("{period: 2")
        with pytest.raises(MalformedRecordError):
            load_model(str(path))

    @pytest.mark.parametrize("row", [
        {"transitions": [{"to": [1, 1], "tau": 1, "p": 1.0}]},
        {"state": [5, 1], "transitions": [{"to": [0, 1], "tau": 1, "p": 1.0}]},
        {"state": [0, 2], "transitions": [{"to": [1, 1], "tau": 1, "p": 1.0}]},
        {"state": [0, 1], "transitions": [{"to": [1, 0], "p": 1.0}]},
        {"state": [0, 1]},
    ])
    def test_malformed_rows(self, row):
        with pytest.raises(MalformedRecordError):
            model_from_dict({"period": 2, "slot_seconds": 3600, "rows": [row]})
