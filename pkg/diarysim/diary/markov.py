"""Markov diary model over (slot-of-period, routine-flag) states and its learner."""
import json
import logging
from bisect import bisect_right
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Mapping, Optional, Sequence, Tuple, Union

import numpy as np

from ..base import ConfigError, ConfigMismatchError, EmptyCorpusError, MalformedRecordError
from ..ingestion.records import AbstractTrajectory
from ..utils import atomic_write_text
from .language import DiaryToken, MobilityDiary, TypicalDiary, home_typical_diary

logger = logging.getLogger(__name__)

State = Tuple[int, int]
ROUTINE_COLUMN = 0
ROW_SUM_TOLERANCE = 1e-9


def state_index(h: int, routine: int) -> int:
    return 2 * h + routine


@dataclass(frozen=True, eq=False)
class MarkovDiaryModel:
    """Transition counts over 2P states.

    Row ``2h + R`` holds the transitions out of state (h, R). Column 0 is the
    routine transition to ((h+1) mod P, 1); column k in 1..P is a non-routine
    stay of k slots ending in state ((h+k) mod P, 0).
    """
    period: int
    slot_seconds: int
    counts: np.ndarray = field(repr=False)

    def __post_init__(self):
        counts = np.asarray(self.counts, dtype=float)
        if counts.shape != (2 * self.period, self.period + 1):
            raise ValueError(f"counts must have shape {(2 * self.period, self.period + 1)}, got {counts.shape}")
        if np.any(counts < 0):
            raise ValueError("transition counts must be non-negative")
        object.__setattr__(self, "counts", counts)

    @classmethod
    def empty(cls, period: int, slot_seconds: int) -> "MarkovDiaryModel":
        return cls(period, slot_seconds, np.zeros((2 * period, period + 1)))

    @cached_property
    def row_totals(self) -> np.ndarray:
        return self.counts.sum(axis=1)

    @cached_property
    def probs(self) -> np.ndarray:
        totals = self.row_totals
        probs = np.zeros_like(self.counts)
        observed = totals > 0
        probs[observed] = self.counts[observed] / totals[observed, None]
        return probs

    @cached_property
    def _cdf_rows(self) -> list:
        rows = []
        for s in range(2 * self.period):
            if self.row_totals[s] > 0:
                rows.append(np.cumsum(self.probs[s]).tolist())
            else:
                rows.append(None)  # dead row
        return rows

    def target(self, h: int, column: int) -> State:
        if column == ROUTINE_COLUMN:
            return (h + 1) % self.period, 1
        return (h + column) % self.period, 0

    def transition_probability(self, state: State, column: int) -> float:
        s = state_index(*state)
        if self.row_totals[s] == 0:
            return 1.0 if column == ROUTINE_COLUMN else 0.0
        return float(self.probs[s, column])

    def sample_column(self, state: State, u: float) -> int:
        """Transition column for a uniform draw u; dead rows return to routine."""
        row = self._cdf_rows[state_index(*state)]
        if row is None:
            return ROUTINE_COLUMN
        return min(bisect_right(row, u * row[-1]), self.period)


TypicalSource = Union[None, TypicalDiary, Mapping[str, TypicalDiary], Callable[[AbstractTrajectory], TypicalDiary]]


def _typical_for(traj: AbstractTrajectory, typical: TypicalSource) -> TypicalDiary:
    if typical is None:
        return home_typical_diary(traj)
    if isinstance(typical, TypicalDiary):
        return typical
    if callable(typical):
        return typical(traj)
    return typical[traj.user]


def count_transitions(traj: AbstractTrajectory, typical: TypicalDiary, period: int) -> np.ndarray:
    """Transition counts of one user.

    A trajectory that opens inside a non-routine run contributes nothing until
    that run ends. Runs are maximal stretches of one non-typical location;
    their length is capped at ``period``.
    """
    counts = np.zeros((2 * period, period + 1))
    n = len(traj)
    if n == 0:
        return counts
    slots = traj.slots
    routine = slots == typical.expand(n)
    phase = traj.phase(period)

    def run_end(start: int) -> int:
        end = start + 1
        while end < n and not routine[end] and slots[end] == slots[start]:
            end += 1
        return end

    i = 0
    previous: Optional[State] = None
    if not routine[0]:
        i = run_end(0)
        previous = ((phase + i - 1) % period, 0)

    while i < n:
        h = (phase + i) % period
        if routine[i]:
            if previous is not None:
                counts[state_index(*previous), ROUTINE_COLUMN] += 1
            previous = (h, 1)
            i += 1
        else:
            end = run_end(i)
            if previous is not None:
                counts[state_index(*previous), min(end - i, period)] += 1
            previous = ((phase + end - 1) % period, 0)
            i = end
    return counts


def check_period(period: int, slot_seconds: int) -> None:
    if period < 1:
        raise ConfigError(f"period must be at least 1, got {period}")
    cycle = period * slot_seconds
    if cycle % 86400 and 86400 % cycle:
        logger.warning(f"⚠️ Period of {period} slots ({cycle} s) does not align with the day")


def mdl_learn(trajectories: Sequence[AbstractTrajectory], typical: TypicalSource = None, period: int = 24) -> MarkovDiaryModel:
    """Learn the diary model from abstract trajectories.

    ``typical`` is one diary shared by all users, a mapping user → diary, or a
    callable; by default each user's routine is their most visited location.
    """
    if not trajectories:
        raise EmptyCorpusError("no trajectories to learn from")
    slot_seconds = trajectories[0].slot_seconds
    mismatched = [t.user for t in trajectories if t.slot_seconds != slot_seconds]
    if mismatched:
        raise ConfigMismatchError(f"users {mismatched[:5]} do not use {slot_seconds}-second slots")
    check_period(period, slot_seconds)

    logger.info(f"🚀 Learning diary model from {len(trajectories)} users (P={period})")
    counts = np.zeros((2 * period, period + 1))
    for traj in trajectories:
        counts += count_transitions(traj, _typical_for(traj, typical), period)

    model = MarkovDiaryModel(period, slot_seconds, counts)
    observed = int(np.count_nonzero(model.row_totals))
    logger.info(f"✅ Learned {int(counts.sum())} transitions, {observed}/{2 * period} states observed")
    return model


def md_generate(model: MarkovDiaryModel, n_slots: int, rng: np.random.Generator, start: Optional[State] = None) -> MobilityDiary:
    """Sample a diary of exactly n_slots slots, starting in ``start`` (default (0, 1))."""
    if n_slots < 1:
        raise ValueError(f"n_slots must be at least 1, got {n_slots}")
    h, routine = start if start is not None else (0, 1)
    period = model.period

    routine_token = DiaryToken.ROUTINE.value
    zero_token = DiaryToken.NON_ROUTINE.value
    separator = DiaryToken.SEPARATOR.value

    pieces = [routine_token if routine else zero_token]
    emitted = 1
    # every transition fills at least one slot
    draws = rng.random(n_slots).tolist()
    step = 0
    while emitted < n_slots:
        column = model.sample_column((h, routine), draws[step])
        step += 1
        if column == ROUTINE_COLUMN:
            if not routine:
                pieces.append(separator)
            pieces.append(routine_token)
            emitted += 1
            h, routine = (h + 1) % period, 1
        else:
            stay = min(column, n_slots - emitted)
            pieces.append(separator)
            pieces.append(zero_token * stay)
            emitted += stay
            h, routine = (h + column) % period, 0
    if not routine:
        pieces.append(separator)
    return MobilityDiary("".join(pieces), model.slot_seconds)


def diary_log_likelihood(model: MarkovDiaryModel, diary: MobilityDiary, start_phase: int = 0) -> float:
    """Natural-log probability of the diary's transitions, scored the way the learner counts them."""
    period = model.period
    total = 0.0
    position = 0
    previous: Optional[State] = None
    for is_routine, length in diary.runs():
        if is_routine:
            for offset in range(length):
                h = (start_phase + position + offset) % period
                if previous is not None:
                    total += _log(model.transition_probability(previous, ROUTINE_COLUMN))
                previous = (h, 1)
        else:
            if previous is not None:
                total += _log(model.transition_probability(previous, min(length, period)))
            previous = ((start_phase + position + length - 1) % period, 0)
        position += length
    return total


def _log(p: float) -> float:
    return float(np.log(p)) if p > 0 else float("-inf")


def model_to_dict(model: MarkovDiaryModel) -> dict:
    rows = []
    for h in range(model.period):
        for routine in (0, 1):
            s = state_index(h, routine)
            if model.row_totals[s] == 0:
                continue
            transitions = []
            for column in np.flatnonzero(model.counts[s]):
                to_h, to_r = model.target(h, int(column))
                transitions.append({
                    "to": [to_h, to_r],
                    "tau": 1 if column == ROUTINE_COLUMN else int(column),
                    "p": float(model.probs[s, column]),
                    "count": float(model.counts[s, column]),
                })
            rows.append({"state": [h, routine], "transitions": transitions})
    return {"period": model.period, "slot_seconds": model.slot_seconds, "rows": rows}


def model_from_dict(payload: dict, source: str = "<model>") -> MarkovDiaryModel:
    try:
        period = int(payload["period"])
        slot_seconds = int(payload["slot_seconds"])
        rows = payload["rows"]
    except (KeyError, TypeError, ValueError) as e:
        raise MalformedRecordError(source, 1, f"invalid model document: {e}")
    if period < 1:
        raise MalformedRecordError(source, 1, f"period must be at least 1, got {period}")

    counts = np.zeros((2 * period, period + 1))
    for number, row in enumerate(rows):
        try:
            h, routine = (int(v) for v in row["state"])
            transitions = list(row["transitions"])
        except (KeyError, TypeError, ValueError) as e:
            raise MalformedRecordError(source, 1, f"row {number}: expected state [h, R] and transitions ({e})")
        if not 0 <= h < period or routine not in (0, 1):
            raise MalformedRecordError(source, 1, f"row {number}: state {(h, routine)} outside a period of {period}")
        s = state_index(h, routine)
        probability_sum = 0.0
        for transition in transitions:
            try:
                to_h, to_r = (int(v) for v in transition["to"])
                p = float(transition["p"])
                column = ROUTINE_COLUMN if to_r == 1 else int(transition["tau"])
            except (KeyError, TypeError, ValueError) as e:
                raise MalformedRecordError(source, 1, f"row {number}: invalid transition {transition} ({e})")
            if not 0 <= column <= period or (to_h, to_r) != ((h + 1) % period, 1) and column == ROUTINE_COLUMN:
                raise MalformedRecordError(source, 1, f"transition {transition} from state {(h, routine)} is not representable")
            if column != ROUTINE_COLUMN and (to_h, to_r) != ((h + column) % period, 0):
                raise MalformedRecordError(source, 1, f"transition {transition} from state {(h, routine)} has inconsistent tau")
            probability_sum += p
            counts[s, column] = float(transition.get("count", p))
        if abs(probability_sum - 1.0) > ROW_SUM_TOLERANCE:
            raise MalformedRecordError(source, 1, f"row {(h, routine)} sums to {probability_sum}")
    return MarkovDiaryModel(period, slot_seconds, counts)


def save_model(model: MarkovDiaryModel, path: str) -> None:
    atomic_write_text(path, json.dumps(model_to_dict(model), indent=2) + "\n")
    logger.info(f"✅ Model written to {path}")


def load_model(path: str) -> MarkovDiaryModel:
    with open(path, encoding="utf-8") as fh:
        try:
            payload = json.load(fh)
        except json.JSONDecodeError as e:
            raise MalformedRecordError(path, e.lineno, e.msg)
    return model_from_dict(payload, source=path)
