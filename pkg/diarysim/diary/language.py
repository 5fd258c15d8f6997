import re
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterator, Tuple, Union

import numpy as np

from ..ingestion.records import AbstractTrajectory

# Zero or more separator-terminated runs, then an optional unterminated routine run.
# Routine runs may also be terminated; 0-runs always are.
DIARY_PATTERN = re.compile(r"(?:(?:1+|0+)\|)*1*")
RUN_PATTERN = re.compile(r"1+|0+")


class DiaryToken(str, Enum):
    ROUTINE = "1"
    NON_ROUTINE = "0"
    SEPARATOR = "|"


@dataclass(frozen=True)
class MobilityDiary:
    """A routine/non-routine word; ``tokens`` is the literal string such as ``"11|00|0|1"``."""
    tokens: str
    slot_seconds: int = 3600

    @property
    def slot_count(self) -> int:
        return len(self.tokens) - self.tokens.count(DiaryToken.SEPARATOR.value)

    def runs(self) -> Iterator[Tuple[bool, int]]:
        """(is_routine, length) for each maximal run between separators."""
        for match in RUN_PATTERN.finditer(self.tokens):
            yield match.group()[0] == DiaryToken.ROUTINE.value, match.end() - match.start()

    def __str__(self) -> str:
        return self.tokens


def validate_diary(d: Union[MobilityDiary, str]) -> bool:
    tokens = d.tokens if isinstance(d, MobilityDiary) else d
    return DIARY_PATTERN.fullmatch(tokens) is not None


@dataclass(frozen=True, eq=False)
class TypicalDiary:
    """Per-slot routine location; read periodically when shorter than the trajectory."""
    slots: np.ndarray = field(default_factory=lambda: np.zeros(1, dtype=np.int64))

    def __post_init__(self):
        slots = np.asarray(self.slots, dtype=np.int64).reshape(-1)
        if len(slots) == 0:
            raise ValueError("a typical diary needs at least one slot")
        object.__setattr__(self, "slots", slots)

    @classmethod
    def constant(cls, home: int = 0, length: int = 1) -> "TypicalDiary":
        return cls(np.full(length, home, dtype=np.int64))

    @property
    def is_constant(self) -> bool:
        return bool(np.all(self.slots == self.slots[0]))

    def expand(self, n_slots: int) -> np.ndarray:
        return np.resize(self.slots, n_slots)


def home_typical_diary(traj: AbstractTrajectory) -> TypicalDiary:
    """Constant diary at the user's most visited abstract location (ties → smaller id)."""
    counts = np.bincount(traj.slots)
    return TypicalDiary.constant(int(np.argmax(counts)))


def diary_from_trajectory(traj: AbstractTrajectory, typical: TypicalDiary) -> MobilityDiary:
    """Diary word observed in a real trajectory: 1 on typical slots, 0-runs split at location changes."""
    routine = traj.slots == typical.expand(len(traj))
    pieces = []
    for i in range(len(traj)):
        if i > 0:
            previous_routine = routine[i - 1]
            if not previous_routine and (routine[i] or traj.slots[i] != traj.slots[i - 1]):
                pieces.append(DiaryToken.SEPARATOR.value)
            elif previous_routine and not routine[i]:
                pieces.append(DiaryToken.SEPARATOR.value)
        pieces.append(DiaryToken.ROUTINE.value if routine[i] else DiaryToken.NON_ROUTINE.value)
    if len(traj) and not routine[-1]:
        pieces.append(DiaryToken.SEPARATOR.value)
    return MobilityDiary("".join(pieces), traj.slot_seconds)
