from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

from semfuzz.model import TestCase

BASE_ENERGY = 1
COVERAGE_BONUS = 4


class EmptyQueue(LookupError):
    pass


@dataclass
class QueueEntry:
    case: TestCase
    energy: int = BASE_ENERGY
    bonus_granted: bool = False


class FuzzQueue:
    """Round-robin queue where each entry is picked ``energy`` times per visit.

    The cursor only moves on the *next* selection after an entry's energy is
    spent, so a bonus granted right after a pick extends the current visit.
    """

    def __init__(self, base_energy: int = BASE_ENERGY, bonus: int = COVERAGE_BONUS):
        self.entries: list[QueueEntry] = []
        self._by_id: dict[int, QueueEntry] = {}
        self.cursor = 0
        self.base_energy = base_energy
        self.bonus = bonus

    def __len__(self) -> int:
        return len(self.entries)

    def add(self, case: TestCase, energy: Optional[int] = None) -> QueueEntry:
        entry = QueueEntry(case, energy if energy is not None else self.base_energy)
        if entry.energy < 1:
            raise ValueError("energy must be >= 1")
        self.entries.append(entry)
        self._by_id[case.id] = entry
        return entry

    def select_next(self) -> TestCase:
        if not self.entries:
            raise EmptyQueue("fuzz queue is empty")
        entry = self.entries[self.cursor]
        if entry.energy <= 0:
            entry.energy = self.base_energy
            self.cursor = (self.cursor + 1) % len(self.entries)
            entry = self.entries[self.cursor]
        entry.energy -= 1
        return entry.case

    def reward(self, case_id: int) -> bool:
        """One-time energy bonus for an entry whose mutant found new coverage."""
        entry = self._by_id.get(case_id)
        if entry is None or entry.bonus_granted:
            return False
        entry.bonus_granted = True
        entry.energy += self.bonus
        return True


def select_next(queue: FuzzQueue) -> TestCase:
    return queue.select_next()
