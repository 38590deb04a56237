from collections import Counter

import pytest
from hypothesis import given
from hypothesis import strategies as st

from semfuzz.engine.scheduler import EmptyQueue, FuzzQueue, select_next
from semfuzz.model import Origin, TestCase


def seeds(n):
    return [TestCase(i, bytes([i]), Origin.SEED) for i in range(n)]


def test_empty_queue():
    with pytest.raises(EmptyQueue):
        select_next(FuzzQueue())


def test_round_robin_equal_energy():
    q = FuzzQueue()
    a, b = seeds(2)
    q.add(a)
    q.add(b)
    assert [select_next(q).id for _ in range(5)] == [0, 1, 0, 1, 0]


def test_energy_two():
    q = FuzzQueue()
    q.add(seeds(1)[0], energy=2)
    q.add(TestCase(9, b"", Origin.SEED))
    assert [select_next(q).id for _ in range(4)] == [0, 0, 9, 0]


def test_bonus_gives_five_consecutive():
    q = FuzzQueue()
    a, b = seeds(2)
    q.add(a)
    q.add(b)
    picks = [select_next(q).id]
    assert q.reward(a.id)  # scripted coverage event right after the first pick
    picks += [select_next(q).id for _ in range(6)]
    assert picks == [0, 0, 0, 0, 0, 1, 0]


def test_bonus_is_one_time():
    q = FuzzQueue()
    q.add(seeds(1)[0])
    assert q.reward(0)
    assert not q.reward(0)
    assert not q.reward(123)


def test_energy_must_be_positive():
    with pytest.raises(ValueError):
        FuzzQueue().add(seeds(1)[0], energy=0)


def test_fairness_million_draws():
    q = FuzzQueue()
    for s in seeds(7):
        q.add(s)
    n = 1_000_000
    counts = Counter(q.select_next().id for _ in range(n))
    for c in counts.values():
        assert abs(c / n - 1 / 7) < 0.01 / 7


@given(st.lists(st.integers(1, 5), min_size=1, max_size=6), st.lists(st.integers(0, 5), max_size=10))
def test_energy_never_below_one_on_visit(energies, rewards):
    q = FuzzQueue()
    for i, e in enumerate(energies):
        q.add(TestCase(i, b"", Origin.SEED), energy=e)
    for r in rewards:
        select_next(q)
        q.reward(r)
    for _ in range(50):
        select_next(q)
    assert all(e.energy >= 0 for e in q.entries)
