import numpy as np
import pytest

from random_generator import RandomGenerator


def test_child_streams_are_reproducible():
    master = RandomGenerator(5)
    first = master.child("ssl", 3).numpy().normal(size=4)
    master.child("other").numpy().normal(size=100)
    assert np.array_equal(RandomGenerator(5).child("ssl", 3).numpy().normal(size=4), first)
    assert not np.array_equal(master.child("ssl", 4).numpy().normal(size=4), first)
    assert not np.array_equal(RandomGenerator(6).child("ssl", 3).numpy().normal(size=4), first)


def test_derive_seed():
    stream = RandomGenerator(1, ("a",))
    assert stream.derive_seed() == RandomGenerator(1).child("a").derive_seed()
    assert 0 <= stream.derive_seed() < 2**32
    assert stream.child("b").path() == ("a", "b")


def test_next_int():
    stream = RandomGenerator(0)
    values = {stream.next_int(3) for _ in range(200)}
    assert values == {0, 1, 2, 3}


def test_seed_is_mandatory():
    with pytest.raises(ValueError):
        RandomGenerator(None)
