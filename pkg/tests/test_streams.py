import numpy as np
import pytest

from switchlab.streams import as_generator, child_streams, stream


def draw(g):
    return g.integers(0, 2**62, size=4).tolist()


def test_keyed_streams_reproducible_and_distinct():
    assert draw(stream(3, 1, 2)) == draw(stream(3, 1, 2))
    assert draw(stream(3, 1, 2)) != draw(stream(3, 2, 1))
    assert draw(stream(3, 1)) != draw(stream(4, 1))


def test_children_never_collide_with_keyed_streams():
    kids = [draw(g) for g in child_streams(0, 5)]
    keyed = [draw(stream(0, k)) for k in range(5)] + [draw(stream(0, 1, k)) for k in range(5)]
    assert len({tuple(k) for k in kids + keyed}) == 15
    nested = [draw(g) for g in child_streams(stream(0, 1), 5)]
    assert not {tuple(k) for k in nested} & {tuple(k) for k in keyed}


def test_children_deterministic_and_advance():
    a = [draw(g) for g in child_streams(7, 3)]
    b = [draw(g) for g in child_streams(7, 3)]
    assert a == b
    parent = as_generator(7)
    first = [draw(g) for g in child_streams(parent, 2)]
    second = [draw(g) for g in child_streams(parent, 2)]
    assert first != second


def test_bad_keys():
    with pytest.raises(ValueError):
        stream(0, -1)
    with pytest.raises(ValueError):
        stream(None, 1)
    with pytest.raises(ValueError):
        as_generator(None)
    g = np.random.default_rng(0)
    assert as_generator(g) is g
