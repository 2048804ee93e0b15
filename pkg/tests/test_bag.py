import pytest
from hypothesis import given, strategies as st

from fairexchange.bag import Bag, split_diff

bags = st.dictionaries(st.sampled_from("abcde"), st.integers(0, 4)).map(Bag)


def test_counts_and_order_independence():
    b = Bag(["x", "y", "x"])
    assert b.count("x") == 2 and b.count("z") == 0
    assert len(b) == 3
    assert b == Bag(["y", "x", "x"]) == Bag({"x": 2, "y": 1})
    assert hash(b) == hash(Bag({"y": 1, "x": 2}))


def test_zero_counts_vanish():
    assert Bag({"x": 0}) == Bag()
    assert not Bag({"x": 0})


def test_strict_difference_refuses_overdraw():
    with pytest.raises(ValueError):
        Bag(["x"]) - Bag(["x", "x"])
    with pytest.raises(ValueError):
        Bag().remove("x")


@given(bags, bags)
def test_sum_then_difference_roundtrips(a, b):
    assert (a + b) - b == a
    assert a <= a + b


@given(bags, bags)
def test_monus_is_truncated_difference(a, b):
    m = a.monus(b)
    for k in set(a.distinct()) | set(b.distinct()):
        assert m.count(k) == max(0, a.count(k) - b.count(k))


@given(bags, bags)
def test_split_diff_removes_the_meet(a, b):
    left, right = split_diff(a, b)
    for k in set(a.distinct()) | set(b.distinct()):
        common = min(a.count(k), b.count(k))
        assert left.count(k) == a.count(k) - common
        assert right.count(k) == b.count(k) - common


@given(bags)
def test_map_preserves_size(a):
    assert len(a.map(str.upper)) == len(a)
    assert len(a.map(lambda _: 0)) == len(a)
