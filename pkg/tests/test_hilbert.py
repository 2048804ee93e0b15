import pytest
from hypothesis import given, strategies as st

from fairexchange.hilbert import (
    ResourceCap,
    brute_force_basis,
    generated,
    hilbert_basis,
    in_cone,
    lift,
    minimal_solutions,
)


@pytest.mark.parametrize("M, m, expected", [
    ([[1, -1]], None, [(1, 0), (1, 1)]),
    ([], 2, [(0, 1), (1, 0)]),
    ([[-1]], None, []),
    ([[2, -1]], None, [(1, 0), (1, 1), (1, 2)]),
    ([[1, 1, -1]], None, [(0, 1, 0), (0, 1, 1), (1, 0, 0), (1, 0, 1)]),
])
def test_known_bases(M, m, expected):
    assert hilbert_basis(M, m) == expected


def test_empty_matrix_needs_width():
    with pytest.raises(ValueError):
        hilbert_basis([])


def test_minimal_solutions_of_an_equation():
    # x1 + x2 = 2 x3
    assert minimal_solutions([[1, 1, -2]], 3) == [(0, 2, 1), (1, 1, 1), (2, 0, 1)]


def test_frontier_cap():
    with pytest.raises(ResourceCap):
        minimal_solutions([[7, -5, 3, -11]], 4, cap=3)


def test_lift_and_membership():
    assert lift([[1, -1]], (2, 1)) == (2, 1, 1)
    assert in_cone([[1, -1]], (2, 1)) and not in_cone([[1, -1]], (1, 2))


matrices = st.integers(1, 3).flatmap(
    lambda m: st.lists(st.lists(st.integers(-2, 2), min_size=m, max_size=m), min_size=1, max_size=2)
)


@given(matrices)
def test_agrees_with_brute_force(M):
    m = len(M[0])
    H = hilbert_basis(M, m)
    assert all(max(h) <= 5 for h in H)
    assert H == brute_force_basis(M, m, 5)


@given(matrices, st.lists(st.integers(0, 3), min_size=3, max_size=3))
def test_cone_points_are_generated(M, y):
    m = len(M[0])
    y = tuple(y[:m])
    H = hilbert_basis(M, m)
    assert all(in_cone(M, h) for h in H)
    assert generated(H, y) == in_cone(M, y)
