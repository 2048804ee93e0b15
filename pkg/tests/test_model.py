import pytest
from hypothesis import given, strategies as st

from fairexchange.bag import Bag
from fairexchange.model import (
    CapExceeded,
    ExchangeApproval,
    ExchangePolicy,
    InsufficientResources,
    State,
    acceptance_witnesses,
    apply_exchange,
    exchange,
    exists_fair_transition,
    format_exchange,
    is_fair_label,
    is_fair_transition,
    is_feasible,
    parse_transfer,
    transfer,
)

import helpers as h


def approvals(*pairs):
    out = {}
    for grant, payoff in pairs:
        g = parse_transfer(grant)
        out.setdefault(g.giver, set()).add(ExchangeApproval(g, exchange(map(parse_transfer, payoff))))
    return {u: ExchangePolicy(u, frozenset(a)) for u, a in out.items()}


def test_transfer_rejects_self_gift():
    with pytest.raises(ValueError):
        transfer("Alice", "sb", "Alice")


def test_parse_and_format_transfer():
    t = parse_transfer(" Alice -> sb -> Bob ")
    assert t == transfer("Alice", "sb", "Bob")
    assert format_exchange(exchange([t])) == "{Alice->sb->Bob}"


def test_state_is_total_over_declared_users():
    st = State({"Alice": {"sb": 1}}, users=("Alice", "Dan"))
    assert st.users == ("Alice", "Dan")
    assert st.get("Dan", "sb") == 0
    with pytest.raises(ValueError):
        State({"Alice": {"sb": -1}})


def test_circular_exchange_moves_every_resource():
    assert apply_exchange(h.FIXTURE_STATE, h.CIRCULAR) == h.CIRCULAR_AFTER


def test_infeasible_exchange_is_reported():
    assert not is_feasible(h.FIXTURE_STATE, exchange([("Bob", "hp", "Alice")]))
    with pytest.raises(InsufficientResources):
        apply_exchange(h.FIXTURE_STATE, exchange([("Bob", "hp", "Alice")]))


def test_approval_owner_must_not_pay():
    with pytest.raises(ValueError):
        ExchangeApproval(transfer("A", "x", "B"), exchange([("A", "y", "B")]))


def test_acceptance_unfolds_per_transfer():
    pol = approvals(("Carl->hp->Bob", ["Bob->lw->Carl"]))["Carl"]
    assert acceptance_witnesses(pol, h.HP_FOR_LW) == frozenset({exchange([("Bob", "lw", "Carl")])})
    twice = exchange([("Carl", "hp", "Bob")] * 2 + [("Bob", "lw", "Carl")])
    assert acceptance_witnesses(pol, twice) == frozenset()


def test_witnesses_must_be_disjoint():
    # one hp transfer cannot pay two sellers at once
    pols = approvals(
        ("Carl->hp->Bob", ["Bob->lw->Carl"]),
        ("Alice->lw->Carl", ["Carl->hp->Bob"]),
        ("Bob->lw->Carl", ["Carl->hp->Bob"]),
    )
    assert not is_fair_label(pols, h.DOUBLE_SPEND)
    pols = approvals(
        ("Carl->hp->Bob", ["Bob->lw->Carl"]),
        ("Carl->hp->Bob", ["Alice->lw->Carl"]),
        ("Alice->lw->Carl", ["Carl->hp->Bob"]),
        ("Bob->lw->Carl", ["Carl->hp->Bob"]),
    )
    assert not is_fair_label(pols, h.DOUBLE_SPEND)
    two = exchange([("Carl", "hp", "Bob")] * 2 + [("Alice", "lw", "Carl"), ("Bob", "lw", "Carl")])
    assert is_fair_label(pols, two)


def test_empty_exchange_is_fair():
    assert is_fair_transition(h.FIXTURE_STATE, Bag(), {})


def test_oracle_cap():
    big = exchange([("Carl", "hw", "Alice")] * 7)
    with pytest.raises(CapExceeded):
        is_fair_label({"Carl": ExchangePolicy("Carl")}, big)


def test_exists_fair_transition_to_circular_target():
    pols = h.running().policies()
    found = exists_fair_transition(h.FIXTURE_STATE, h.CIRCULAR_AFTER, pols)
    assert found == h.CIRCULAR


@given(st.lists(st.tuples(st.sampled_from("ABC"), st.sampled_from("xy"), st.sampled_from("ABC")),
                max_size=5))
def test_apply_conserves_totals(raw):
    exc = exchange([t for t in raw if t[0] != t[2]])
    st0 = State({u: {"x": 5, "y": 5} for u in "ABC"})
    assert apply_exchange(st0, exc).totals() == st0.totals()
