import itertools

import pytest
from hypothesis import given, strategies as st

from fairexchange.bag import Bag
from fairexchange.decide import (
    ROUTE_CHECKS,
    build_system,
    decide,
    decide_exchange,
    decide_theory,
    firing_sequence,
    search,
    slack_of,
    solve_direct,
    solve_fair_system,
    solve_via_hilbert,
)
from fairexchange.logic import STARCUT, STRICT, Atom, Contract, G, Limp
from fairexchange.model import State, exchange, is_fair_label, is_fair_transition

import helpers as h


@pytest.mark.parametrize("exc", [h.HP_FOR_LW, h.SB_FOR_HP, h.CIRCULAR])
def test_fixture_exchanges_are_fair(fixture_theory, fixture_state, exc):
    cert = decide_exchange(fixture_theory, fixture_state, exc, STRICT)
    assert cert
    assert cert.witness.union() <= exc


def test_relay_needs_star_cut(fixture_theory, fixture_state):
    assert not decide_exchange(fixture_theory, fixture_state, h.RELAY, STRICT)
    cert = decide_exchange(fixture_theory, fixture_state, h.RELAY, STARCUT)
    assert cert and len(cert.firing) == 2
    first, second = cert.firing
    assert exchange([("Bob", "hp", "Alice")]) <= second


def test_double_spend_is_unfair():
    th = h.fixture_theory(with_a3=True)
    assert not decide_exchange(th, h.DOUBLE_SPEND_STATE, h.DOUBLE_SPEND, STRICT)
    assert not decide_exchange(th, h.DOUBLE_SPEND_STATE, h.DOUBLE_SPEND, STARCUT)
    assert decide_exchange(th, h.DOUBLE_SPEND_STATE, h.HP_FOR_LW, STRICT)


def test_explicit_approvals_allow_two_hp():
    scn = h.parse_scenario(h.bundled("explicit"))
    th = scn.theory()
    two = scn.proposal("two-hp")
    cert = decide_exchange(th, scn.state, two.exchange, STRICT)
    assert cert
    # Carl is paid by both, Alice and Bob by one hp each
    assert cert.witness.per_user["Carl"] == exchange([("Alice", "lw", "Carl"), ("Bob", "lw", "Carl")])
    assert cert.witness.per_user["Alice"] == exchange([("Carl", "hp", "Bob")])
    assert not decide_exchange(th, scn.state, scn.proposal("one-hp-paid-twice").exchange, STRICT)


def test_empty_exchange_is_fair(fixture_theory, fixture_state):
    cert = decide_exchange(fixture_theory, fixture_state, Bag(), STRICT)
    assert cert and not cert.uses


def test_ungranted_transfer(fixture_theory, fixture_state):
    verdict = decide_exchange(fixture_theory, fixture_state, exchange([("Alice", "hp", "Bob")]))
    assert not verdict and "no formula" in verdict.reason


def test_target_states(fixture_state):
    rs = h.fixture_rulesets()
    assert decide(rs, h.PALADINS, fixture_state, h.CIRCULAR_AFTER).exchange == h.CIRCULAR
    assert decide(rs, h.PALADINS, fixture_state, fixture_state).exchange == Bag()
    moved = State({"Alice": {}, "Bob": {"lw": 1, "sb": 1}, "Carl": {"hw": 3, "hp": 2}})
    assert not decide(rs, h.PALADINS, fixture_state, moved)
    lost = State({"Bob": {"lw": 1}, "Carl": {"hw": 3, "hp": 2}})
    assert decide(rs, h.PALADINS, fixture_state, lost).reason == "resource totals differ"


def test_search_reports_cap(fixture_theory, fixture_state):
    wants_all = lambda final: final.get("Alice", "hp") >= 1 and final.get("Alice", "hw") >= 1
    assert search(fixture_theory, fixture_state, wants_all, STARCUT, cap=1).reason == "cap"
    assert decide_theory(fixture_theory, fixture_state, h.CIRCULAR_AFTER, STRICT, cap=2).reason == "cap"


def test_firing_sequence_orders_steps(fixture_state):
    steps = firing_sequence(h.RELAY, fixture_state)
    assert steps is not None and sum(len(s) for s in steps) == 4
    assert firing_sequence(exchange([("Alice", "hp", "Bob")]), fixture_state) is None


def test_route_counter_moves(fixture_theory, fixture_state):
    before = dict(ROUTE_CHECKS)
    decide_exchange(fixture_theory, fixture_state, h.CIRCULAR)
    assert ROUTE_CHECKS["systems"] == before["systems"] + 1
    assert ROUTE_CHECKS["agreements"] == before["agreements"] + 1


def test_strict_matches_oracle_on_random_instances():
    for seed in range(150):
        inst = h.random_instance(seed)
        got = bool(decide_exchange(inst.theory(), inst.state, inst.exc, STRICT))
        assert got == is_fair_transition(inst.state, inst.exc, inst.policies()), inst.describe()


# -- random encoding systems -------------------------------------------------

imps = [Limp(Atom("x", u), Atom("x", v)) for u, v in itertools.permutations("ABC", 2)]
bags = st.lists(st.sampled_from(imps), max_size=2).map(Bag)
nonempty = st.lists(st.sampled_from(imps), min_size=1, max_size=2).map(Bag)


@st.composite
def systems(draw):
    gs = set()
    for _ in range(draw(st.integers(1, 5))):
        if draw(st.booleans()):
            rhs = draw(nonempty)
            gs.add(G(Contract(draw(bags), rhs)))
        else:
            gs.add(G(draw(nonempty)))
    target = draw(st.lists(st.sampled_from(imps), max_size=4).map(Bag))
    return build_system(gs), target


def brute(sys, target_vec):
    limit = max(target_vec, default=0)
    out = set()
    for y in itertools.product(range(limit + 1), repeat=len(sys.columns)):
        offered = [0] * len(sys.basis)
        for j, v in enumerate(y):
            for r, c in sys.offers[j].items():
                offered[r] += v * c
        if tuple(offered) == tuple(target_vec) and all(s >= 0 for s in slack_of(sys, y)):
            out.add(y)
    return out


@given(systems())
def test_routes_agree_with_brute_force(case):
    sys, target = case
    vec = sys.vector(target)
    if vec is None:
        return
    expected = brute(sys, vec)
    assert solve_via_hilbert(sys, vec) == expected
    assert solve_direct(sys, vec) == expected
    assert solve_fair_system(sys, vec) == sorted(expected)


def test_label_oracle_witness_matches_certificate(fixture_theory, fixture_state):
    pols = h.running().policies()
    for exc in (h.HP_FOR_LW, h.SB_FOR_HP, h.CIRCULAR, h.RELAY):
        assert bool(is_fair_label(pols, exc)) == bool(decide_exchange(fixture_theory, fixture_state,
                                                                      exc, STARCUT))
