from collections import Counter

import pytest

from fairexchange.bag import Bag
from fairexchange.compile import state_atoms, theory_from_rulesets
from fairexchange.decide import decide_exchange
from fairexchange.logic import (
    STAR_CUT_FORBIDDEN,
    STARCUT,
    STRICT,
    check_proof,
    check_reduced_against,
    proof_from_json,
    proof_hash,
    proof_to_json,
)
from fairexchange.model import CapExceeded, State, apply_exchange, exchange
from fairexchange.muac import Context, parse_ruleset
from fairexchange.prove import (
    SynthesisError,
    build_proof,
    fair_st,
    proof_mode,
    slice,
    synthesize_proof,
)

import helpers as h


def proof_for(theory, st, exc, mode=STRICT, sliced=True):
    cert = decide_exchange(theory, st, exc, mode)
    assert cert
    return build_proof(cert, theory, st, sliced=sliced)


def test_circular_proof_shape(fixture_theory, fixture_state):
    p = proof_for(fixture_theory, fixture_state, h.CIRCULAR)
    rules = Counter(p.rules())
    assert (rules["l-imp-left"], rules["contract-split"], rules["contract-left"]) == (3, 2, 1)
    assert rules["star-cut"] == 0
    assert p.size() == 22
    assert proof_for(fixture_theory, fixture_state, h.CIRCULAR, sliced=False).size() == 55


def test_relay_proof_shape(fixture_theory, fixture_state):
    p = proof_for(fixture_theory, fixture_state, h.RELAY, STARCUT)
    rules = Counter(p.rules())
    assert (rules["l-imp-left"], rules["contract-split"], rules["contract-left"]) == (4, 3, 1)
    assert rules["star-cut"] == 1 and proof_mode(p) == STARCUT
    assert p.size() == 36
    assert check_proof(p, STARCUT)
    assert check_proof(p, STRICT).reason == STAR_CUT_FORBIDDEN
    assert proof_for(fixture_theory, fixture_state, h.RELAY, STARCUT, sliced=False).size() == 79


@pytest.mark.parametrize("exc", [h.HP_FOR_LW, h.SB_FOR_HP, h.CIRCULAR])
def test_conclusions_describe_the_transition(fixture_theory, fixture_state, exc):
    full = proof_for(fixture_theory, fixture_state, exc, sliced=False)
    c = full.conclusion
    assert c.omega == fixture_theory.full_omega()
    assert c.goal == state_atoms(apply_exchange(fixture_state, exc))
    sliced = proof_for(fixture_theory, fixture_state, exc)
    assert check_proof(full) and check_proof(sliced)
    assert check_reduced_against(sliced, fixture_theory.full_omega(), state_atoms(fixture_state))
    assert set(sliced.conclusion.omega.distinct()) <= set(c.omega.distinct())


def test_identity_proofs(fixture_theory, fixture_state):
    sliced = proof_for(fixture_theory, fixture_state, Bag())
    assert sliced.rule == "i-right" and sliced.size() == 1
    full = proof_for(fixture_theory, fixture_state, Bag(), sliced=False)
    assert check_proof(full)
    assert full.conclusion.goal == state_atoms(fixture_state)


@pytest.mark.parametrize("n", [3, 10, 30])
def test_gift_proof_is_small_in_any_universe(n):
    users = ["A"] + [f"U{i}" for i in range(n - 1)]
    th = theory_from_rulesets({"A": parse_ruleset("Gives(Me, gift, u)", "A")}, Context(), users)
    st = State({"A": {"gift": 1}}, users)
    p = proof_for(th, st, exchange([("A", "gift", "U0")]))
    assert check_proof(p)
    assert p.size() == 6
    assert proof_for(th, st, exchange([("A", "gift", "U0")]), sliced=False).size() == n + 4


def test_json_roundtrip_is_stable(fixture_theory, fixture_state):
    p = proof_for(fixture_theory, fixture_state, h.RELAY, STARCUT)
    again = proof_from_json(proof_to_json(p))
    assert again == p and proof_hash(again) == proof_hash(p)
    assert proof_hash(proof_for(fixture_theory, fixture_state, h.RELAY, STARCUT)) == proof_hash(p)


def test_synthesis_from_rulesets(fixture_state):
    rs = h.fixture_rulesets()
    cert = decide_exchange(h.fixture_theory(), fixture_state, h.RELAY, STARCUT)
    with pytest.raises(SynthesisError):
        synthesize_proof(cert, rs, h.PALADINS, fixture_state, mode=STRICT)
    p = synthesize_proof(cert, rs, h.PALADINS, fixture_state, sliced=True)
    assert check_proof(p, STARCUT)
    omega, sigma, sp = slice(rs, h.PALADINS, fixture_state, cert)
    assert sp == p and omega == p.conclusion.omega and sigma == p.conclusion.sigma


def test_fair_computation_for_a_wanted_resource(fixture_state):
    rs = h.fixture_rulesets()
    comp = fair_st(rs, h.PALADINS, fixture_state, "Alice", ["hw"], mode=STRICT)
    assert comp.certificate.exchange == h.CIRCULAR
    assert comp.final == h.CIRCULAR_AFTER
    assert check_proof(comp.proof)
    hp = fair_st(rs, h.PALADINS, fixture_state, "Alice", ["hp"], mode=STRICT)
    assert hp.final.get("Alice", "hp") == 1 and len(hp.certificate.exchange) == 2


def test_fair_computation_limits(fixture_state):
    rs = h.fixture_rulesets()
    assert fair_st(rs, h.PALADINS, fixture_state, "Alice", ["hp", "hw"], mode=STRICT) is None
    with pytest.raises(CapExceeded):
        fair_st(rs, h.PALADINS, fixture_state, "Alice", ["hp", "hw"], mode=STARCUT, cap=4)
    with pytest.raises(ValueError):
        fair_st(rs, h.PALADINS, fixture_state, "Alice", [])


def test_random_fair_instances_have_valid_proofs():
    checked = 0
    for seed in range(200):
        inst = h.random_instance(seed)
        th = inst.theory()
        cert = decide_exchange(th, inst.state, inst.exc, STARCUT)
        if not cert:
            continue
        for sliced in (True, False):
            p = build_proof(cert, th, inst.state, sliced=sliced)
            assert check_proof(p, STARCUT), inst.describe()
            assert check_reduced_against(p, th.full_omega(), state_atoms(inst.state)), inst.describe()
        checked += 1
    assert checked >= 30
