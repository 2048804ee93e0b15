"""Shared builders for the test suite: fixtures, random instances, proof mutants."""

from __future__ import annotations

import random
from dataclasses import dataclass, replace

from fairexchange.bag import Bag
from fairexchange.compile import (
    GroundedTheory,
    Instance,
    compile_state,
    theory_from_rulesets,
)
from fairexchange.decide import FairnessCertificate, decide_exchange
from fairexchange.logic import Contract, G, ProofNode
from fairexchange.model import State, exchange, format_exchange
from fairexchange.muac import Context, interpret_all, parse_ruleset
from fairexchange.prove import build_proof
from fairexchange.scenario import Scenario, parse_scenario, bundled

USERS = ("Alice", "Bob", "Carl")

SOURCES = {
    "Alice": "Gives(Me, sb, u) :- Gives(u', hw, Me)\n"
             "Gives(Me, sb, u) :- Gives(u', hp, Me)\n",
    "Bob": "Gives(Me, lw, u) :- Gives(u', sb, Me)\n"
           "Gives(Me, hp, u) :- Gives(u, sb, Me)\n"
           "Gives(Me, lw, u) :-\n    Gives(u, hp, Me) with is_paladin(u)\n",
    "Carl": "Gives(Me, hw, u) :- Gives(u', lw, Me)\n"
            "Gives(Me, hp, u) :- Gives(u, lw, Me)\n"
            "Gives(Me, hp, u) :-\n    Gives(u, sb, u') with is_paladin(u')\n",
}
A3 = "Gives(Me, lw, u) :-\n    Gives(u', hp, u'') with is_paladin(u'')\n"

PALADINS = Context([("is_paladin", ("Bob",)), ("is_paladin", ("Carl",))])
FIXTURE_STATE = State({"Alice": {"sb": 1}, "Bob": {"lw": 1}, "Carl": {"hw": 3, "hp": 2}})
# holdings after the circular exchange
CIRCULAR_AFTER = State({"Alice": {"hw": 1}, "Bob": {"sb": 1}, "Carl": {"lw": 1, "hw": 2, "hp": 2}})

HP_FOR_LW = exchange([("Carl", "hp", "Bob"), ("Bob", "lw", "Carl")])
SB_FOR_HP = exchange([("Alice", "sb", "Bob"), ("Carl", "hp", "Alice")])
CIRCULAR = exchange([("Alice", "sb", "Bob"), ("Bob", "lw", "Carl"), ("Carl", "hw", "Alice")])
RELAY = exchange([("Alice", "sb", "Bob"), ("Bob", "lw", "Carl"), ("Carl", "hp", "Bob"),
                 ("Bob", "hp", "Alice")])
DOUBLE_SPEND = exchange([("Carl", "hp", "Bob"), ("Alice", "lw", "Carl"), ("Bob", "lw", "Carl")])
DOUBLE_SPEND_STATE = State({"Alice": {"sb": 1, "lw": 1}, "Bob": {"lw": 1},
                            "Carl": {"hw": 3, "hp": 2}})


def fixture_rulesets(with_a3: bool = False) -> dict:
    out = {u: parse_ruleset(src, u) for u, src in SOURCES.items()}
    if with_a3:
        out["Alice"] = parse_ruleset(SOURCES["Alice"] + A3, "Alice")
    return out


def fixture_theory(with_a3: bool = False) -> GroundedTheory:
    return theory_from_rulesets(fixture_rulesets(with_a3), PALADINS, USERS)


def running() -> Scenario:
    return parse_scenario(bundled("running"))


# -- random instances --------------------------------------------------------


@dataclass
class RandomInstance:
    seed: int
    users: tuple
    resources: tuple
    sources: dict
    ctx: Context
    state: State
    exc: Bag

    def rulesets(self) -> dict:
        return {u: parse_ruleset(src, u) for u, src in self.sources.items()}

    def theory(self) -> GroundedTheory:
        return theory_from_rulesets(self.rulesets(), self.ctx, self.users)

    def policies(self) -> dict:
        return interpret_all(self.rulesets(), self.ctx, self.users)

    def describe(self) -> str:
        return (f"seed={self.seed} users={self.users} rules={self.sources} "
                f"ctx={sorted(self.ctx.facts)} st={self.state} exc={format_exchange(self.exc)}")


def _random_rule(rng: random.Random, resources: tuple) -> str:
    variables = ["u", "v", "w"]
    head = f"Gives(Me, {rng.choice(resources)}, {rng.choice(variables)})"
    body = []
    for _ in range(rng.choice((0, 1, 1, 1, 2, 2))):
        giver = rng.choice(variables)
        receiver = rng.choice([x for x in variables + ["Me", "Me"] if x != giver])
        body.append(f"Gives({giver}, {rng.choice(resources)}, {receiver})")
    text = head + (" :- " + ", ".join(body) if body else "")
    if rng.random() < 0.3:
        text += (" :-" if not body else "") + f" with good({rng.choice(variables)})"
    return text


def random_instance(seed: int, max_transfers: int = 4) -> RandomInstance:
    rng = random.Random(seed)
    users = tuple(["Ann", "Ben", "Cat"][: rng.choice((2, 3, 3))])
    resources = tuple(["r", "s", "t"][: rng.choice((1, 2, 3))])
    sources = {}
    for u in users:
        n = rng.choice((0, 1, 2, 2))
        if n:
            sources[u] = "\n".join(_random_rule(rng, resources) for _ in range(n))
    ctx = Context(("good", (u,)) for u in users if rng.random() < 0.5)
    inst = RandomInstance(seed, users, resources, sources, ctx, State(users=users), Bag())
    transfers = []
    if rng.random() < 0.6:
        # grow the exchange from approvals so that fair instances are common
        pols = inst.policies()
        approvals = sorted(a for p in pols.values() for a in p.approvals)
        for _ in range(rng.choice((1, 2))):
            if approvals:
                a = rng.choice(approvals)
                transfers.extend([a.grant, *a.payoff])
        rng.shuffle(transfers)
        transfers = transfers[:max_transfers]
    else:
        for _ in range(rng.randint(0, max_transfers)):
            g, r = rng.sample(users, 2)
            transfers.append((g, rng.choice(resources), r))
    exc = exchange(transfers)
    holdings: dict = {u: {} for u in users}
    for t in exc:
        holdings[t.giver][t.resource] = holdings[t.giver].get(t.resource, 0) + 1
    if rng.random() < 0.2 and exc:
        t = rng.choice(list(exc))
        holdings[t.giver][t.resource] -= 1
    for u in users:
        for r in resources:
            if rng.random() < 0.2:
                holdings[u][r] = holdings[u].get(r, 0) + 1
    inst.state = State(holdings, users)
    inst.exc = exc
    return inst


# -- scripted ledger session -------------------------------------------------


def fixture_setup_requests() -> list[dict]:
    reqs: list[dict] = []
    for user in USERS:
        reqs.append({"op": "SetPolicy", "args": {"user": user, "source": SOURCES[user]}})
    for name, args in sorted(PALADINS.facts):
        reqs.append({"op": "SetContextFact", "args": {"pred": name, "args": list(args)}})
    for (user, res), n in FIXTURE_STATE.bag.items():
        reqs += [{"op": "AddResource", "args": {"user": user, "res": res}}] * n
    return [dict(r, id=i) for i, r in enumerate(reqs)]


# -- proof mutants -----------------------------------------------------------


def nodes_with_paths(p: ProofNode) -> list[tuple[tuple, ProofNode]]:
    out, stack = [], [((), p)]
    while stack:
        path, node = stack.pop()
        out.append((path, node))
        for i, q in enumerate(node.premises):
            stack.append((path + (i,), q))
    return sorted(out, key=lambda x: x[0])


def replace_at(p: ProofNode, path: tuple, new: ProofNode) -> ProofNode:
    if not path:
        return new
    i = path[0]
    premises = list(p.premises)
    premises[i] = replace_at(premises[i], path[1:], new)
    return replace(p, premises=tuple(premises))


def drop_premise_mutants(p: ProofNode, rng: random.Random, n: int) -> list[ProofNode]:
    """Remove one premise of an inner node, or splice an inner node out."""
    inner = [(path, node) for path, node in nodes_with_paths(p) if node.premises]
    out = []
    for k in range(n):
        path, node = inner[rng.randrange(len(inner))]
        i = rng.randrange(len(node.premises))
        if k % 2 == 0 or not node.premises[i].premises:
            premises = node.premises[:i] + node.premises[i + 1:]
        else:
            child = node.premises[i]
            premises = node.premises[:i] + child.premises + node.premises[i + 1:]
        out.append(replace_at(p, path, replace(node, premises=premises)))
    return out


def gift_instance(giver: str, res: str, receiver: str) -> Instance:
    body = Contract(Bag(), Bag([_limp(giver, res, receiver)]))
    return Instance(G(body), None, body, "forged")


def _limp(giver: str, res: str, receiver: str):
    from fairexchange.compile import limp_of
    from fairexchange.model import Transfer

    return limp_of(Transfer(giver, res, receiver))


def forged_theory_proof(theory: GroundedTheory, st: State, giver: str, res: str,
                        receiver: str) -> ProofNode:
    """A proof that checks, built from a theory with one invented gift."""
    forged = GroundedTheory(theory.instances + (gift_instance(giver, res, receiver),),
                            theory.context)
    exc = exchange([(giver, res, receiver)])
    cert = decide_exchange(forged, st, exc, "strict")
    assert cert, "forged gift must be certifiable"
    return build_proof(cert, forged, st, sliced=True)


def forge_omega_naive(p: ProofNode, extra) -> ProofNode:
    c = p.conclusion
    return replace(p, conclusion=replace(c, omega=c.omega.add(extra)))


def inflate_sigma_naive(p: ProofNode, atom) -> ProofNode:
    c = p.conclusion
    return replace(p, conclusion=replace(c, sigma=c.sigma.add(Bag([atom]))))


def double_spend_proof(theory: GroundedTheory, st: State, exc: Bag, uses: list) -> ProofNode:
    """Force a proof from the given contract uses, ignoring the slack condition."""
    cert = FairnessCertificate(y=(), exchange=exc, slack=(), witness=None, uses=tuple(uses),
                               firing=None, mode="strict")
    return build_proof(cert, theory, st, sliced=True)


def instances_for(theory: GroundedTheory, owner_transfer, payer_transfers) -> G:
    """The lifted contract granting ``owner_transfer`` for exactly ``payer_transfers``."""
    from fairexchange.compile import encode_exchange

    rhs = encode_exchange(exchange([owner_transfer]))
    lhs = encode_exchange(exchange(payer_transfers))
    target = G(Contract(lhs, rhs))
    assert target in theory.omega_star, target
    return target


def state_sigma(st: State) -> Bag:
    return compile_state(st)


# -- acceptance report ---------------------------------------------------------

ACCEPTANCE: dict = {}


def record(number: int, title: str, passed: bool, detail: str = "") -> str:
    line = f"{'PASS' if passed else 'FAIL'} criterion {number}: {title}" + (f" ({detail})" if detail else "")
    ACCEPTANCE[number] = line
    print(line)
    return line
