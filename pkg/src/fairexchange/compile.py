"""Translations from policies, states and contexts into logic formulas.

A MuAC rule ``Gives(Me, res, u) :- gives with preds`` becomes the
quantified formula ``Λ vars. preds → G(gives ⊸* (res@Me ⊸ res@u))``.  The
quantifier is never materialized: grounding enumerates its instances over the
user universe, one formula per admissible assignment.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Mapping, Union

from .bag import Bag
from .logic import Atom, Contract, G, Imp, Limp, Omega, Pred, conj, conjuncts
from .model import ExchangePolicy, State, Transfer
from .muac import ME, Context, RuleAst, Ruleset, admissible, assignments


def limp_of(t: Transfer) -> Limp:
    return Limp(Atom(t.resource, t.giver), Atom(t.resource, t.receiver))


def transfer_of(x: Limp) -> Transfer:
    if x.src.res != x.dst.res:
        raise ValueError(f"{x} changes the resource")
    return Transfer(x.src.usr, x.src.res, x.dst.usr)


def encode_exchange(exc: Bag) -> Bag:
    return exc.map(limp_of)


def decode_exchange(delta: Bag) -> Bag:
    return delta.map(transfer_of)


def compile_state(st: State) -> Bag:
    """One single-atom state formula per owned resource copy."""
    counts: dict = {}
    for (user, res), n in st.bag.items():
        counts[Bag([Atom(res, user)])] = n
    return Bag(counts)


def state_atoms(st: State) -> Bag:
    return Bag({Atom(res, user): n for (user, res), n in st.bag.items()})


def decompile_state(sigma: Bag, users: Iterable[str] = ()) -> State:
    pairs: dict = {}
    for s in sigma:
        for a in (s if isinstance(s, Bag) else [s]):
            pairs[(a.usr, a.res)] = pairs.get((a.usr, a.res), 0) + 1
    return State(bag=Bag(pairs), users=users)


def compile_context(ctx: Context) -> frozenset:
    return frozenset(Pred(name, tuple(args)) for name, args in ctx.facts)


@dataclass(frozen=True)
class CompiledRule:
    owner: str
    index: int
    rule: RuleAst
    variables: tuple
    precondition: Omega
    contract: Contract

    @property
    def label(self) -> str:
        return f"{self.owner}#{self.index + 1}"

    def __str__(self) -> str:
        binder = f"Λ{','.join(self.variables)}. " if self.variables else ""
        return f"{binder}{self.precondition} → G({self.contract})"


def _user(token: str, owner: str) -> str:
    return owner if token == ME else token


def compile_rule(rule: RuleAst, owner: str, index: int = 0) -> CompiledRule:
    """Template form, with variable names standing in for users."""
    pre = conj(Pred(p.name, tuple(_user(a, owner) for a in p.args)) for p in rule.preds)
    lhs = Bag(
        Limp(Atom(g.resource, _user(g.giver, owner)), Atom(g.resource, _user(g.receiver, owner)))
        for g in rule.gives
    )
    rhs = Bag([Limp(Atom(rule.resource, owner), Atom(rule.resource, rule.requester))])
    return CompiledRule(owner, index, rule, tuple(rule.variables()), pre, Contract(lhs, rhs))


def compile_ruleset(rs: Ruleset) -> tuple:
    return tuple(compile_rule(r, rs.owner, i) for i, r in enumerate(rs.rules))


@dataclass(frozen=True)
class Instance:
    """One ground instance ``pre → G(body)`` (or a bare ``G(body)``)."""

    formula: Omega
    pre: Union[Omega, None]
    body: Union[Contract, Bag]
    label: str = field(default="", compare=False)

    @property
    def lifted(self) -> G:
        return G(self.body)

    def discharged_by(self, atoms: frozenset) -> bool:
        if self.pre is None:
            return True
        return all(c in atoms for c in conjuncts(self.pre))


def ground_rule(rule: CompiledRule, universe: Iterable[str]) -> list[Instance]:
    out: list[Instance] = []
    ast = rule.rule
    for rho in assignments(ast, rule.owner, universe):
        if not admissible(ast, rho):
            continue
        if any(rho[g.giver] == rule.owner for g in ast.gives):
            continue
        pre = conj(Pred(p.name, tuple(rho[a] for a in p.args)) for p in ast.preds)
        lhs = Bag(
            Limp(Atom(g.resource, rho[g.giver]), Atom(g.resource, rho[g.receiver]))
            for g in ast.gives
        )
        rhs = Bag([Limp(Atom(ast.resource, rule.owner), Atom(ast.resource, rho[ast.requester]))])
        body = Contract(lhs, rhs)
        out.append(Instance(Imp(pre, G(body)), pre, body, rule.label))
    return out


@dataclass(frozen=True)
class GroundedTheory:
    """Every ground rule instance plus the compiled context.

    ``instances`` holds all instances (discharged or not), deduplicated by
    formula.  ``omega_star`` is the set of lifted formulas whose precondition
    holds in the context.
    """

    instances: tuple
    context: frozenset = frozenset()

    def full_omega(self) -> Bag:
        return Bag({w: 1 for w in {i.formula for i in self.instances} | set(self.context)})

    def discharged(self) -> list[Instance]:
        return [i for i in self.instances if i.discharged_by(self.context)]

    @property
    def omega_star(self) -> frozenset:
        return frozenset(i.lifted for i in self.discharged())

    def provider(self, lifted: G) -> Instance:
        """Deterministic choice of a discharged instance yielding ``lifted``."""
        options = [i for i in self.discharged() if i.lifted == lifted]
        return min(options, key=lambda i: i.formula.key())


def ground_rules(
    compiled: Iterable[CompiledRule], universe: Iterable[str], ctx_atoms: Iterable[Pred] = ()
) -> GroundedTheory:
    names = sorted(set(universe))
    seen: dict[Omega, Instance] = {}
    for rule in compiled:
        for inst in ground_rule(rule, names):
            seen.setdefault(inst.formula, inst)
    ordered = tuple(sorted(seen.values(), key=lambda i: i.formula.key()))
    return GroundedTheory(ordered, frozenset(ctx_atoms))


def theory_from_rulesets(
    rulesets: Mapping[str, Ruleset] | Iterable[Ruleset], ctx: Context, universe: Iterable[str]
) -> GroundedTheory:
    sets = rulesets.values() if isinstance(rulesets, Mapping) else rulesets
    compiled = [c for rs in sets for c in compile_ruleset(rs)]
    return ground_rules(compiled, universe, compile_context(ctx))


def encode_approval(grant: Transfer, payoff: Bag) -> Contract:
    return Contract(encode_exchange(payoff), Bag([limp_of(grant)]))


def theory_from_policies(policies: Mapping[str, ExchangePolicy]) -> GroundedTheory:
    """Encode explicit approvals ``tr ◁ exc`` as bare ``G(exc ⊸* tr)`` formulas."""
    seen: dict[Omega, Instance] = {}
    for owner in sorted(policies):
        for a in sorted(policies[owner].approvals):
            body = encode_approval(a.grant, a.payoff)
            seen.setdefault(G(body), Instance(G(body), None, body, owner))
    ordered = tuple(sorted(seen.values(), key=lambda i: i.formula.key()))
    return GroundedTheory(ordered, frozenset())


def approval_of(body: Contract) -> tuple[Transfer, Bag]:
    (grant,) = list(decode_exchange(body.rhs))
    return grant, decode_exchange(body.lhs)

