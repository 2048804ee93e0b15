"""Building explicit proofs from fairness certificates.

Proofs are assembled leaf first, in a fixed normal shape.  Read from the root
upwards:

1. ``l-weak`` drops every theory formula the exchange does not use;
2. ``l-cont`` duplicates context facts needed by several instances;
3. ``l-imp-left`` discharges each used rule instance's precondition;
4. ``l-cont`` copies each lifted contract as often as it is used;
5. ``g-left-theta`` / ``g-left-delta`` release the copies;
6. a chain of ``contract-split`` merges all contracts into one, which a
   single ``contract-left`` opens;
7. ``otimes-left-delta`` breaks the promised exchange into transfers;
8. the linear leaf moves atoms with ``limp-left`` over ``sigma-ax`` and
   reassembles the goal with ``otimes-right`` (joined by ``star-cut`` when
   the exchange fires in several steps).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

from .bag import Bag
from .compile import (
    GroundedTheory,
    Instance,
    encode_exchange,
    state_atoms,
    theory_from_rulesets,
)
from .decide import FairnessCertificate, exchange_cap, search, universe_of
from .logic import (
    EMPTY,
    STARCUT,
    STRICT,
    And,
    Atom,
    Contract,
    Limp,
    NLSequent,
    Omega,
    Pred,
    ProofNode,
    Sequent,
    Top,
    conjuncts,
)
from .model import CapExceeded, State, Unfair, apply_exchange
from .muac import Context, Ruleset


class SynthesisError(ValueError):
    pass


@dataclass(frozen=True)
class ProofPlan:
    instances: tuple          # (instance, multiplicity)
    merged_contract: Contract | None
    leaf_delta: Bag
    steps: tuple | None


# -- non-linear preconditions ------------------------------------------------


def precondition_proof(pre: Omega) -> ProofNode:
    """``atoms(pre) ⊩ pre`` for conjunctions of predicate atoms and ``⊤``."""
    if isinstance(pre, Top):
        return ProofNode("top-right", NLSequent(EMPTY, pre))
    if isinstance(pre, Pred):
        return ProofNode("omega-ax", NLSequent(Bag([pre]), pre))
    if isinstance(pre, And):
        left, right = precondition_proof(pre.left), precondition_proof(pre.right)
        omega = left.conclusion.omega + right.conclusion.omega
        return ProofNode("and-right", NLSequent(omega, pre), (left, right))
    raise SynthesisError(f"precondition {pre} is not a conjunction of atoms")


def precondition_atoms(pre: Omega | None) -> Bag:
    return Bag(conjuncts(pre)) if pre is not None else EMPTY


# -- linear leaf -------------------------------------------------------------


def _single_sigma(atoms: Iterable[Atom]) -> Bag:
    return Bag(Bag([a]) for a in atoms)


def _tensor_tree(leaves: list[ProofNode]) -> ProofNode:
    if not leaves:
        return ProofNode("i-right", Sequent())
    while len(leaves) > 1:
        merged = []
        for i in range(0, len(leaves) - 1, 2):
            a, b = leaves[i].conclusion, leaves[i + 1].conclusion
            concl = Sequent(EMPTY, a.theta + b.theta, a.delta + b.delta, a.sigma + b.sigma,
                            a.goal + b.goal)
            merged.append(ProofNode("otimes-right", concl, (leaves[i], leaves[i + 1])))
        if len(leaves) % 2:
            merged.append(leaves[-1])
        leaves = merged
    return leaves[0]


def single_step_leaf(atoms: Bag, moves: Sequence[Limp]) -> ProofNode:
    """``moves, atoms ⊢ result`` where every move consumes one of ``atoms``."""
    rest = atoms
    leaves: list[ProofNode] = []
    for x in sorted(moves):
        if rest.count(x.src) < 1:
            raise SynthesisError(f"{x.src} is not available for {x}")
        rest = rest.remove(x.src)
        ax = ProofNode("sigma-ax", Sequent(sigma=Bag([Bag([x.src])]), goal=Bag([x.src])))
        concl = Sequent(delta=Bag([Bag([x])]), sigma=Bag([Bag([x.src])]), goal=Bag([x.dst]))
        leaves.append(ProofNode("limp-left", concl, (ax,), x))
    for a in rest:
        leaves.append(ProofNode("sigma-ax", Sequent(sigma=Bag([Bag([a])]), goal=Bag([a]))))
    return _tensor_tree(leaves)


def _split_sigma(node: ProofNode, compound: Bag) -> ProofNode:
    """Replace the single-atom contexts of ``compound`` by one tensor."""
    parts = list(compound)
    if len(parts) <= 1:
        return node
    acc = Bag([parts[0]])
    current = node
    for a in parts[1:]:
        joined = acc.add(a)
        c = current.conclusion
        sigma = c.sigma.remove(acc).remove(Bag([a])).add(joined)
        current = ProofNode("otimes-left-sigma", Sequent(c.omega, c.theta, c.delta, sigma, c.goal),
                            (current,), joined)
        acc = joined
    return current


def _after(atoms: Bag, moves: Sequence[Limp]) -> Bag:
    out = atoms
    for x in moves:
        out = out.remove(x.src).add(x.dst)
    return out


def linear_leaf(atoms: Bag, steps: Sequence[Sequence[Limp]]) -> ProofNode:
    """Leaf for one step, or several steps nested left with ``star-cut``."""
    if len(steps) <= 1:
        return single_step_leaf(atoms, steps[0] if steps else ())
    acc = single_step_leaf(atoms, steps[0])
    state = _after(atoms, steps[0])
    for moves in steps[1:]:
        step = _split_sigma(single_step_leaf(state, moves), state)
        a, b = acc.conclusion, step.conclusion
        concl = Sequent(EMPTY, a.theta + b.theta, a.delta + b.delta,
                        a.sigma + b.sigma.remove(a.goal), b.goal)
        acc = ProofNode("star-cut", concl, (acc, step))
        state = _after(state, moves)
    return acc


# -- contract and theory layers ----------------------------------------------


def _replace(s: Sequent, **kw) -> Sequent:
    fields = dict(omega=s.omega, theta=s.theta, delta=s.delta, sigma=s.sigma, goal=s.goal)
    fields.update(kw)
    return Sequent(**fields)


def _merge_delta(node: ProofNode, parts: list[Limp]) -> ProofNode:
    """Fold single transfers of the context into the tensor of ``parts``."""
    if len(parts) <= 1:
        return node
    acc = Bag([parts[0]])
    current = node
    for x in parts[1:]:
        joined = acc.add(x)
        c = current.conclusion
        delta = c.delta.remove(acc).remove(Bag([x])).add(joined)
        current = ProofNode("otimes-left-delta", _replace(c, delta=delta), (current,), joined)
        acc = joined
    return current


def contract_layer(node: ProofNode, copies: list[Contract]) -> ProofNode:
    """Open the composition of ``copies`` with one ``contract-left``."""
    if not copies:
        return node
    merged = Contract(EMPTY, EMPTY)
    for t in copies:
        merged = Contract(merged.lhs + t.lhs, merged.rhs + t.rhs)
    c = node.conclusion
    current = ProofNode(
        "contract-left",
        _replace(c, theta=c.theta.add(merged), delta=c.delta.remove(merged.rhs)),
        (node,), merged,
    )
    # split the composition back into the individual copies, last one first
    for k in range(len(copies) - 1, 0, -1):
        head = Contract(EMPTY, EMPTY)
        for t in copies[:k]:
            head = Contract(head.lhs + t.lhs, head.rhs + t.rhs)
        whole = Contract(head.lhs + copies[k].lhs, head.rhs + copies[k].rhs)
        c = current.conclusion
        theta = c.theta.remove(whole).add(head).add(copies[k])
        current = ProofNode("contract-split", _replace(c, theta=theta), (current,))
    return current


def theory_layer(node: ProofNode, used: list[tuple[Instance, int]], omega_root: Bag) -> ProofNode:
    """Release, copy and discharge the used instances, then weaken the rest."""
    current = node
    for inst, k in used:
        lifted = inst.lifted
        rule = "g-left-theta" if isinstance(inst.body, Contract) else "g-left-delta"
        for _ in range(k):
            c = current.conclusion
            if rule == "g-left-theta":
                concl = _replace(c, omega=c.omega.add(lifted), theta=c.theta.remove(inst.body))
            else:
                concl = _replace(c, omega=c.omega.add(lifted), delta=c.delta.remove(inst.body))
            current = ProofNode(rule, concl, (current,), lifted)
        for _ in range(k - 1):
            c = current.conclusion
            current = ProofNode("l-cont", _replace(c, omega=c.omega.remove(lifted)), (current,), lifted)
    for inst, _ in used:
        if inst.pre is None:
            continue
        left = precondition_proof(inst.pre)
        c = current.conclusion
        omega = c.omega.remove(inst.lifted) + left.conclusion.omega + Bag([inst.formula])
        current = ProofNode("l-imp-left", _replace(c, omega=omega), (left, current), inst.formula)
    # context facts needed more than once
    for w, n in sorted(current.conclusion.omega.items()):
        if isinstance(w, Pred):
            for _ in range(n - 1):
                c = current.conclusion
                current = ProofNode("l-cont", _replace(c, omega=c.omega.remove(w)), (current,), w)
    have = current.conclusion.omega
    extra = omega_root - have if have <= omega_root else None
    if extra is None:
        raise SynthesisError("root theory does not contain the formulas the proof uses")
    for w in extra:
        c = current.conclusion
        current = ProofNode("l-weak", _replace(c, omega=c.omega.add(w)), (current,), w)
    return current


def minimal_sigma(atoms_moves: Sequence[Sequence[Limp]]) -> Bag:
    """Least starting holdings that let the steps fire in order."""
    need: dict[Atom, int] = {}
    balance: dict[Atom, int] = {}
    for moves in atoms_moves:
        out: dict[Atom, int] = {}
        for x in moves:
            out[x.src] = out.get(x.src, 0) + 1
        for a, k in out.items():
            need[a] = max(need.get(a, 0), k - balance.get(a, 0))
        for x in moves:
            balance[x.src] = balance.get(x.src, 0) - 1
            balance[x.dst] = balance.get(x.dst, 0) + 1
    return Bag({a: k for a, k in need.items() if k > 0})


def _steps_of(cert: FairnessCertificate) -> list[list[Limp]]:
    if cert.firing is not None:
        groups = [list(encode_exchange(step)) for step in cert.firing]
    else:
        groups = [list(encode_exchange(cert.exchange))] if cert.exchange else []
    return [g for g in groups if g]


def plan_proof(cert: FairnessCertificate, theory: GroundedTheory) -> ProofPlan:
    used = []
    for lifted, k in cert.uses:
        used.append((theory.provider(lifted), k))
    merged = None
    for inst, k in used:
        if isinstance(inst.body, Contract):
            for _ in range(k):
                merged = inst.body if merged is None else \
                    Contract(merged.lhs + inst.body.lhs, merged.rhs + inst.body.rhs)
    steps = _steps_of(cert)
    return ProofPlan(tuple(used), merged, encode_exchange(cert.exchange),
                     tuple(tuple(s) for s in steps) if cert.firing is not None else None)


def build_proof(cert: FairnessCertificate, theory: GroundedTheory, st: State,
                sliced: bool = False) -> ProofNode:
    """Normal-form proof of ``Ω; ⟦st⟧ ⊢ ⟦st'⟧`` for the certified exchange.

    With ``sliced`` the conclusion keeps only the used theory, the consumed
    atoms and the produced ones.
    """
    plan = plan_proof(cert, theory)
    steps = _steps_of(cert)
    if sliced:
        atoms = minimal_sigma(steps)
    else:
        atoms = state_atoms(st)
    leaf = linear_leaf(atoms, steps)

    # Δ: the merged promise plus each bare exchange offer, broken into transfers
    copies: list[Contract] = []
    offers: list[Bag] = []
    for inst, k in plan.instances:
        if isinstance(inst.body, Contract):
            copies.extend([inst.body] * k)
        else:
            offers.extend([inst.body] * k)
    node = leaf
    for d in offers:
        node = _merge_delta(node, list(d))
    if plan.merged_contract is not None:
        node = _merge_delta(node, list(plan.merged_contract.rhs))
    node = contract_layer(node, copies)

    if sliced:
        omega_root = Bag({i.formula: 1 for i, _ in plan.instances})
        facts: set = set()
        for inst, _ in plan.instances:
            facts |= set(precondition_atoms(inst.pre).distinct())
        omega_root = omega_root + Bag({w: 1 for w in facts})
    else:
        omega_root = theory.full_omega()
    return theory_layer(node, list(plan.instances), omega_root)


def synthesize_proof(cert: FairnessCertificate, rulesets: Mapping[str, Ruleset], ctx: Context,
                     st: State, st_target: State | None = None, mode: str | None = None,
                     universe: Iterable[str] | None = None, sliced: bool = False) -> ProofNode:
    targets = [st_target] if st_target is not None else []
    names = list(universe) if universe is not None else universe_of(rulesets, ctx, st, *targets)
    theory = theory_from_rulesets(rulesets, ctx, names)
    if mode is not None and mode != cert.mode and mode == STRICT and cert.firing and len(cert.firing) > 1:
        raise SynthesisError("a multi-step certificate needs star-cut")
    return build_proof(cert, theory, st, sliced)


def slice_proof(theory: GroundedTheory, st: State, cert: FairnessCertificate) -> tuple:
    proof = build_proof(cert, theory, st, sliced=True)
    c = proof.conclusion
    return c.omega, c.sigma, proof


def slice(rulesets: Mapping[str, Ruleset], ctx: Context, st: State, cert: FairnessCertificate,
          universe: Iterable[str] | None = None) -> tuple:
    names = list(universe) if universe is not None else universe_of(rulesets, ctx, st)
    theory = theory_from_rulesets(rulesets, ctx, names)
    return slice_proof(theory, st, cert)


def proof_mode(p: ProofNode) -> str:
    return STARCUT if "star-cut" in p.rules() else STRICT


@dataclass(frozen=True)
class Computation:
    firing: tuple
    final: State
    proof: ProofNode
    certificate: FairnessCertificate


def fair_st_theory(theory: GroundedTheory, st: State, usr: str, goals: Sequence[str],
                   mode: str = STARCUT, cap: int | None = None,
                   sliced: bool = False) -> Computation | None:
    if not goals:
        raise ValueError("at least one goal resource is required")
    wanted = list(goals)

    def accept(final: State) -> bool:
        return all(final.get(usr, r) >= 1 for r in wanted)

    limit = exchange_cap() if cap is None else cap
    cert = search(theory, st, accept, mode, limit)
    if isinstance(cert, Unfair):
        if cert.reason == "cap":
            raise CapExceeded(f"no fair computation within {limit} transfers")
        return None
    firing = cert.firing if cert.firing is not None else ((cert.exchange,) if cert.exchange else ())
    final = st
    for step in firing:
        final = apply_exchange(final, step)
    proof = build_proof(cert, theory, st, sliced)
    return Computation(tuple(firing), final, proof, cert)


def fair_st(rulesets: Mapping[str, Ruleset], ctx: Context, st: State, usr: str,
            goals: Sequence[str], cap: int | None = None, mode: str = STARCUT,
            universe: Iterable[str] | None = None, sliced: bool = False) -> Computation | None:
    """An eventually fair computation giving ``usr`` every resource in ``goals``.

    Raises :class:`CapExceeded` when candidates beyond the cap exist and none
    within it works; returns ``None`` when the search space is exhausted.
    """
    names = set(universe) if universe is not None else set(universe_of(rulesets, ctx, st))
    names.add(usr)
    theory = theory_from_rulesets(rulesets, ctx, sorted(names))
    return fair_st_theory(theory, st, usr, goals, mode, cap, sliced)
