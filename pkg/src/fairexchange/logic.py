"""Formulas, sequents and proof objects of the contract logic, plus a checker.

Linear formulas are kept in canonical form: a state formula (sigma) is a
multiset of atoms ``res@usr``, an exchange formula (delta) is a multiset of
single-step implications, and a contract (theta) pairs two exchange formulas.
Non-linear formulas (omega) are ordinary trees.

Every proof node carries its full conclusion, so the checker validates each
node locally against its premises and never reconstructs a sequent.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from typing import Any, Iterable, NamedTuple, Union

from .bag import Bag, split_diff

STRICT = "strict"
STARCUT = "starcut"
MODES = (STRICT, STARCUT)


class Atom(NamedTuple):
    res: str
    usr: str

    def __str__(self) -> str:
        return f"{self.res}@{self.usr}"


class Limp(NamedTuple):
    """A single transfer ``src ⊸ dst``."""

    src: Atom
    dst: Atom

    def __str__(self) -> str:
        return f"{self.src} ⊸ {self.dst}"


@dataclass(frozen=True)
class Contract:
    """``lhs ⊸* rhs``: promise ``rhs`` provided ``lhs`` happens."""

    lhs: Bag
    rhs: Bag

    def __lt__(self, other: "Contract") -> bool:
        return (self.lhs.items(), self.rhs.items()) < (other.lhs.items(), other.rhs.items())

    def __str__(self) -> str:
        return f"{show_delta(self.lhs, True)} ⊸* {show_delta(self.rhs, True)}"


class Omega:
    """Base class of non-linear formulas."""

    __slots__ = ()

    def key(self) -> tuple:
        raise NotImplementedError

    def __lt__(self, other: "Omega") -> bool:
        return self.key() < other.key()


@dataclass(frozen=True)
class Top(Omega):
    def key(self) -> tuple:
        return (0,)

    def __str__(self) -> str:
        return "⊤"


@dataclass(frozen=True)
class Pred(Omega):
    name: str
    args: tuple

    def key(self) -> tuple:
        return (1, self.name, self.args)

    def __str__(self) -> str:
        return f"{self.name}({', '.join(self.args)})"


@dataclass(frozen=True)
class And(Omega):
    left: Omega
    right: Omega

    def key(self) -> tuple:
        return (2, self.left.key(), self.right.key())

    def __str__(self) -> str:
        return f"({self.left} ∧ {self.right})"


@dataclass(frozen=True)
class Imp(Omega):
    left: Omega
    right: Omega

    def key(self) -> tuple:
        return (3, self.left.key(), self.right.key())

    def __str__(self) -> str:
        return f"{self.left} → {self.right}"


@dataclass(frozen=True)
class G(Omega):
    """Lift of a contract or an exchange formula into reusable knowledge."""

    body: Union[Contract, Bag]

    def key(self) -> tuple:
        if isinstance(self.body, Contract):
            return (4, self.body.lhs.items(), self.body.rhs.items())
        return (5, self.body.items())

    def __str__(self) -> str:
        if isinstance(self.body, Contract):
            return f"G({self.body})"
        return f"G({show_delta(self.body)})"


TOP = Top()
EMPTY = Bag()


def conj(parts: Iterable[Omega]) -> Omega:
    """Right-nested conjunction; ``⊤`` for no parts."""
    items = list(parts)
    if not items:
        return TOP
    out = items[-1]
    for w in reversed(items[:-1]):
        out = And(w, out)
    return out


def conjuncts(w: Omega) -> list[Omega]:
    if isinstance(w, And):
        return conjuncts(w.left) + conjuncts(w.right)
    if isinstance(w, Top):
        return []
    return [w]


def show_sigma(s: Bag) -> str:
    return " ⊗ ".join(str(a) for a in s) if s else "I"


def show_delta(d: Bag, paren: bool = False) -> str:
    if not d:
        return "I"
    parts = [f"({x})" if paren or len(d) > 1 else str(x) for x in d]
    return " ⊗ ".join(parts)


def canonicalize(formula: Any) -> Any:
    """Flatten tensor structure into canonical multisets.

    Accepts atoms, implications, ``None`` (the unit ``I``), nested lists or
    tuples standing for ``⊗``, bags, contracts and omega formulas.
    """
    if isinstance(formula, Contract):
        return Contract(canonicalize(formula.lhs), canonicalize(formula.rhs))
    if isinstance(formula, G):
        return G(canonicalize(formula.body))
    if isinstance(formula, And):
        return And(canonicalize(formula.left), canonicalize(formula.right))
    if isinstance(formula, Imp):
        return Imp(canonicalize(formula.left), canonicalize(formula.right))
    if isinstance(formula, Omega):
        return formula
    return Bag(_flatten(formula))


def _flatten(x: Any) -> Iterable:
    if x is None:
        return
    if isinstance(x, (Atom, Limp)):
        yield x
    elif isinstance(x, Bag):
        yield from x
    elif isinstance(x, (list, tuple)):
        for part in x:
            yield from _flatten(part)
    else:
        raise TypeError(f"not a linear formula: {x!r}")


# -- sequents and proofs -----------------------------------------------------


@dataclass(frozen=True)
class Sequent:
    """``omega; theta, delta, sigma ⊢ goal``.

    ``theta`` is a multiset of contracts, ``delta`` a multiset of exchange
    formulas (bags of implications) and ``sigma`` a multiset of state
    formulas (bags of atoms).
    """

    omega: Bag = EMPTY
    theta: Bag = EMPTY
    delta: Bag = EMPTY
    sigma: Bag = EMPTY
    goal: Bag = EMPTY

    def is_initial(self) -> bool:
        return not self.theta and not self.delta

    def __str__(self) -> str:
        left = []
        left += [str(t) for t in self.theta]
        left += [show_delta(d) for d in self.delta]
        left += [show_sigma(s) for s in self.sigma]
        om = ", ".join(str(w) for w in self.omega)
        return f"{om}; {', '.join(left)} ⊢ {show_sigma(self.goal)}"


@dataclass(frozen=True)
class NLSequent:
    omega: Bag = EMPTY
    goal: Omega = TOP

    def __str__(self) -> str:
        return f"{', '.join(str(w) for w in self.omega)} ⊩ {self.goal}"


@dataclass(frozen=True)
class ProofNode:
    rule: str
    conclusion: Union[Sequent, NLSequent]
    premises: tuple = ()
    principal: Any = None

    def size(self) -> int:
        total, stack = 0, [self]
        while stack:
            node = stack.pop()
            total += 1
            stack.extend(node.premises)
        return total

    def rules(self) -> list[str]:
        out, stack = [], [self]
        while stack:
            node = stack.pop()
            out.append(node.rule)
            stack.extend(node.premises)
        return out


ARITY = {
    "top-right": 0, "omega-ax": 0, "cont": 1, "weak": 1, "and-left1": 1, "and-left2": 1,
    "and-right": 2, "imp-left": 2, "imp-right": 1, "l-cont": 1, "l-weak": 1,
    "l-and-left1": 1, "l-and-left2": 1, "l-imp-left": 2, "i-right": 0, "sigma-ax": 0,
    "otimes-left-theta": 1, "otimes-left-delta": 1, "otimes-left-sigma": 1,
    "otimes-right": 2, "limp-left": 1, "contract-left": 1, "contract-split": 1,
    "g-left-theta": 1, "g-left-delta": 1, "omega-cut": 2, "star-cut": 2,
}
RULES = tuple(ARITY)

RULE_MISMATCH = "RuleMismatch"
SIDE_CONDITION = "SideConditionFailed"
ARITY_MISMATCH = "ArityMismatch"
STAR_CUT_FORBIDDEN = "StarCutForbidden"
NOT_SUBSUMED = "NotSubsumed"
MALFORMED = "MalformedProof"
CONSERVATION = "ConservationViolated"


@dataclass(frozen=True)
class Valid:
    nodes: int = 0

    def __bool__(self) -> bool:
        return True


@dataclass(frozen=True)
class Invalid:
    path: tuple
    reason: str
    detail: str = ""
    rule: str = ""

    def __bool__(self) -> bool:
        return False

    def __str__(self) -> str:
        where = "/".join(str(i) for i in self.path) or "root"
        return f"{self.reason} at {where} ({self.rule}): {self.detail}"


class _Fail(Exception):
    def __init__(self, reason: str, detail: str) -> None:
        super().__init__(detail)
        self.reason = reason
        self.detail = detail


def _require(cond: bool, detail: str, reason: str = RULE_MISMATCH) -> None:
    if not cond:
        raise _Fail(reason, detail)


def _lin(s: Any) -> bool:
    return isinstance(s, Sequent)


def _nl(s: Any) -> bool:
    return isinstance(s, NLSequent)


def _single(b: Bag) -> Any:
    return b.distinct()[0] if len(b) == 1 else None


def _same_linear(a: Sequent, b: Sequent) -> bool:
    return a.theta == b.theta and a.delta == b.delta and a.sigma == b.sigma and a.goal == b.goal


def _check_principal(node: ProofNode, found: Any) -> None:
    if node.principal is not None:
        _require(node.principal == found, f"principal {node.principal} does not match {found}")


# non-linear structural cores shared by the plain and the L- variants


def _cont_core(c_omega: Bag, p_omega: Bag) -> Omega:
    only_c, only_p = split_diff(c_omega, p_omega)
    w = _single(only_p)
    _require(not only_c and w is not None and w in c_omega, "premise must duplicate one formula")
    return w


def _weak_core(c_omega: Bag, p_omega: Bag) -> Omega:
    only_c, only_p = split_diff(c_omega, p_omega)
    w = _single(only_c)
    _require(not only_p and w is not None, "conclusion must add exactly one formula")
    return w


def _and_left_core(c_omega: Bag, p_omega: Bag, side: int) -> Omega:
    only_c, only_p = split_diff(c_omega, p_omega)
    w, part = _single(only_c), _single(only_p)
    _require(isinstance(w, And) and part is not None, "expected one conjunction replaced by a side")
    _require(part == (w.left if side == 1 else w.right), "premise holds the wrong conjunct")
    return w


def _imp_left_core(node: ProofNode, c_omega: Bag, left: NLSequent, right_omega: Bag) -> Omega:
    w = left.goal
    for x in right_omega.distinct():
        imp = Imp(w, x)
        if node.principal is not None and node.principal != imp:
            continue
        if imp in c_omega and c_omega == left.omega + right_omega.remove(x) + Bag([imp]):
            return imp
    raise _Fail(RULE_MISMATCH, "no implication in the conclusion splits the contexts")


def _merge_core(c_part: Bag, p_part: Bag) -> Any:
    """Conclusion has ``x ⊗ y`` where the premise has ``x, y``."""
    only_c, only_p = split_diff(c_part, p_part)
    if len(only_c) == 1 and len(only_p) == 2:
        x, y = list(only_p)
        merged = _single(only_c)
        _require(x + y == merged, "premise parts do not form the conclusion's tensor")
        return merged
    if not only_c and len(only_p) == 1 and _single(only_p) == EMPTY and c_part:
        return c_part.distinct()[0]
    raise _Fail(RULE_MISMATCH, "expected one tensor split into two parts")


def _check_node(node: ProofNode, mode: str) -> None:
    rule, c, ps = node.rule, node.conclusion, node.premises
    if rule not in ARITY:
        raise _Fail(RULE_MISMATCH, f"unknown rule {rule!r}")
    if len(ps) != ARITY[rule]:
        raise _Fail(ARITY_MISMATCH, f"{rule} takes {ARITY[rule]} premises, got {len(ps)}")
    pc = [p.conclusion for p in ps]

    if rule == "top-right":
        _require(_nl(c) and not c.omega and c.goal == TOP, "expected ⊩ ⊤ with empty context")
    elif rule == "omega-ax":
        _require(_nl(c) and len(c.omega) == 1 and _single(c.omega) == c.goal, "expected ω ⊩ ω")
    elif rule in ("cont", "weak", "and-left1", "and-left2", "imp-right"):
        _require(_nl(c) and _nl(pc[0]), "non-linear rule on a linear sequent")
        p = pc[0]
        if rule == "imp-right":
            _require(isinstance(c.goal, Imp), "goal is not an implication")
            _require(p.goal == c.goal.right and p.omega == c.omega.add(c.goal.left),
                     "premise must assume the antecedent")
            _check_principal(node, c.goal)
            return
        _require(p.goal == c.goal, "goal changed")
        if rule == "cont":
            found = _cont_core(c.omega, p.omega)
        elif rule == "weak":
            found = _weak_core(c.omega, p.omega)
        else:
            found = _and_left_core(c.omega, p.omega, 1 if rule == "and-left1" else 2)
        _check_principal(node, found)
    elif rule == "and-right":
        _require(_nl(c) and _nl(pc[0]) and _nl(pc[1]), "non-linear rule on a linear sequent")
        _require(isinstance(c.goal, And), "goal is not a conjunction")
        _require(pc[0].goal == c.goal.left and pc[1].goal == c.goal.right, "premise goals differ")
        _require(c.omega == pc[0].omega + pc[1].omega, "contexts do not add up")
    elif rule == "imp-left":
        _require(_nl(c) and _nl(pc[0]) and _nl(pc[1]), "non-linear rule on a linear sequent")
        _require(pc[1].goal == c.goal, "goal changed")
        _imp_left_core(node, c.omega, pc[0], pc[1].omega)
    elif rule in ("l-cont", "l-weak", "l-and-left1", "l-and-left2"):
        _require(_lin(c) and _lin(pc[0]) and _same_linear(c, pc[0]),
                 "L-rule must leave the linear part unchanged")
        p = pc[0]
        if rule == "l-cont":
            found = _cont_core(c.omega, p.omega)
        elif rule == "l-weak":
            found = _weak_core(c.omega, p.omega)
        else:
            found = _and_left_core(c.omega, p.omega, 1 if rule == "l-and-left1" else 2)
        _check_principal(node, found)
    elif rule == "l-imp-left":
        _require(_lin(c) and _nl(pc[0]) and _lin(pc[1]), "expected ⊩ and ⊢ premises")
        _require(_same_linear(c, pc[1]), "linear part changed")
        _imp_left_core(node, c.omega, pc[0], pc[1].omega)
    elif rule == "i-right":
        _require(_lin(c) and not (c.omega or c.theta or c.delta or c.sigma or c.goal),
                 "expected ⊢ I with every context empty")
    elif rule == "sigma-ax":
        _require(_lin(c) and not c.theta and not c.delta, "axiom with contracts or exchanges")
        _require(len(c.goal) == 1 and len(c.sigma) == 1 and _single(c.sigma) == c.goal,
                 "expected res@usr ⊢ res@usr")
    elif rule == "otimes-left-theta":
        raise _Fail(RULE_MISMATCH, "contracts have no tensor form, rule never applies")
    elif rule in ("otimes-left-delta", "otimes-left-sigma"):
        p = pc[0]
        _require(_lin(c) and _lin(p), "linear rule on a non-linear sequent")
        _require(c.omega == p.omega and c.theta == p.theta and c.goal == p.goal, "context changed")
        if rule == "otimes-left-delta":
            _require(c.sigma == p.sigma, "state context changed")
            found = _merge_core(c.delta, p.delta)
        else:
            _require(c.delta == p.delta, "exchange context changed")
            found = _merge_core(c.sigma, p.sigma)
        _check_principal(node, found)
    elif rule == "otimes-right":
        _require(_lin(c) and _lin(pc[0]) and _lin(pc[1]), "linear rule on a non-linear sequent")
        a, b = pc
        _require(c.omega == a.omega == b.omega, "non-linear context must be shared")
        _require(c.theta == a.theta + b.theta and c.delta == a.delta + b.delta
                 and c.sigma == a.sigma + b.sigma, "linear contexts do not add up")
        _require(c.goal == a.goal + b.goal, "goal is not the tensor of the premise goals")
    elif rule == "limp-left":
        p = pc[0]
        _require(_lin(c) and _lin(p), "linear rule on a non-linear sequent")
        _require(not c.theta and not p.theta and not p.delta, "contracts or extra exchanges present")
        d = _single(c.delta)
        imp = _single(d) if d is not None else None
        _require(isinstance(imp, Limp), "exchange context must be one implication")
        _require(c.omega == p.omega and c.sigma == p.sigma, "contexts changed")
        _require(p.goal == Bag([imp.src]) and c.goal == Bag([imp.dst]),
                 "goals do not match the implication")
        _check_principal(node, imp)
    elif rule == "contract-left":
        p = pc[0]
        _require(_lin(c) and _lin(p), "linear rule on a non-linear sequent")
        _require(c.omega == p.omega and c.sigma == p.sigma and c.goal == p.goal, "context changed")
        only_c, only_p = split_diff(c.theta, p.theta)
        t = _single(only_c)
        _require(not only_p and isinstance(t, Contract), "expected one contract opened")
        _require(p.delta == c.delta.add(t.rhs), "premise must receive the promised exchange")
        _check_principal(node, t)
        _require(t.lhs <= t.rhs, f"requirement {show_delta(t.lhs)} not met by {show_delta(t.rhs)}",
                 SIDE_CONDITION)
    elif rule == "contract-split":
        p = pc[0]
        _require(_lin(c) and _lin(p), "linear rule on a non-linear sequent")
        _require(c.omega == p.omega and c.delta == p.delta and c.sigma == p.sigma
                 and c.goal == p.goal, "context changed")
        only_c, only_p = split_diff(c.theta, p.theta)
        if len(only_c) == 2 and len(only_p) == 1:
            t1, t2 = list(only_c)
            merged = _single(only_p)
            _require(merged.lhs == t1.lhs + t2.lhs and merged.rhs == t1.rhs + t2.rhs,
                     "premise contract is not the composition")
        else:
            unit = Contract(EMPTY, EMPTY)
            _require(len(only_c) == 1 and not only_p and _single(only_c) == unit
                     and len(c.theta) >= 2, "expected two contracts composed into one")
    elif rule in ("g-left-theta", "g-left-delta"):
        p = pc[0]
        _require(_lin(c) and _lin(p), "linear rule on a non-linear sequent")
        _require(c.sigma == p.sigma and c.goal == p.goal, "context changed")
        only_c, only_p = split_diff(c.omega, p.omega)
        g = _single(only_c)
        _require(not only_p and isinstance(g, G), "expected one G formula released")
        if rule == "g-left-theta":
            _require(isinstance(g.body, Contract), "G body is not a contract")
            _require(c.delta == p.delta and p.theta == c.theta.add(g.body),
                     "contract not moved to the linear context")
        else:
            _require(isinstance(g.body, Bag), "G body is not an exchange")
            _require(c.theta == p.theta and p.delta == c.delta.add(g.body),
                     "exchange not moved to the linear context")
        _check_principal(node, g)
    elif rule == "omega-cut":
        _require(_lin(c) and _nl(pc[0]) and _lin(pc[1]), "expected ⊩ and ⊢ premises")
        left, right = pc
        _require(_same_linear(c, right), "linear part changed")
        w = left.goal
        _require(w in right.omega, "cut formula missing from the right premise")
        _require(c.omega == left.omega + right.omega.remove(w), "contexts do not add up")
    elif rule == "star-cut":
        if mode == STRICT:
            raise _Fail(STAR_CUT_FORBIDDEN, "star-cut is not allowed in strict mode")
        _require(_lin(c) and _lin(pc[0]) and _lin(pc[1]), "linear rule on a non-linear sequent")
        a, b = pc
        _require(a.goal in b.sigma, "cut state missing from the right premise")
        _require(c.goal == b.goal, "goal changed")
        _require(c.omega == a.omega + b.omega and c.theta == a.theta + b.theta
                 and c.delta == a.delta + b.delta, "contexts do not add up")
        _require(c.sigma == a.sigma + b.sigma.remove(a.goal), "state contexts do not add up")


def flat_sigma(sigma: Bag) -> Bag:
    out = EMPTY
    for s in sigma:
        out = out + s
    return out


def asub(x: Any) -> set:
    """Atomic linear subformulas."""
    if isinstance(x, Atom):
        return {x}
    if isinstance(x, Limp):
        return {x.src, x.dst}
    if isinstance(x, Contract):
        return asub(x.lhs) | asub(x.rhs)
    if isinstance(x, G):
        return asub(x.body)
    if isinstance(x, (And, Imp)):
        return asub(x.left) | asub(x.right)
    if isinstance(x, Omega):
        return set()
    if isinstance(x, Bag):
        out: set = set()
        for y in x.distinct():
            out |= asub(y)
        return out
    raise TypeError(f"not a formula: {x!r}")


def conservation_violation(s: Sequent) -> str | None:
    """Quantity and atom-closure properties every valid initial sequent has."""
    flat = flat_sigma(s.sigma)
    if len(flat) != len(s.goal):
        return f"{len(flat)} atoms on the left but {len(s.goal)} in the goal"
    missing = asub(s.goal) - asub(s.omega) - asub(s.sigma)
    if missing:
        return "goal atoms not closed: " + ", ".join(sorted(str(a) for a in missing))
    return None


def check_proof(p: ProofNode, mode: str = STRICT) -> Valid | Invalid:
    """Validate every node of ``p``; each node is visited exactly once."""
    if mode not in MODES:
        raise ValueError(f"unknown mode {mode!r}")
    visits = 0
    stack: list[tuple[ProofNode, tuple]] = [(p, ())]
    while stack:
        node, path = stack.pop()
        visits += 1
        if not isinstance(node, ProofNode):
            return Invalid(path, MALFORMED, "not a proof node")
        try:
            _check_node(node, mode)
        except _Fail as fail:
            return Invalid(path, fail.reason, fail.detail, node.rule)
        except (AttributeError, TypeError) as exc:
            return Invalid(path, RULE_MISMATCH, f"ill-typed formula: {exc}", node.rule)
        for i, q in enumerate(node.premises):
            stack.append((q, path + (i,)))
    root = p.conclusion
    if _lin(root) and root.is_initial():
        problem = conservation_violation(root)
        if problem:
            return Invalid((), CONSERVATION, problem, p.rule)
    return Valid(visits)


def check_reduced_against(p: ProofNode, full_omega: Bag, full_sigma: Bag) -> Valid | Invalid:
    """Does ``p``'s conclusion use only theory and resources from the full sequent?

    ``full_sigma`` may be a multiset of state formulas or of atoms; state
    contexts are compared after flattening into atoms.
    """
    c = p.conclusion
    if not _lin(c):
        return Invalid((), NOT_SUBSUMED, "conclusion is not a linear sequent")
    if not c.is_initial():
        return Invalid((), NOT_SUBSUMED, "conclusion has open contracts or exchanges")
    for w in c.omega.distinct():
        if w not in full_omega:
            return Invalid((), NOT_SUBSUMED, f"{w} is not part of the registered theory")
    full_atoms = full_sigma if all(isinstance(x, Atom) for x in full_sigma.distinct()) \
        else flat_sigma(full_sigma)
    used = flat_sigma(c.sigma)
    for a, n in used.items():
        if full_atoms.count(a) < n:
            return Invalid((), NOT_SUBSUMED, f"{a} is not available ({full_atoms.count(a)} < {n})")
    return Valid(0)


# -- JSON encoding -----------------------------------------------------------


class MalformedProofError(ValueError):
    pass


def _canon_list(items: Iterable[Any]) -> list:
    return sorted(items, key=lambda x: json.dumps(x, sort_keys=True, ensure_ascii=False))


def atom_to_json(a: Atom) -> dict:
    return {"at": {"res": a.res, "usr": a.usr}}


def sigma_to_json(s: Bag) -> list:
    return _canon_list(atom_to_json(a) for a in s)


def delta_to_json(d: Bag) -> list:
    return _canon_list({"limp": [atom_to_json(x.src), atom_to_json(x.dst)]} for x in d)


def contract_to_json(t: Contract) -> dict:
    return {"contract": [delta_to_json(t.lhs), delta_to_json(t.rhs)]}


def omega_to_json(w: Omega) -> dict:
    if isinstance(w, Top):
        return {"top": True}
    if isinstance(w, Pred):
        return {"pred": {"name": w.name, "args": list(w.args)}}
    if isinstance(w, And):
        return {"and": [omega_to_json(w.left), omega_to_json(w.right)]}
    if isinstance(w, Imp):
        return {"imp": [omega_to_json(w.left), omega_to_json(w.right)]}
    if isinstance(w, G):
        body = contract_to_json(w.body) if isinstance(w.body, Contract) else delta_to_json(w.body)
        return {"G": body}
    raise TypeError(f"not an omega formula: {w!r}")


def formula_to_json(x: Any) -> Any:
    if x is None:
        return None
    if isinstance(x, Omega):
        return omega_to_json(x)
    if isinstance(x, Contract):
        return contract_to_json(x)
    if isinstance(x, Limp):
        return {"limp": [atom_to_json(x.src), atom_to_json(x.dst)]}
    if isinstance(x, Atom):
        return atom_to_json(x)
    if isinstance(x, Bag):
        items = x.distinct()
        if items and isinstance(items[0], Atom):
            return {"sigma": sigma_to_json(x)}
        return {"delta": delta_to_json(x)}
    raise TypeError(f"cannot encode {x!r}")


def sequent_to_json(s: Union[Sequent, NLSequent]) -> dict:
    if isinstance(s, NLSequent):
        return {"kind": "nl", "omega": _canon_list(omega_to_json(w) for w in s.omega),
                "goal": omega_to_json(s.goal)}
    return {
        "kind": "lin",
        "omega": _canon_list(omega_to_json(w) for w in s.omega),
        "theta": _canon_list(contract_to_json(t) for t in s.theta),
        "delta": _canon_list(delta_to_json(d) for d in s.delta),
        "sigma": _canon_list(sigma_to_json(x) for x in s.sigma),
        "goal": sigma_to_json(s.goal),
    }


def proof_to_json(p: ProofNode) -> dict:
    memo: dict[int, dict] = {}

    def enc(node: ProofNode) -> dict:
        key = id(node)
        if key not in memo:
            memo[key] = {
                "rule": node.rule,
                "conclusion": sequent_to_json(node.conclusion),
                "principal": formula_to_json(node.principal),
                "premises": [enc(q) for q in node.premises],
            }
        return memo[key]

    return _iterative_encode(p, enc)


def _iterative_encode(p: ProofNode, enc: Any) -> dict:
    # encode deepest nodes first so the recursive encoder never goes deep
    order: list[ProofNode] = []
    stack = [p]
    while stack:
        node = stack.pop()
        order.append(node)
        stack.extend(node.premises)
    for node in reversed(order):
        enc(node)
    return enc(p)


def _bad(msg: str) -> MalformedProofError:
    return MalformedProofError(msg)


def _str(x: Any) -> str:
    if not isinstance(x, str) or not x:
        raise _bad(f"expected a non-empty string, got {x!r}")
    return x


def atom_from_json(x: Any) -> Atom:
    if not isinstance(x, dict) or set(x) != {"at"} or not isinstance(x["at"], dict):
        raise _bad(f"expected an atom, got {x!r}")
    body = x["at"]
    if set(body) != {"res", "usr"}:
        raise _bad(f"bad atom fields {sorted(body)}")
    return Atom(_str(body["res"]), _str(body["usr"]))


def _list(x: Any) -> list:
    if not isinstance(x, list):
        raise _bad(f"expected a list, got {type(x).__name__}")
    return x


def limp_from_json(x: Any) -> Limp:
    if not isinstance(x, dict) or set(x) != {"limp"}:
        raise _bad(f"expected an implication, got {x!r}")
    pair = _list(x["limp"])
    if len(pair) != 2:
        raise _bad("implication needs two atoms")
    return Limp(atom_from_json(pair[0]), atom_from_json(pair[1]))


def sigma_from_json(x: Any) -> Bag:
    return Bag(atom_from_json(a) for a in _list(x))


def delta_from_json(x: Any) -> Bag:
    return Bag(limp_from_json(a) for a in _list(x))


def contract_from_json(x: Any) -> Contract:
    if not isinstance(x, dict) or set(x) != {"contract"}:
        raise _bad(f"expected a contract, got {x!r}")
    pair = _list(x["contract"])
    if len(pair) != 2:
        raise _bad("contract needs two exchange formulas")
    return Contract(delta_from_json(pair[0]), delta_from_json(pair[1]))


def omega_from_json(x: Any) -> Omega:
    if not isinstance(x, dict) or len(x) != 1:
        raise _bad(f"expected an omega formula, got {x!r}")
    (tag, body), = x.items()
    if tag == "top":
        if body is not True:
            raise _bad("top must be true")
        return TOP
    if tag == "pred":
        if not isinstance(body, dict) or set(body) != {"name", "args"}:
            raise _bad("bad predicate")
        return Pred(_str(body["name"]), tuple(_str(a) for a in _list(body["args"])))
    if tag in ("and", "imp"):
        pair = _list(body)
        if len(pair) != 2:
            raise _bad(f"{tag} needs two operands")
        cls = And if tag == "and" else Imp
        return cls(omega_from_json(pair[0]), omega_from_json(pair[1]))
    if tag == "G":
        if isinstance(body, dict):
            return G(contract_from_json(body))
        return G(delta_from_json(body))
    raise _bad(f"unknown formula tag {tag!r}")


def formula_from_json(x: Any) -> Any:
    if x is None:
        return None
    if not isinstance(x, dict) or len(x) != 1:
        raise _bad(f"bad principal {x!r}")
    tag = next(iter(x))
    if tag == "at":
        return atom_from_json(x)
    if tag == "limp":
        return limp_from_json(x)
    if tag == "contract":
        return contract_from_json(x)
    if tag == "sigma":
        return sigma_from_json(x["sigma"])
    if tag == "delta":
        return delta_from_json(x["delta"])
    return omega_from_json(x)


def sequent_from_json(x: Any) -> Union[Sequent, NLSequent]:
    if not isinstance(x, dict):
        raise _bad("sequent must be an object")
    kind = x.get("kind")
    if kind == "nl":
        if set(x) != {"kind", "omega", "goal"}:
            raise _bad("bad non-linear sequent fields")
        return NLSequent(Bag(omega_from_json(w) for w in _list(x["omega"])), omega_from_json(x["goal"]))
    if kind == "lin":
        if set(x) != {"kind", "omega", "theta", "delta", "sigma", "goal"}:
            raise _bad("bad linear sequent fields")
        return Sequent(
            Bag(omega_from_json(w) for w in _list(x["omega"])),
            Bag(contract_from_json(t) for t in _list(x["theta"])),
            Bag(delta_from_json(d) for d in _list(x["delta"])),
            Bag(sigma_from_json(s) for s in _list(x["sigma"])),
            sigma_from_json(x["goal"]),
        )
    raise _bad(f"unknown sequent kind {kind!r}")


def proof_from_json(x: Any) -> ProofNode:
    """Decode a proof; raises :class:`MalformedProofError` on any shape error."""
    # post-order over an explicit stack keeps deep proofs off the C stack
    built: dict[int, ProofNode] = {}
    stack: list[tuple[Any, bool]] = [(x, False)]
    while stack:
        obj, ready = stack.pop()
        if not isinstance(obj, dict) or set(obj) - {"rule", "conclusion", "principal", "premises"} \
                or "rule" not in obj or "conclusion" not in obj:
            raise _bad("proof node must have rule and conclusion")
        prem = _list(obj.get("premises", []))
        if not ready:
            stack.append((obj, True))
            for q in prem:
                stack.append((q, False))
            continue
        if not isinstance(obj["rule"], str):
            raise _bad("rule must be a string")
        built[id(obj)] = ProofNode(
            obj["rule"],
            sequent_from_json(obj["conclusion"]),
            tuple(built[id(q)] for q in prem),
            formula_from_json(obj.get("principal")),
        )
    return built[id(x)]


def canonical_dumps(x: Any) -> str:
    return json.dumps(x, sort_keys=True, separators=(",", ":"), ensure_ascii=False)


def proof_hash(p: ProofNode | dict) -> str:
    data = p if isinstance(p, dict) else proof_to_json(p)
    return hashlib.sha256(canonical_dumps(data).encode("utf-8")).hexdigest()
