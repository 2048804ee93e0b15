"""MuAC: a small Datalog-like language for exchange policies.

A ruleset is a sequence of rules of the form::

    Gives(Me, res, u) :- Gives(u', res', Me), ... with pred(u), ...

The body (after ``:-``) and the ``with`` clause are both optional.  ``Me``
denotes the owner of the ruleset; every other identifier in a user position
is a variable.  Rules are separated by ``;`` or by line breaks; a rule may
continue on the next line after ``:-``, ``,`` or ``with``.
"""

from __future__ import annotations

import itertools
import re
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Mapping

from .bag import Bag
from .model import ExchangeApproval, ExchangePolicy, Transfer

ME = "Me"


class MuacError(Exception):
    def __init__(self, message: str, line: int = 0, column: int = 0) -> None:
        where = (f"{line}:{column}: " if column else f"{line}: ") if line else ""
        super().__init__(f"{where}{message}")
        self.message = message
        self.line = line
        self.column = column


class ParseError(MuacError):
    pass


class SemanticError(MuacError):
    pass


@dataclass(frozen=True)
class GiveAtom:
    giver: str
    resource: str
    receiver: str

    def __str__(self) -> str:
        return f"Gives({self.giver}, {self.resource}, {self.receiver})"


@dataclass(frozen=True)
class PredAtom:
    name: str
    args: tuple[str, ...]

    def __str__(self) -> str:
        return f"{self.name}({', '.join(self.args)})"


@dataclass(frozen=True)
class RuleAst:
    resource: str
    requester: str
    gives: tuple[GiveAtom, ...] = ()
    preds: tuple[PredAtom, ...] = ()
    line: int = field(default=0, compare=False)

    @property
    def head(self) -> GiveAtom:
        return GiveAtom(ME, self.resource, self.requester)

    def variables(self) -> list[str]:
        """Distinct variables in order of first occurrence."""
        seen: list[str] = []
        for atom in (self.head, *self.gives):
            for v in (atom.giver, atom.receiver):
                if v != ME and v not in seen:
                    seen.append(v)
        for p in self.preds:
            for v in p.args:
                if v != ME and v not in seen:
                    seen.append(v)
        return seen

    def __str__(self) -> str:
        text = str(self.head)
        if self.gives or self.preds:
            text += " :-"
            if self.gives:
                text += " " + ", ".join(str(g) for g in self.gives)
            if self.preds:
                text += " with " + ", ".join(str(p) for p in self.preds)
        return text


@dataclass(frozen=True)
class Ruleset:
    owner: str
    rules: tuple[RuleAst, ...] = ()

    def __str__(self) -> str:
        return "\n".join(str(r) for r in self.rules)


class Context:
    """Predicate facts ``p(usr, ...)``; arities must be used consistently."""

    def __init__(self, facts: Iterable[tuple[str, tuple[str, ...]]] = ()) -> None:
        self.facts: frozenset = frozenset((name, tuple(args)) for name, args in facts)
        self.arities: dict[str, int] = {}
        for name, args in sorted(self.facts):
            known = self.arities.setdefault(name, len(args))
            if known != len(args):
                raise SemanticError(f"predicate {name} used with arities {known} and {len(args)}")

    def holds(self, name: str, args: tuple[str, ...]) -> bool:
        return (name, args) in self.facts

    def with_fact(self, name: str, args: tuple[str, ...]) -> "Context":
        return Context(self.facts | {(name, tuple(args))})

    def without_fact(self, name: str, args: tuple[str, ...]) -> "Context":
        return Context(self.facts - {(name, tuple(args))})

    def __eq__(self, other: object) -> bool:
        return isinstance(other, Context) and self.facts == other.facts

    def __hash__(self) -> int:
        return hash(self.facts)

    def __repr__(self) -> str:
        return f"Context({sorted(self.facts)!r})"


# -- lexer -------------------------------------------------------------------

_TOKEN = re.compile(
    r"(?P<ws>[ \t\r]+)|(?P<comment>//[^\n]*)|(?P<nl>\n)|(?P<implies>:-)"
    r"|(?P<ident>[A-Za-z_][A-Za-z0-9_]*'*)|(?P<punct>[(),;])"
)


@dataclass(frozen=True)
class Token:
    kind: str
    text: str
    line: int
    column: int


def tokenize(source: str) -> list[Token]:
    tokens: list[Token] = []
    line, start = 1, 0
    pos = 0
    while pos < len(source):
        m = _TOKEN.match(source, pos)
        if m is None:
            raise ParseError(f"unexpected character {source[pos]!r}", line, pos - start + 1)
        kind = m.lastgroup
        col = pos - start + 1
        if kind == "nl":
            tokens.append(Token("nl", "\n", line, col))
            line += 1
            start = m.end()
        elif kind == "ident":
            tokens.append(Token("ident", m.group(), line, col))
        elif kind in ("punct", "implies"):
            tokens.append(Token(m.group(), m.group(), line, col))
        pos = m.end()
    tokens.append(Token("eof", "", line, pos - start + 1))
    return _drop_continuations(tokens)


def _drop_continuations(tokens: list[Token]) -> list[Token]:
    """Turn line breaks into rule separators except where a rule continues."""
    out: list[Token] = []
    for i, tok in enumerate(tokens):
        if tok.kind != "nl":
            out.append(tok)
            continue
        prev = out[-1] if out else None
        nxt = next((t for t in tokens[i + 1:] if t.kind != "nl"), None)
        if prev is None or prev.kind in (":-", ",", ";", "nl"):
            continue
        if prev.kind == "ident" and prev.text == "with":
            continue
        if nxt is not None and (nxt.kind == "," or (nxt.kind == "ident" and nxt.text == "with")):
            continue
        out.append(Token(";", "\n", tok.line, tok.column))
    return out


# -- parser ------------------------------------------------------------------


class _Parser:
    def __init__(self, tokens: list[Token]) -> None:
        self.tokens = tokens
        self.pos = 0
        self._line = self._col = 0

    def peek(self) -> Token:
        return self.tokens[self.pos]

    def take(self, kind: str, text: str | None = None) -> Token:
        tok = self.peek()
        if tok.kind != kind or (text is not None and tok.text != text):
            want = text or kind
            got = tok.text or tok.kind
            raise ParseError(f"expected {want!r}, found {got!r}", tok.line, tok.column)
        self.pos += 1
        return tok

    def rules(self) -> list[RuleAst]:
        out: list[RuleAst] = []
        while True:
            while self.peek().kind == ";":
                self.pos += 1
            if self.peek().kind == "eof":
                return out
            out.append(self.rule())
            if self.peek().kind not in (";", "eof"):
                tok = self.peek()
                raise ParseError(f"unexpected {tok.text!r} after rule", tok.line, tok.column)

    def rule(self) -> RuleAst:
        head = self.gives()
        if head.giver != ME:
            raise ParseError("rule head must be Gives(Me, ...)", self._line, self._col)
        gives: list[GiveAtom] = []
        preds: list[PredAtom] = []
        line = self._line
        if self.peek().kind == ":-":
            self.pos += 1
            tok = self.peek()
            if tok.kind == "ident" and tok.text == "Gives":
                gives.append(self.gives())
                while self.peek().kind == ",":
                    self.pos += 1
                    gives.append(self.gives())
            if self.peek().kind == "ident" and self.peek().text == "with":
                self.pos += 1
                preds.append(self.pred())
                while self.peek().kind == ",":
                    self.pos += 1
                    preds.append(self.pred())
        rule = RuleAst(head.resource, head.receiver, tuple(gives), tuple(preds), line)
        _check_rule(rule)
        return rule

    def gives(self) -> GiveAtom:
        start = self.take("ident", "Gives")
        self._line, self._col = start.line, start.column
        self.take("(")
        giver = self.user()
        self.take(",")
        res = self.take("ident")
        if not res.text[0].islower():
            raise ParseError(f"resource {res.text!r} must start lowercase", res.line, res.column)
        self.take(",")
        receiver = self.user()
        self.take(")")
        if giver == receiver:
            raise SemanticError(
                f"Gives({giver}, {res.text}, {receiver}) names the same user twice",
                start.line, start.column,
            )
        return GiveAtom(giver, res.text, receiver)

    def user(self) -> str:
        tok = self.take("ident")
        if tok.text == "Gives" or tok.text == "with":
            raise ParseError(f"{tok.text!r} is not a user", tok.line, tok.column)
        if tok.text != ME and tok.text[0].isupper():
            raise SemanticError(
                f"user constant {tok.text!r} is not supported; use a variable", tok.line, tok.column
            )
        return tok.text

    def pred(self) -> PredAtom:
        name = self.take("ident")
        if not name.text[0].islower() or name.text == "with":
            raise ParseError(f"predicate {name.text!r} must start lowercase", name.line, name.column)
        self.take("(")
        args = [self.user()]
        while self.peek().kind == ",":
            self.pos += 1
            args.append(self.user())
        self.take(")")
        return PredAtom(name.text, tuple(args))


def _check_rule(rule: RuleAst) -> None:
    if rule.requester == ME:
        raise SemanticError("the head requester must differ from Me", rule.line)
    for g in rule.gives:
        if g.giver == ME:
            raise SemanticError(f"{g}: the owner cannot appear as a payer", rule.line)


def parse_ruleset(source: str, owner: str) -> Ruleset:
    rules = _Parser(tokenize(source)).rules()
    arities: dict[str, int] = {}
    for r in rules:
        for p in r.preds:
            known = arities.setdefault(p.name, len(p.args))
            if known != len(p.args):
                raise SemanticError(
                    f"predicate {p.name} used with arities {known} and {len(p.args)}", r.line
                )
    return Ruleset(owner, tuple(rules))


def predicate_arities(rulesets: Iterable[Ruleset]) -> dict[str, int]:
    arities: dict[str, int] = {}
    for rs in rulesets:
        for r in rs.rules:
            for p in r.preds:
                known = arities.setdefault(p.name, len(p.args))
                if known != len(p.args):
                    raise SemanticError(f"predicate {p.name} used with arities {known} and {len(p.args)}")
    return arities


# -- interpretation ----------------------------------------------------------


def assignments(rule: RuleAst, owner: str, universe: Iterable[str]) -> Iterator[dict[str, str]]:
    """Every map from the rule's variables to users, ``Me`` bound to ``owner``.

    Yields exactly ``|universe| ** len(variables)`` maps; no filtering here.
    """
    names = sorted(set(universe))
    variables = rule.variables()
    for values in itertools.product(names, repeat=len(variables)):
        rho = dict(zip(variables, values))
        rho[ME] = owner
        yield rho


def admissible(rule: RuleAst, rho: Mapping[str, str]) -> bool:
    """Distinct users at both ends of every Gives atom, head included."""
    return all(rho[a.giver] != rho[a.receiver] for a in (rule.head, *rule.gives))


def instantiate(rule: RuleAst, rho: Mapping[str, str]) -> ExchangeApproval:
    grant = Transfer(rho[ME], rule.resource, rho[rule.requester])
    payoff = Bag(Transfer(rho[g.giver], g.resource, rho[g.receiver]) for g in rule.gives)
    return ExchangeApproval(grant, payoff)


def interpret_rule(rule: RuleAst, owner: str, ctx: Context, universe: Iterable[str]) -> set:
    out = set()
    for rho in assignments(rule, owner, universe):
        if not admissible(rule, rho):
            continue
        if not all(ctx.holds(p.name, tuple(rho[a] for a in p.args)) for p in rule.preds):
            continue
        if any(rho[g.giver] == owner for g in rule.gives):
            continue
        out.add(instantiate(rule, rho))
    return out


def interpret_ruleset(rs: Ruleset, ctx: Context, universe: Iterable[str]) -> ExchangePolicy:
    names = list(universe)
    approvals: set = set()
    for rule in rs.rules:
        approvals |= interpret_rule(rule, rs.owner, ctx, names)
    return ExchangePolicy(rs.owner, frozenset(approvals))


def interpret_all(
    rulesets: Mapping[str, Ruleset], ctx: Context, universe: Iterable[str]
) -> dict[str, ExchangePolicy]:
    names = list(universe)
    policies = {u: ExchangePolicy(u) for u in names}
    for owner, rs in rulesets.items():
        policies[owner] = interpret_ruleset(rs, ctx, names)
    return policies
