"""Scenario files: one text file describing users, holdings, policies and proposals.

Sections open with a bracketed header; ``#`` starts a comment line::

    [universe]
    users = Alice Bob Carl
    resources = sb lw hw hp

    [state]
    Alice = sb
    Carl = hw*3 hp*2

    [context]
    is_paladin(Bob)

    [policy Alice]
    Gives(Me, sb, u) :- Gives(u', hw, Me)

    [approvals Carl]
    Carl->hp->Bob <= Alice->lw->Carl

    [proposal hp-for-lw]
    exchange = Carl->hp->Bob, Bob->lw->Carl
    expect = fair

Policy sections hold MuAC source verbatim.  Approval sections give explicit
``grant <= payoff`` pairs instead; a scenario uses one style or the other.
A proposal carries exactly one of ``exchange``, ``target`` or ``want`` (the
last together with ``user``), optionally its own ``state`` and ``expect``.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from importlib import resources as importlib_resources
from pathlib import Path

from .bag import Bag
from .compile import GroundedTheory, theory_from_policies, theory_from_rulesets
from .model import ExchangeApproval, ExchangePolicy, State, exchange, parse_transfer
from .muac import Context, MuacError, Ruleset, interpret_all, parse_ruleset

VERDICTS = ("fair", "eventually-fair", "unfair")

_HEADER = re.compile(r"^\[\s*(\w+)(?:\s+([^\]]+?))?\s*\]\s*$")
_FACT = re.compile(r"^(\w+)\s*\(([^)]*)\)$")
_COUNT = re.compile(r"^(\w+)(?:\*(\d+))?$")


class ScenarioError(ValueError):
    def __init__(self, message: str, line: int | None = None) -> None:
        super().__init__(f"line {line}: {message}" if line else message)
        self.line = line


@dataclass(frozen=True)
class Proposal:
    name: str
    exchange: Bag | None = None
    target: State | None = None
    user: str | None = None
    want: tuple = ()
    state: State | None = None
    expect: str | None = None

    @property
    def kind(self) -> str:
        if self.exchange is not None:
            return "exchange"
        if self.target is not None:
            return "target"
        return "want"


@dataclass
class Scenario:
    users: tuple
    resources: tuple
    state: State
    context: Context = field(default_factory=Context)
    sources: dict = field(default_factory=dict)
    rulesets: dict = field(default_factory=dict)
    approvals: dict | None = None
    proposals: list = field(default_factory=list)

    def theory(self) -> GroundedTheory:
        if self.approvals is not None:
            return theory_from_policies(self.policies())
        return theory_from_rulesets(self.rulesets, self.context, self.users)

    def policies(self) -> dict[str, ExchangePolicy]:
        if self.approvals is not None:
            out = {u: ExchangePolicy(u) for u in self.users}
            out.update(self.approvals)
            return out
        return interpret_all(self.rulesets, self.context, self.users)

    def proposal(self, name: str) -> Proposal:
        for p in self.proposals:
            if p.name == name:
                return p
        raise KeyError(name)


def parse_holdings(text: str, line: int | None = None) -> dict[str, int]:
    out: dict[str, int] = {}
    for tok in text.split():
        m = _COUNT.match(tok)
        if not m:
            raise ScenarioError(f"bad resource count {tok!r}", line)
        out[m.group(1)] = out.get(m.group(1), 0) + int(m.group(2) or 1)
    return out


def parse_state_line(text: str, users: tuple, line: int | None = None) -> State:
    """``Alice: sb; Carl: hw*3 hp*2`` (users left out hold nothing)."""
    rows: dict[str, dict[str, int]] = {}
    for part in filter(None, (p.strip() for p in text.split(";"))):
        user, sep, rest = part.partition(":")
        if not sep:
            raise ScenarioError(f"expected 'user: resources' in {part!r}", line)
        rows[user.strip()] = parse_holdings(rest, line)
    return State(rows, users)


def _parse_exchange(text: str, line: int) -> Bag:
    text = text.strip()
    if text in ("", "{}"):
        return Bag()
    try:
        return exchange(parse_transfer(t) for t in text.split(","))
    except ValueError as e:
        raise ScenarioError(str(e), line) from None


def _sections(text: str) -> list[tuple[str, str | None, int, list[tuple[int, str]]]]:
    out: list = []
    for no, raw in enumerate(text.splitlines(), 1):
        stripped = raw.strip()
        if stripped.startswith("#"):
            continue
        m = _HEADER.match(stripped)
        if m:
            out.append((m.group(1).lower(), m.group(2), no, []))
        elif stripped:
            if not out:
                raise ScenarioError("content before the first section", no)
            out[-1][3].append((no, raw))
    return out


def _pairs(body: list[tuple[int, str]]) -> list[tuple[int, str, str]]:
    out = []
    for no, raw in body:
        key, sep, value = raw.partition("=")
        if not sep:
            raise ScenarioError(f"expected 'key = value', got {raw.strip()!r}", no)
        out.append((no, key.strip(), value.strip()))
    return out


def parse_scenario(text: str) -> Scenario:
    users: tuple = ()
    resources: tuple = ()
    holdings: dict[str, dict[str, int]] = {}
    facts: list = []
    sources: dict[str, str] = {}
    approvals: dict[str, set] = {}
    raw_props: list = []
    seen: set = set()
    for kind, arg, no, body in _sections(text):
        key = (kind, arg)
        if key in seen:
            raise ScenarioError(f"duplicate section [{kind}{' ' + arg if arg else ''}]", no)
        seen.add(key)
        if kind == "universe":
            for ln, k, v in _pairs(body):
                if k == "users":
                    users = tuple(v.split())
                elif k == "resources":
                    resources = tuple(v.split())
                else:
                    raise ScenarioError(f"unknown universe key {k!r}", ln)
        elif kind == "state":
            for ln, k, v in _pairs(body):
                holdings[k] = parse_holdings(v, ln)
        elif kind == "context":
            for ln, raw in body:
                m = _FACT.match(raw.strip())
                if not m:
                    raise ScenarioError(f"bad context fact {raw.strip()!r}", ln)
                args = tuple(a.strip() for a in m.group(2).split(",") if a.strip())
                facts.append((m.group(1), args, ln))
        elif kind == "policy":
            if not arg:
                raise ScenarioError("policy section needs an owner", no)
            sources[arg] = "\n".join(raw for _, raw in body)
        elif kind == "approvals":
            if not arg:
                raise ScenarioError("approvals section needs an owner", no)
            approvals[arg] = set()
            for ln, raw in body:
                grant, sep, payoff = raw.partition("<=")
                if not sep:
                    raise ScenarioError("expected 'grant <= payoff'", ln)
                try:
                    g = parse_transfer(grant.strip())
                    approvals[arg].add(ExchangeApproval(g, _parse_exchange(payoff, ln)))
                except ValueError as e:
                    raise ScenarioError(str(e), ln) from None
        elif kind == "proposal":
            if not arg:
                raise ScenarioError("proposal section needs a name", no)
            raw_props.append((arg, no, _pairs(body)))
        else:
            raise ScenarioError(f"unknown section [{kind}]", no)

    if not users:
        raise ScenarioError("no users declared")
    declared = set(users)
    res_set = set(resources)

    def known_user(u: str, ln: int | None) -> None:
        if u not in declared:
            raise ScenarioError(f"undeclared user {u!r}", ln)

    def known_state(st: State, ln: int | None) -> None:
        for (u, r) in st.bag.distinct():
            known_user(u, ln)
            if r not in res_set:
                raise ScenarioError(f"undeclared resource {r!r}", ln)

    def known_exchange(exc: Bag, ln: int | None) -> None:
        for t in exc.distinct():
            known_user(t.giver, ln)
            known_user(t.receiver, ln)
            if t.resource not in res_set:
                raise ScenarioError(f"undeclared resource {t.resource!r}", ln)

    st = State(holdings, users)
    known_state(st, None)
    for name, args, ln in facts:
        for a in args:
            known_user(a, ln)
    try:
        ctx = Context((n, a) for n, a, _ in facts)
    except MuacError as e:
        raise ScenarioError(str(e)) from None
    if sources and approvals:
        raise ScenarioError("use either [policy] or [approvals] sections, not both")
    rulesets: dict[str, Ruleset] = {}
    for owner, src in sources.items():
        known_user(owner, None)
        try:
            rulesets[owner] = parse_ruleset(src, owner)
        except MuacError as e:
            raise ScenarioError(f"policy of {owner}: {e}") from None
    policies = None
    if approvals:
        policies = {}
        for owner, items in approvals.items():
            known_user(owner, None)
            for a in items:
                known_exchange(Bag([a.grant]) + a.payoff, None)
            try:
                policies[owner] = ExchangePolicy(owner, frozenset(items))
            except ValueError as e:
                raise ScenarioError(str(e)) from None

    proposals = []
    for name, no, pairs in raw_props:
        fields: dict = {"name": name}
        for ln, k, v in pairs:
            if k == "exchange":
                fields["exchange"] = _parse_exchange(v, ln)
                known_exchange(fields["exchange"], ln)
            elif k in ("target", "state"):
                fields[k] = parse_state_line(v, users, ln)
                known_state(fields[k], ln)
            elif k == "user":
                known_user(v, ln)
                fields["user"] = v
            elif k == "want":
                fields["want"] = tuple(r.strip() for r in v.split(",") if r.strip())
                for r in fields["want"]:
                    if r not in res_set:
                        raise ScenarioError(f"undeclared resource {r!r}", ln)
            elif k == "expect":
                if v not in VERDICTS:
                    raise ScenarioError(f"expect must be one of {', '.join(VERDICTS)}", ln)
                fields["expect"] = v
            else:
                raise ScenarioError(f"unknown proposal key {k!r}", ln)
        kinds = [k for k in ("exchange", "target", "want") if k in fields]
        if len(kinds) != 1:
            raise ScenarioError(f"proposal {name} needs exactly one of exchange, target, want", no)
        if ("want" in fields) != ("user" in fields):
            raise ScenarioError(f"proposal {name}: 'want' and 'user' go together", no)
        proposals.append(Proposal(**fields))

    return Scenario(users, resources, st, ctx, sources, rulesets, policies, proposals)


def load_scenario(path: str | Path) -> Scenario:
    return parse_scenario(Path(path).read_text(encoding="utf-8"))


def bundled(name: str) -> str:
    """Text of a scenario shipped with the package (``running``, ``examples``...)."""
    ref = importlib_resources.files("fairexchange") / "data" / f"{name}.scn"
    return ref.read_text(encoding="utf-8")


def bundled_names() -> list[str]:
    folder = importlib_resources.files("fairexchange") / "data"
    return sorted(p.name[:-4] for p in folder.iterdir() if p.name.endswith(".scn"))


def resolve(where: str) -> Scenario:
    """A path, or ``bundled:<name>`` for a shipped scenario."""
    if where.startswith("bundled:"):
        return parse_scenario(bundled(where.split(":", 1)[1]))
    return load_scenario(where)
