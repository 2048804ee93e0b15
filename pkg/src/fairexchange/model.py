"""Exchange environments: states, transfers, exchanges, policies and fairness.

This module is the semantic ground truth of the package.  Its fairness
procedures are deliberately naive (exhaustive search over witnesses) so that
the logic-based decision procedure in :mod:`fairexchange.decide` can be
cross-checked against them.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Iterable, Mapping, NamedTuple

from .bag import Bag

DEFAULT_ORACLE_CAP = 6


class ModelError(Exception):
    """Base class for errors raised by the exchange model."""


class InsufficientResources(ModelError):
    def __init__(self, user: str, resource: str, have: int, need: int) -> None:
        super().__init__(f"{user} holds {have} {resource} but must give {need}")
        self.user = user
        self.resource = resource
        self.have = have
        self.need = need


class CapExceeded(ModelError):
    """A bounded search hit its configured size limit."""


class Transfer(NamedTuple):
    giver: str
    resource: str
    receiver: str

    def __str__(self) -> str:
        return f"{self.giver}->{self.resource}->{self.receiver}"


def transfer(giver: str, resource: str, receiver: str) -> Transfer:
    if not giver or not resource or not receiver:
        raise ValueError("empty identifier in transfer")
    if giver == receiver:
        raise ValueError(f"transfer from {giver} to itself")
    return Transfer(giver, resource, receiver)


Exchange = Bag  # Bag[Transfer]


def exchange(transfers: Iterable[Transfer | tuple[str, str, str]] = ()) -> Bag:
    return Bag(transfer(*t) for t in transfers)


def parse_transfer(text: str) -> Transfer:
    """Parse ``Alice->sb->Bob``."""
    parts = [p.strip() for p in text.split("->")]
    if len(parts) != 3:
        raise ValueError(f"malformed transfer {text!r}")
    return transfer(*parts)


def format_exchange(exc: Bag) -> str:
    if not exc:
        return "{}"
    return "{" + ", ".join(str(t) for t in exc) + "}"


class State:
    """Ownership map from users to resource multisets.

    Internally a multiset of ``(user, resource)`` pairs; users of the declared
    universe with nothing are kept in ``users`` so the map stays total.
    """

    __slots__ = ("bag", "users")

    def __init__(
        self,
        holdings: Mapping[str, Mapping[str, int]] | None = None,
        users: Iterable[str] = (),
        *,
        bag: Bag | None = None,
    ) -> None:
        if bag is None:
            pairs: dict[tuple[str, str], int] = {}
            for user, row in (holdings or {}).items():
                for res, n in row.items():
                    if n < 0:
                        raise ValueError(f"negative count for {user}/{res}")
                    if n:
                        pairs[(user, res)] = pairs.get((user, res), 0) + n
            bag = Bag(pairs)
        self.bag: Bag = bag
        names = set(users) | set((holdings or {}).keys()) | {u for u, _ in bag.distinct()}
        self.users: tuple[str, ...] = tuple(sorted(names))

    def get(self, user: str, resource: str) -> int:
        return self.bag.count((user, resource))

    def holdings(self, user: str) -> dict[str, int]:
        return {r: n for (u, r), n in self.bag.items() if u == user}

    def totals(self) -> Bag:
        return self.bag.map(lambda pair: pair[1])

    def to_dict(self) -> dict[str, dict[str, int]]:
        """Normalized form: every known user, zero counts dropped."""
        out: dict[str, dict[str, int]] = {u: {} for u in self.users}
        for (u, r), n in self.bag.items():
            out[u][r] = n
        return out

    def with_users(self, users: Iterable[str]) -> "State":
        return State(bag=self.bag, users=set(self.users) | set(users))

    def __eq__(self, other: object) -> bool:
        return isinstance(other, State) and self.bag == other.bag

    def __hash__(self) -> int:
        return hash(self.bag)

    def __repr__(self) -> str:
        return f"State({self.to_dict()!r})"


def outgoing(exc: Bag) -> Bag:
    """Multiset of ``(giver, resource)`` pairs leaving their owners."""
    return exc.map(lambda t: (t.giver, t.resource))


def incoming(exc: Bag) -> Bag:
    return exc.map(lambda t: (t.receiver, t.resource))


def is_feasible(st: State, exc: Bag) -> bool:
    return outgoing(exc) <= st.bag


def apply_exchange(st: State, exc: Bag) -> State:
    """Fire ``exc`` in one step: every giver must already hold what is given."""
    out = outgoing(exc)
    for (user, res), need in out.items():
        have = st.get(user, res)
        if have < need:
            raise InsufficientResources(user, res, have, need)
    return State(bag=(st.bag - out) + incoming(exc), users=st.users)


@dataclass(frozen=True, order=True)
class ExchangeApproval:
    """``grant`` is offered in return for ``payoff``."""

    grant: Transfer
    payoff: Bag = field(default_factory=Bag)

    def __post_init__(self) -> None:
        for t in self.payoff.distinct():
            if t.giver == self.grant.giver:
                raise ValueError(f"approval for {self.grant} asks its owner to pay ({t})")

    def __str__(self) -> str:
        return f"{self.grant} <| {format_exchange(self.payoff)}"


@dataclass(frozen=True)
class ExchangePolicy:
    owner: str
    approvals: frozenset = frozenset()

    def __post_init__(self) -> None:
        for a in self.approvals:
            if a.grant.giver != self.owner:
                raise ValueError(f"approval {a} does not belong to {self.owner}")

    def by_grant(self) -> dict[Transfer, list[Bag]]:
        table: dict[Transfer, list[Bag]] = {}
        for a in sorted(self.approvals):
            table.setdefault(a.grant, []).append(a.payoff)
        return table


@dataclass(frozen=True)
class Unfair:
    """Negative verdict; falsy so callers can write ``if verdict:``."""

    reason: str = ""

    def __bool__(self) -> bool:
        return False


@dataclass(frozen=True)
class FairnessWitness:
    per_user: Mapping[str, Bag]

    def union(self) -> Bag:
        total: Bag = Bag()
        for exc in self.per_user.values():
            total = total + exc
        return total


def _sub_multisets(bag: Bag) -> Iterable[Bag]:
    keys = bag.distinct()
    ranges = [range(bag.count(k) + 1) for k in keys]
    for counts in itertools.product(*ranges):
        yield Bag(dict(zip(keys, counts)))


def acceptance_witnesses(
    pol: ExchangePolicy, exc: Bag, cap: int = DEFAULT_ORACLE_CAP
) -> frozenset:
    """All ``w`` such that ``pol`` accepts ``exc`` because of ``w``.

    Computed by unfolding the inductive acceptance relation literally: either
    the owner gives nothing (witness empty), or one of the owner's transfers is split
    off together with the payoff of a matching approval and the remainder is
    accepted recursively.
    """
    if len(exc) > cap:
        raise CapExceeded(f"exchange of size {len(exc)} exceeds oracle cap {cap}")
    table = pol.by_grant()
    owner = pol.owner

    @lru_cache(maxsize=None)
    def accepted(rest: Bag) -> frozenset:
        mine = [t for t in rest.distinct() if t.giver == owner]
        if not mine:
            return frozenset({Bag()})
        # every owner transfer is split off at some depth; taking the
        # smallest first yields the same set of witnesses
        tr = mine[0]
        after = rest.remove(tr)
        found = set()
        for payoff in table.get(tr, ()):
            if not payoff <= after:
                continue
            for inner in accepted(after - payoff):
                found.add(payoff + inner)
        return frozenset(found)

    return accepted(exc)


def is_fair_label(
    policies: Mapping[str, ExchangePolicy],
    exc: Bag,
    users: Iterable[str] | None = None,
    cap: int = DEFAULT_ORACLE_CAP,
) -> FairnessWitness | Unfair:
    """Search for per-user witnesses whose disjoint union fits inside ``exc``."""
    names = set(policies) if users is None else set(users)
    names |= {t.giver for t in exc.distinct()}
    order = sorted(names)
    options: list[list[Bag]] = []
    for user in order:
        pol = policies.get(user) or ExchangePolicy(user)
        ws = sorted(acceptance_witnesses(pol, exc, cap), key=lambda b: (len(b), b.items()))
        if not ws:
            return Unfair(f"{user} does not accept {format_exchange(exc)}")
        options.append(ws)

    chosen: list[Bag] = []

    def search(i: int, used: Bag) -> bool:
        if i == len(order):
            return True
        for w in options[i]:
            total = used + w
            if total <= exc:
                chosen.append(w)
                if search(i + 1, total):
                    return True
                chosen.pop()
        return False

    if search(0, Bag()):
        return FairnessWitness(dict(zip(order, chosen)))
    return Unfair("every choice of witnesses spends some transfer twice")


def is_fair_transition(
    st: State,
    exc: Bag,
    policies: Mapping[str, ExchangePolicy],
    cap: int = DEFAULT_ORACLE_CAP,
) -> bool:
    if not is_feasible(st, exc):
        return False
    return bool(is_fair_label(policies, exc, st.users, cap))


def feasible_exchanges(
    st: State, users: Iterable[str], target: State | None = None
) -> Iterable[Bag]:
    """Every exchange over ``users`` that is feasible in one step from ``st``.

    With ``target`` given, only exchanges leading exactly to it are yielded.
    Used by the brute-force oracle; exponential in the holdings.
    """
    names = sorted(set(users) | set(st.users))
    per_source: list[list[tuple[Transfer, ...]]] = []
    for (giver, res), have in st.bag.items():
        receivers = [u for u in names if u != giver]
        choices: list[tuple[Transfer, ...]] = []
        for k in range(have + 1):
            for combo in itertools.combinations_with_replacement(receivers, k):
                choices.append(tuple(Transfer(giver, res, r) for r in combo))
        per_source.append(choices)
    for picks in itertools.product(*per_source):
        exc = Bag(t for group in picks for t in group)
        if target is None or apply_exchange(st, exc) == target:
            yield exc


def exists_fair_transition(
    st: State,
    target: State,
    policies: Mapping[str, ExchangePolicy],
    users: Iterable[str] | None = None,
    cap: int = DEFAULT_ORACLE_CAP,
) -> Bag | None:
    """Oracle: some fair one-step exchange from ``st`` to ``target`` exists."""
    names = set(users or ()) | set(st.users) | set(target.users) | set(policies)
    if st.totals() != target.totals():
        return None
    best: Bag | None = None
    for exc in feasible_exchanges(st, names, target):
        if best is not None and (len(exc), exc.items()) >= (len(best), best.items()):
            continue
        if is_fair_label(policies, exc, names, cap):
            best = exc
    return best
