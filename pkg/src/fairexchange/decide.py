"""Deciding fairness through an integer encoding of the grounded theory.

Each lifted formula of the grounded theory is a column.  Rows are the
single-step implications (transfers) occurring anywhere in the theory.
``A`` counts the transfers offered outright by ``G(δ)`` formulas, ``B`` the
transfers a contract requires and ``C`` the transfers it promises.  Using the
formulas ``y`` times each yields a fair exchange ``[A|C]y`` exactly when the
promises cover the requirements, ``(C - B)y ≥ 0``.

Solutions are computed twice, once through the Hilbert basis of the cone
``(C - B)y ≥ 0`` and once by direct bounded enumeration, and the two answers
must coincide.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

from .bag import Bag
from .compile import GroundedTheory, decode_exchange, encode_exchange, theory_from_rulesets
from .hilbert import DEFAULT_FRONTIER_CAP, hilbert_basis
from .logic import STRICT, Contract, G, Limp
from .model import (
    CapExceeded,
    FairnessWitness,
    InsufficientResources,
    State,
    Transfer,
    Unfair,
    apply_exchange,
    is_feasible,
)
from .muac import Context, Ruleset

DEFAULT_EXCHANGE_CAP = 8


def exchange_cap(default: int = DEFAULT_EXCHANGE_CAP) -> int:
    """Search cap, overridable through ``MUAC_CAP``."""
    raw = os.environ.get("MUAC_CAP")
    return int(raw) if raw else default


class RouteDisagreement(AssertionError):
    """The Hilbert-basis route and direct enumeration returned different sets."""


class SearchCap(CapExceeded):
    pass


# statistics for the acceptance report
ROUTE_CHECKS = {"systems": 0, "agreements": 0}


@dataclass(frozen=True)
class EncodingSystem:
    basis: tuple          # rows: implications, sorted
    columns: tuple        # lifted formulas; G(δ) columns first
    offers: tuple = field(default=(), compare=False, repr=False)   # sparse columns of [A|C]
    needs: tuple = field(default=(), compare=False, repr=False)    # sparse columns of [0|B]

    @property
    def n(self) -> int:
        return sum(1 for g in self.columns if not isinstance(g.body, Contract))

    @property
    def m(self) -> int:
        return len(self.columns) - self.n

    @property
    def rule_index(self) -> dict:
        return dict(enumerate(self.columns))

    def _dense(self, sparse: Sequence[dict], cols: range) -> tuple:
        return tuple(tuple(sparse[j].get(r, 0) for j in cols) for r in range(len(self.basis)))

    @property
    def A(self) -> tuple:
        """``p × n`` matrix of the ``G(δ)`` offers."""
        return self._dense(self.offers, range(self.n))

    @property
    def B(self) -> tuple:
        """``p × m`` matrix of contract requirements."""
        return self._dense(self.needs, range(self.n, len(self.columns)))

    @property
    def C(self) -> tuple:
        """``p × m`` matrix of contract promises."""
        return self._dense(self.offers, range(self.n, len(self.columns)))

    def row_of(self) -> dict:
        return {x: i for i, x in enumerate(self.basis)}

    def offer_column(self, j: int) -> tuple:
        """Column ``j`` of ``[A|C]``."""
        out = [0] * len(self.basis)
        for r, c in self.offers[j].items():
            out[r] = c
        return tuple(out)

    def slack_column(self, j: int) -> tuple:
        """Column ``j`` of ``[0|C-B]``."""
        out = [0] * len(self.basis)
        if isinstance(self.columns[j].body, Contract):
            for r, c in self.offers[j].items():
                out[r] += c
            for r, c in self.needs[j].items():
                out[r] -= c
        return tuple(out)

    def vector(self, delta: Bag) -> tuple | None:
        """Encode an exchange formula over the basis; ``None`` if outside it."""
        index = self.row_of()
        out = [0] * len(self.basis)
        for x, k in delta.items():
            if x not in index:
                return None
            out[index[x]] += k
        return tuple(out)


def build_system(g: GroundedTheory | Iterable[G]) -> EncodingSystem:
    lifted = g.omega_star if isinstance(g, GroundedTheory) else frozenset(g)
    deltas = sorted(w for w in lifted if not isinstance(w.body, Contract))
    thetas = sorted(w for w in lifted if isinstance(w.body, Contract))
    basis: set[Limp] = set()
    for w in deltas:
        basis |= set(w.body.distinct())
    for w in thetas:
        basis |= set(w.body.lhs.distinct()) | set(w.body.rhs.distinct())
    rows = tuple(sorted(basis))
    index = {x: i for i, x in enumerate(rows)}
    offers = [{index[x]: k for x, k in w.body.items()} for w in deltas]
    offers += [{index[x]: k for x, k in w.body.rhs.items()} for w in thetas]
    needs = [{} for _ in deltas] + [{index[x]: k for x, k in w.body.lhs.items()} for w in thetas]
    return EncodingSystem(rows, tuple(deltas) + tuple(thetas), tuple(offers), tuple(needs))


def _face(sys: EncodingSystem, target: Sequence[int]) -> list[int]:
    """Columns that may be nonzero in a solution for ``target``.

    Pinned to zero: columns offering nothing, offering more than the target
    somewhere, or requiring a transfer outside the target's support (no
    column in the face could cover that requirement).  The remaining columns
    span a face of the cone, whose Hilbert basis is the part of the full
    basis lying in it.
    """
    support = {r for r, v in enumerate(target) if v}
    active = []
    for j in range(len(sys.columns)):
        offer = sys.offers[j]
        if not offer or any(c > target[r] for r, c in offer.items()):
            continue
        if any(r not in support for r in sys.needs[j]):
            continue
        active.append(j)
    return active


def _bounded_solutions(cols: list[dict], target: Sequence[int]) -> list[tuple]:
    """All ``x ∈ ℕ^k`` with ``Σ x_i cols[i] = target`` (sparse, nonzero, entries ≥ 0)."""
    k = len(cols)
    out: list[tuple] = []
    x = [0] * k
    # a row left uncovered by every later column must already be exact
    last_use = {}
    for i, col in enumerate(cols):
        for r in col:
            last_use[r] = i
    closes = [[] for _ in range(k)]
    for r, i in last_use.items():
        closes[i].append(r)
    if any(v and r not in last_use for r, v in enumerate(target)):
        return out

    def go(i: int, rest: list[int]) -> None:
        if i == k:
            out.append(tuple(x))
            return
        col = cols[i]
        bound = min(rest[r] // c for r, c in col.items())
        for v in range(bound + 1):
            x[i] = v
            nxt = list(rest)
            for r, c in col.items():
                nxt[r] -= v * c
            if all(nxt[r] == 0 for r in closes[i]):
                go(i + 1, nxt)
        x[i] = 0

    go(0, list(target))
    return out


def _expand(active: list[int], total: int, values: Sequence[int]) -> tuple:
    y = [0] * total
    for j, v in zip(active, values):
        y[j] = v
    return tuple(y)


def slack_of(sys: EncodingSystem, y: Sequence[int]) -> tuple:
    """``(C - B)y`` over the basis."""
    total = [0] * len(sys.basis)
    for j, v in enumerate(y):
        if v and isinstance(sys.columns[j].body, Contract):
            for r, c in sys.offers[j].items():
                total[r] += v * c
            for r, c in sys.needs[j].items():
                total[r] -= v * c
    return tuple(total)


def solve_via_hilbert(sys: EncodingSystem, target: Sequence[int],
                      cap: int = DEFAULT_FRONTIER_CAP) -> set:
    """Hilbert basis ``H`` of the cone, then ``Dx = target`` with ``D = [A|C]H``."""
    if not any(target):
        return {(0,) * len(sys.columns)}
    active = _face(sys, target)
    if not active:
        return set()
    rows = sorted({r for j in active for r in sys.offers[j]} | {r for j in active for r in sys.needs[j]})
    M = []
    for r in rows:
        row = []
        for j in active:
            c = sys.offers[j].get(r, 0) if j >= sys.n else 0
            row.append(c - sys.needs[j].get(r, 0))
        if any(row):
            M.append(row)
    H = hilbert_basis(M, len(active), cap)
    D = []
    for h in H:
        col: dict = {}
        for i, j in enumerate(active):
            if h[i]:
                for r, c in sys.offers[j].items():
                    col[r] = col.get(r, 0) + h[i] * c
        D.append(col)
    out = set()
    for x in _bounded_solutions(D, target):
        comb = [sum(x[t] * H[t][i] for t in range(len(H))) for i in range(len(active))]
        out.add(_expand(active, len(sys.columns), comb))
    return out


def solve_direct(sys: EncodingSystem, target: Sequence[int]) -> set:
    """Enumerate ``[A|C]y = target`` directly, then filter on the slack.

    Each ``y_j`` is bounded by componentwise quotients; all-zero columns and
    columns outside the face are pinned to zero.
    """
    if not any(target):
        return {(0,) * len(sys.columns)}
    active = _face(sys, target)
    out = set()
    for x in _bounded_solutions([sys.offers[j] for j in active], target):
        y = _expand(active, len(sys.columns), x)
        if all(v >= 0 for v in slack_of(sys, y)):
            out.add(y)
    return out


def solve_fair_system(sys: EncodingSystem, target: Sequence[int],
                      cap: int = DEFAULT_FRONTIER_CAP) -> list[tuple]:
    """Every ``y ≥ 0`` with ``[A|C]y = target`` and ``(C-B)y ≥ 0``, sorted."""
    if any(t < 0 for t in target):
        raise ValueError("target must be nonnegative")
    via_h = solve_via_hilbert(sys, target, cap)
    direct = solve_direct(sys, target)
    ROUTE_CHECKS["systems"] += 1
    if via_h != direct:
        raise RouteDisagreement(f"hilbert route {sorted(via_h)} vs direct {sorted(direct)}")
    ROUTE_CHECKS["agreements"] += 1
    return sorted(direct)


@dataclass(frozen=True)
class Infeasible:
    user: str
    resource: str

    def __bool__(self) -> bool:
        return False


def feasible_single_step(exc: Bag, st: State) -> State | Infeasible:
    try:
        return apply_exchange(st, exc)
    except InsufficientResources as err:
        return Infeasible(err.user, err.resource)


def firing_sequence(exc: Bag, st: State, cap: int | None = None) -> list | None:
    """Order ``exc`` into steps, each feasible from the state before it.

    Transfers are fired one at a time by depth-first search (memoized on the
    remaining transfers and the current state); consecutive transfers are
    then grouped into a step while they remain jointly feasible.
    """
    limit = exchange_cap() if cap is None else cap
    if len(exc) > limit:
        raise SearchCap(f"exchange of size {len(exc)} exceeds firing cap {limit}")
    dead: set = set()

    def dfs(rest: Bag, cur: Bag) -> list | None:
        if not rest:
            return []
        key = (rest, cur)
        if key in dead:
            return None
        for t in rest.distinct():
            src = (t.giver, t.resource)
            if cur.count(src) < 1:
                continue
            nxt = cur.remove(src).add((t.receiver, t.resource))
            tail = dfs(rest.remove(t), nxt)
            if tail is not None:
                return [t] + tail
        dead.add(key)
        return None

    order = dfs(exc, st.bag)
    if order is None:
        return None
    steps: list[Bag] = []
    cur = st
    group: list[Transfer] = []
    for t in order:
        trial = Bag(group + [t])
        if is_feasible(cur, trial):
            group.append(t)
            continue
        steps.append(Bag(group))
        cur = apply_exchange(cur, Bag(group))
        group = [t]
    if group:
        steps.append(Bag(group))
    return steps


@dataclass(frozen=True)
class FairnessCertificate:
    y: tuple
    exchange: Bag
    slack: tuple
    witness: FairnessWitness
    uses: tuple                      # (lifted formula, multiplicity), column order
    firing: tuple | None = None
    mode: str = STRICT
    system: EncodingSystem | None = field(default=None, compare=False, repr=False)


def _certificate(sys: EncodingSystem, y: tuple, exc: Bag, mode: str,
                 firing: list | None) -> FairnessCertificate:
    slack = slack_of(sys, y)
    per_user: dict[str, Bag] = {}
    uses = []
    for j, v in enumerate(y):
        if not v:
            continue
        w = sys.columns[j]
        uses.append((w, v))
        if isinstance(w.body, Contract):
            promised = decode_exchange(w.body.rhs)
            owner = promised.distinct()[0].giver
            paid = decode_exchange(w.body.lhs)
            for _ in range(v):
                per_user[owner] = per_user.get(owner, Bag()) + paid
    return FairnessCertificate(
        y=y, exchange=exc, slack=slack, witness=FairnessWitness(per_user),
        uses=tuple(uses), firing=tuple(firing) if firing is not None else None,
        mode=mode, system=sys,
    )


def decide_exchange(theory: GroundedTheory | EncodingSystem, st: State, exc: Bag,
                    mode: str = STRICT, cap: int | None = None) -> FairnessCertificate | Unfair:
    """Is the specific exchange ``exc`` fair (in one step, or eventually)?"""
    sys = theory if isinstance(theory, EncodingSystem) else build_system(theory)
    target = sys.vector(encode_exchange(exc))
    if target is None:
        return Unfair("some transfer is granted by no formula of the theory")
    firing = None
    if mode == STRICT:
        if not is_feasible(st, exc):
            return Unfair("not feasible in a single step")
    else:
        firing = firing_sequence(exc, st, cap if cap is not None else max(len(exc), exchange_cap()))
        if firing is None:
            return Unfair("no firing order is feasible")
    ys = solve_fair_system(sys, target)
    if not ys:
        return Unfair("promises do not cover the requirements")
    return _certificate(sys, ys[0], exc, mode, firing)


def candidate_levels(sys: EncodingSystem, st: State, mode: str, cap: int) -> Iterable[tuple[int, list]]:
    """Yield ``(size, exchanges)`` level by level, up to ``cap + 1``.

    Only transfers some formula can offer are considered.  Strict candidates
    are feasible in one step; star-cut candidates admit a firing order.
    """
    offered = sorted({decode_exchange(Bag([sys.basis[r]])).distinct()[0]
                      for offer in sys.offers for r in offer})
    if mode == STRICT:
        level: list[tuple[Bag, int, Bag]] = [(Bag(), 0, Bag())]
        yield 0, [Bag()]
        for size in range(1, cap + 2):
            nxt = []
            for exc, last, out in level:
                for i in range(last, len(offered)):
                    t = offered[i]
                    src = (t.giver, t.resource)
                    if out.count(src) + 1 > st.get(*src):
                        continue
                    nxt.append((exc.add(t), i, out.add(src)))
            level = nxt
            yield size, [e for e, _, _ in level]
            if not level:
                return
    else:
        frontier: dict[Bag, Bag] = {Bag(): st.bag}
        yield 0, [Bag()]
        for size in range(1, cap + 2):
            nxt: dict[Bag, Bag] = {}
            for exc, cur in frontier.items():
                for t in offered:
                    src = (t.giver, t.resource)
                    if cur.count(src) < 1:
                        continue
                    new = exc.add(t)
                    if new not in nxt:
                        nxt[new] = cur.remove(src).add((t.receiver, t.resource))
            frontier = nxt
            yield size, sorted(frontier, key=lambda b: b.items())
            if not frontier:
                return


def search(theory: GroundedTheory, st: State, accept, mode: str = STRICT,
           cap: int | None = None) -> FairnessCertificate | Unfair:
    """Smallest fair exchange whose outcome satisfies ``accept``.

    Ties within a size are broken by the lexicographically smallest ``y``.
    """
    limit = exchange_cap() if cap is None else cap
    sys = build_system(theory)
    for size, candidates in candidate_levels(sys, st, mode, limit):
        if size > limit:
            if candidates:
                return Unfair("cap")
            break
        best: FairnessCertificate | None = None
        for exc in candidates:
            final = State(bag=_outcome(st.bag, exc), users=st.users)
            if not accept(final):
                continue
            cert = decide_exchange(sys, st, exc, mode, cap=max(limit, len(exc)))
            if cert and (best is None or cert.y < best.y):
                best = cert
        if best is not None:
            return best
    return Unfair("no fair exchange")


def _outcome(bag: Bag, exc: Bag) -> Bag:
    """Holdings after all of ``exc`` has fired, in whatever order."""
    net: dict = dict(bag.items())
    for (t, k) in exc.items():
        net[(t.giver, t.resource)] = net.get((t.giver, t.resource), 0) - k
        net[(t.receiver, t.resource)] = net.get((t.receiver, t.resource), 0) + k
    return Bag({key: v for key, v in net.items() if v > 0})


def universe_of(rulesets: Mapping[str, Ruleset], ctx: Context, *states: State) -> list[str]:
    names = set(rulesets)
    for st in states:
        names |= set(st.users)
    for _, args in ctx.facts:
        names |= set(args)
    return sorted(names)


def decide_theory(theory: GroundedTheory, st: State, st_target: State, mode: str = STRICT,
                  cap: int | None = None) -> FairnessCertificate | Unfair:
    if st.totals() != st_target.totals():
        return Unfair("resource totals differ")
    target_bag = st_target.bag
    return search(theory, st, lambda final: final.bag == target_bag, mode, cap)


def decide(rulesets: Mapping[str, Ruleset], ctx: Context, st: State, st_target: State,
           mode: str = STRICT, cap: int | None = None,
           universe: Iterable[str] | None = None) -> FairnessCertificate | Unfair:
    """Certificate for a fair (strict) or eventually fair (star-cut) transition."""
    names = list(universe) if universe is not None else universe_of(rulesets, ctx, st, st_target)
    if st.totals() != st_target.totals():
        return Unfair("resource totals differ")
    theory = theory_from_rulesets(rulesets, ctx, names)
    return decide_theory(theory, st, st_target, mode, cap)
