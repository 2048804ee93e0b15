"""Trusted third party: a verify-and-apply ledger for proof-carrying exchanges.

The ledger never searches for proofs.  Clients build them off-line (see
:func:`fairexchange.prove.fair_st`) and submit them; the ledger checks the
proof, checks that its theory and consumed state are drawn from what is
registered, and then moves the resources named by the proof's conclusion.

Every state change goes through :func:`handle`, which is a pure function from
``(ledger, request)`` to ``(ledger', response)``.  A failed request returns
the input ledger object itself, so an error can never leave a partial update.
"""

from __future__ import annotations

import hashlib
import json
import os
import socket
import socketserver
import sys
import tempfile
import threading
from dataclasses import dataclass, field, replace
from typing import Any, Iterable, Mapping, TextIO

from .compile import GroundedTheory, compile_state, theory_from_rulesets
from .logic import (
    MODES,
    STARCUT,
    Invalid,
    MalformedProofError,
    NOT_SUBSUMED,
    canonical_dumps,
    check_proof,
    check_reduced_against,
    flat_sigma,
    proof_from_json,
    proof_hash,
)
from .model import State
from .muac import Context, MuacError, Ruleset, SemanticError, parse_ruleset, predicate_arities

SNAPSHOT_VERSION = 1
GENESIS = "0" * 64

OPS = ("AddResource", "WithdrawResource", "SetPolicy", "SetContextFact", "GetState",
       "GetPolicies", "Exchange")


class CorruptSnapshot(ValueError):
    pass


class LedgerError(Exception):
    def __init__(self, code: str, message: str, reason: str | None = None) -> None:
        super().__init__(message)
        self.code = code
        self.message = message
        self.reason = reason


def sha256(obj: Any) -> str:
    return hashlib.sha256(canonical_dumps(obj).encode("utf-8")).hexdigest()


def state_hash(st: State) -> str:
    return sha256(st.to_dict())


@dataclass(frozen=True)
class LogEntry:
    prev: str
    request: str
    proof: str | None
    verdict: str
    state: str

    @property
    def hash(self) -> str:
        return sha256(self.body())

    def body(self) -> dict:
        return {"prev": self.prev, "request": self.request, "proof": self.proof,
                "verdict": self.verdict, "state": self.state}

    def to_json(self) -> dict:
        return {**self.body(), "hash": self.hash}


@dataclass(frozen=True)
class Ledger:
    users: tuple
    resources: tuple
    state: State
    sources: tuple = ()               # (user, MuAC source), sorted by user
    context: Context = field(default_factory=Context)
    log: tuple = ()
    mode: str = STARCUT
    _cache: dict = field(default_factory=dict, compare=False, repr=False)

    @classmethod
    def create(cls, users: Iterable[str] = (), resources: Iterable[str] = (),
               mode: str = STARCUT) -> "Ledger":
        if mode not in MODES:
            raise ValueError(f"unknown mode {mode!r}")
        names = tuple(sorted(set(users)))
        return cls(names, tuple(sorted(set(resources))), State(users=names), mode=mode)

    @property
    def head(self) -> str:
        return self.log[-1].hash if self.log else GENESIS

    def rulesets(self) -> dict[str, Ruleset]:
        key = ("rulesets", self.sources)
        if key not in self._cache:
            self._cache[key] = {u: parse_ruleset(src, u) for u, src in self.sources}
        return self._cache[key]

    def theory(self) -> GroundedTheory:
        key = ("theory", self.sources, self.context, self.users)
        if key not in self._cache:
            self._cache[key] = theory_from_rulesets(self.rulesets(), self.context, self.users)
        return self._cache[key]

    def policies(self) -> dict[str, str]:
        return dict(self.sources)

    def snapshot(self) -> dict:
        return {
            "version": SNAPSHOT_VERSION,
            "mode": self.mode,
            "universe": {"users": list(self.users), "resources": list(self.resources)},
            "state": self.state.to_dict(),
            "policies": self.policies(),
            "context": [[name, list(args)] for name, args in sorted(self.context.facts)],
            "log": [e.to_json() for e in self.log],
        }

    def dumps(self) -> str:
        return canonical_dumps(self.snapshot())

    def __eq__(self, other: object) -> bool:
        return isinstance(other, Ledger) and self.dumps() == other.dumps()

    def __hash__(self) -> int:
        return hash(self.dumps())


# -- request handling --------------------------------------------------------


def ok(payload: Any = None, rid: Any = None) -> dict:
    return {"id": rid, "ok": True, "result": payload}


def err(code: str, message: str, rid: Any = None, reason: str | None = None) -> dict:
    out = {"code": code, "message": message}
    if reason is not None:
        out["reason"] = reason
    return {"id": rid, "ok": False, "error": out}


def _arg(args: Mapping, name: str, kind: type = str) -> Any:
    if name not in args:
        raise LedgerError("BadRequest", f"missing argument {name!r}")
    value = args[name]
    if not isinstance(value, kind):
        raise LedgerError("BadRequest", f"argument {name!r} has the wrong type")
    return value


def _user(ledger: Ledger, user: str) -> str:
    if user not in ledger.users:
        raise LedgerError("UnknownUser", f"{user} is not a registered user")
    return user


def _resource(ledger: Ledger, res: str) -> str:
    if res not in ledger.resources:
        raise LedgerError("UnknownResource", f"{res} is not a registered resource")
    return res


def _check_arities(sources: Iterable[tuple[str, str]], ctx: Context,
                   parsed: Mapping[str, Ruleset] | None = None) -> None:
    sets = list(parsed.values()) if parsed is not None else [parse_ruleset(s, u) for u, s in sources]
    try:
        arities = predicate_arities(sets)
    except SemanticError as e:
        raise LedgerError("ArityMismatch", str(e)) from None
    for name, args in sorted(ctx.facts):
        if name in arities and arities[name] != len(args):
            raise LedgerError("ArityMismatch",
                              f"{name} takes {arities[name]} arguments, fact has {len(args)}")


def _commit(ledger: Ledger, req: Mapping, verdict: str, proof: str | None = None,
            **changes: Any) -> Ledger:
    # cache keys are content addressed, so entries stay valid in the successor
    new = replace(ledger, _cache=dict(ledger._cache), **changes)
    entry = LogEntry(ledger.head, sha256(req), proof, verdict, state_hash(new.state))
    return replace(new, log=ledger.log + (entry,), _cache=new._cache)


def _exchange(ledger: Ledger, req: Mapping, args: Mapping) -> tuple[Ledger, Any]:
    raw = args.get("proof")
    if raw is None:
        raise LedgerError("BadRequest", "missing argument 'proof'")
    try:
        proof = proof_from_json(raw)
    except MalformedProofError as e:
        raise LedgerError("InvalidProof", str(e), "MalformedProof") from None
    verdict = check_proof(proof, ledger.mode)
    if isinstance(verdict, Invalid):
        raise LedgerError("InvalidProof", str(verdict), verdict.reason)
    try:
        theory = ledger.theory()
    except MuacError as e:
        raise LedgerError("ParseError", str(e)) from None
    sub = check_reduced_against(proof, theory.full_omega(), compile_state(ledger.state))
    if isinstance(sub, Invalid):
        code = "NotSubsumed" if sub.reason == NOT_SUBSUMED else "InvalidProof"
        raise LedgerError(code, str(sub), sub.reason)
    c = proof.conclusion
    consumed = flat_sigma(c.sigma).map(lambda a: (a.usr, a.res))
    produced = c.goal.map(lambda a: (a.usr, a.res))
    for user, res in produced.distinct():
        _user(ledger, user)
        _resource(ledger, res)
    st = State(bag=(ledger.state.bag - consumed) + produced, users=ledger.users)
    phash = proof_hash(proof)
    new = _commit(ledger, req, "applied", phash, state=st)
    return new, {"state": st.to_dict(), "proof": phash, "entry": new.head}


def _dispatch(ledger: Ledger, req: Mapping) -> tuple[Ledger, Any]:
    op = req.get("op")
    args = req.get("args") or {}
    if not isinstance(args, Mapping):
        raise LedgerError("BadRequest", "args must be an object")
    if op == "GetState":
        return ledger, {
            "mode": ledger.mode,
            "users": list(ledger.users),
            "resources": list(ledger.resources),
            "state": ledger.state.to_dict(),
            "context": [[n, list(a)] for n, a in sorted(ledger.context.facts)],
            "head": ledger.head,
        }
    if op == "GetPolicies":
        return ledger, ledger.policies()
    if op in ("AddResource", "WithdrawResource"):
        user = _user(ledger, _arg(args, "user"))
        res = _resource(ledger, _arg(args, "res"))
        pair = (user, res)
        if op == "AddResource":
            bag = ledger.state.bag.add(pair)
        else:
            if ledger.state.get(user, res) < 1:
                raise LedgerError("NoSuchResource", f"{user} holds no {res}")
            bag = ledger.state.bag.remove(pair)
        st = State(bag=bag, users=ledger.users)
        new = _commit(ledger, req, "applied", state=st)
        return new, {"state": st.to_dict()}
    if op == "SetPolicy":
        user = _user(ledger, _arg(args, "user"))
        source = _arg(args, "source")
        try:
            rs = parse_ruleset(source, user)
        except MuacError as e:
            raise LedgerError("ParseError", str(e)) from None
        sources = tuple(sorted({**ledger.policies(), user: source}.items()))
        parsed = {**ledger.rulesets(), user: rs}
        _check_arities(sources, ledger.context, parsed)
        new = _commit(ledger, req, "applied", sources=sources)
        return new, {"user": user, "rules": len(rs.rules)}
    if op == "SetContextFact":
        name = _arg(args, "pred")
        fact_args = tuple(_arg(args, "args", list))
        for a in fact_args:
            if not isinstance(a, str):
                raise LedgerError("BadRequest", "fact arguments must be user names")
            _user(ledger, a)
        action = args.get("action", "add")
        if action == "add":
            try:
                ctx = ledger.context.with_fact(name, fact_args)
            except SemanticError as e:
                raise LedgerError("ArityMismatch", str(e)) from None
        elif action == "remove":
            ctx = ledger.context.without_fact(name, fact_args)
        else:
            raise LedgerError("BadRequest", f"unknown action {action!r}")
        _check_arities(ledger.sources, ctx, ledger.rulesets())
        new = _commit(ledger, req, "applied", context=ctx)
        return new, {"context": [[n, list(a)] for n, a in sorted(ctx.facts)]}
    if op == "Exchange":
        return _exchange(ledger, req, args)
    raise LedgerError("BadRequest", f"unknown op {op!r}")


def handle(ledger: Ledger, req: Mapping) -> tuple[Ledger, dict]:
    """Process one request; on any error the ledger is returned untouched."""
    rid = req.get("id") if isinstance(req, Mapping) else None
    if not isinstance(req, Mapping):
        return ledger, err("BadRequest", "request must be an object", rid)
    try:
        new, payload = _dispatch(ledger, req)
    except LedgerError as e:
        return ledger, err(e.code, e.message, rid, e.reason)
    return new, ok(payload, rid)


# -- persistence -------------------------------------------------------------


def persist(ledger: Ledger, path: str | os.PathLike) -> None:
    """Write the snapshot atomically (temporary file, then rename)."""
    target = os.fspath(path)
    folder = os.path.dirname(os.path.abspath(target))
    fd, tmp = tempfile.mkstemp(dir=folder, prefix=".snapshot-")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            fh.write(ledger.dumps())
            fh.write("\n")
        os.replace(tmp, target)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def from_snapshot(doc: Any) -> Ledger:
    try:
        if doc.get("version") != SNAPSHOT_VERSION:
            raise CorruptSnapshot(f"unsupported snapshot version {doc.get('version')!r}")
        uni = doc["universe"]
        users = tuple(uni["users"])
        resources = tuple(uni["resources"])
        st = State(doc["state"], users)
        ctx = Context((n, tuple(a)) for n, a in doc["context"])
        sources = tuple(sorted(doc["policies"].items()))
        entries = []
        prev = GENESIS
        for raw in doc["log"]:
            e = LogEntry(raw["prev"], raw["request"], raw["proof"], raw["verdict"], raw["state"])
            if e.prev != prev or e.hash != raw["hash"]:
                raise CorruptSnapshot(f"log chain breaks at entry {len(entries)}")
            entries.append(e)
            prev = e.hash
        mode = doc.get("mode", STARCUT)
    except CorruptSnapshot:
        raise
    except (KeyError, TypeError, AttributeError, ValueError, MuacError) as e:
        raise CorruptSnapshot(f"malformed snapshot: {e}") from None
    if mode not in MODES:
        raise CorruptSnapshot(f"unknown mode {mode!r}")
    if set(st.users) - set(users) or {r for _, r in st.bag.distinct()} - set(resources):
        raise CorruptSnapshot("state mentions undeclared users or resources")
    if entries and entries[-1].state != state_hash(st):
        raise CorruptSnapshot("state does not match the last log entry")
    if not entries and st.bag:
        raise CorruptSnapshot("non-empty state without a log")
    ledger = Ledger(users, resources, State(bag=st.bag, users=users), sources, ctx,
                    tuple(entries), mode)
    try:
        ledger.rulesets()
    except MuacError as e:
        raise CorruptSnapshot(f"stored policy does not parse: {e}") from None
    return ledger


def restore(path: str | os.PathLike) -> Ledger:
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise CorruptSnapshot(f"snapshot is not valid JSON: {e}") from None
    return from_snapshot(doc)


# -- service -----------------------------------------------------------------


class LedgerService:
    """Single-writer wrapper: mutations are serialized, reads see a snapshot."""

    READS = ("GetState", "GetPolicies")

    def __init__(self, ledger: Ledger, snapshot: str | None = None) -> None:
        self.ledger = ledger
        self.snapshot = snapshot
        self._lock = threading.Lock()

    def request(self, req: Any) -> dict:
        if isinstance(req, Mapping) and req.get("op") in self.READS:
            return handle(self.ledger, req)[1]
        with self._lock:
            new, resp = handle(self.ledger, req)
            if new is not self.ledger:
                if self.snapshot:
                    persist(new, self.snapshot)
                self.ledger = new
        return resp

    def line(self, text: str) -> str:
        try:
            req = json.loads(text)
        except json.JSONDecodeError as e:
            resp = err("BadRequest", f"request is not JSON: {e}")
        else:
            resp = self.request(req)
        return json.dumps(resp, sort_keys=True, ensure_ascii=False)


def serve_stream(service: LedgerService, rfile: TextIO, wfile: TextIO) -> None:
    for text in rfile:
        if not text.strip():
            continue
        wfile.write(service.line(text) + "\n")
        wfile.flush()


class _Handler(socketserver.StreamRequestHandler):
    def handle(self) -> None:
        service: LedgerService = self.server.service  # type: ignore[attr-defined]
        for raw in self.rfile:
            text = raw.decode("utf-8", errors="replace")
            if not text.strip():
                continue
            self.wfile.write((service.line(text) + "\n").encode("utf-8"))
            self.wfile.flush()


class LedgerServer(socketserver.ThreadingTCPServer):
    daemon_threads = True
    allow_reuse_address = True

    def __init__(self, address: tuple[str, int], service: LedgerService) -> None:
        super().__init__(address, _Handler)
        self.service = service


def parse_address(addr: str) -> tuple[str, int]:
    host, sep, port = addr.rpartition(":")
    if not sep or not port.isdigit():
        raise ValueError(f"address must be host:port, got {addr!r}")
    return host or "127.0.0.1", int(port)


class Client:
    """Newline-delimited JSON client for a running :class:`LedgerServer`."""

    def __init__(self, addr: str, timeout: float = 30.0) -> None:
        self._sock = socket.create_connection(parse_address(addr), timeout=timeout)
        self._r = self._sock.makefile("r", encoding="utf-8")
        self._w = self._sock.makefile("w", encoding="utf-8")
        self._next = 0

    def call(self, op: str, **args: Any) -> dict:
        self._next += 1
        self._w.write(json.dumps({"id": self._next, "op": op, "args": args}) + "\n")
        self._w.flush()
        line = self._r.readline()
        if not line:
            raise ConnectionError("ledger closed the connection")
        return json.loads(line)

    def close(self) -> None:
        for f in (self._r, self._w, self._sock):
            f.close()

    def __enter__(self) -> "Client":
        return self

    def __exit__(self, *exc: Any) -> None:
        self.close()


class LocalClient:
    """Same interface as :class:`Client`, calling a service in-process."""

    def __init__(self, service: LedgerService) -> None:
        self.service = service
        self._next = 0

    def call(self, op: str, **args: Any) -> dict:
        self._next += 1
        return self.service.request({"id": self._next, "op": op, "args": args})

    def close(self) -> None:
        pass

    def __enter__(self) -> "LocalClient":
        return self

    def __exit__(self, *exc: Any) -> None:
        pass


def run_stdio(service: LedgerService, stdin: TextIO | None = None,
              stdout: TextIO | None = None) -> None:
    serve_stream(service, stdin or sys.stdin, stdout or sys.stdout)
