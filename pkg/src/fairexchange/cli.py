"""Command-line front end: ``muacl <command> ...``.

Exit codes: 0 on success, 1 when the answer is negative (no fair exchange,
invalid proof, failed diagnostics, ledger error), 2 when a search cap is hit
or the invocation itself is wrong.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Sequence, TextIO

from .compile import compile_ruleset, compile_state, ground_rules, theory_from_rulesets
from .decide import (
    DEFAULT_EXCHANGE_CAP,
    decide_exchange,
    decide_theory,
    exchange_cap,
    firing_sequence,
)
from .logic import (
    MODES,
    STARCUT,
    STRICT,
    Invalid,
    MalformedProofError,
    canonical_dumps,
    check_proof,
    check_reduced_against,
    omega_to_json,
    proof_from_json,
    proof_hash,
    proof_to_json,
)
from .model import (
    CapExceeded,
    State,
    Unfair,
    apply_exchange,
    exists_fair_transition,
    feasible_exchanges,
    format_exchange,
    is_fair_label,
    is_fair_transition,
)
from .muac import Context, MuacError, parse_ruleset
from .prove import build_proof, fair_st_theory, proof_mode
from .scenario import Proposal, Scenario, ScenarioError, resolve
from .ttp import (
    Client,
    CorruptSnapshot,
    Ledger,
    LedgerServer,
    LedgerService,
    parse_address,
    persist,
    restore,
    run_stdio,
)

EXIT_OK, EXIT_NO, EXIT_CAP = 0, 1, 2


def _emit(args: argparse.Namespace, payload: dict, text: str, out: TextIO) -> None:
    if args.json:
        out.write(json.dumps(payload, sort_keys=True, ensure_ascii=False) + "\n")
    elif text:
        out.write(text if text.endswith("\n") else text + "\n")


def _fail(args: argparse.Namespace, code: str, message: str, status: int = EXIT_NO) -> int:
    if args.json:
        sys.stdout.write(json.dumps({"ok": False, "error": code, "message": message},
                                    sort_keys=True, ensure_ascii=False) + "\n")
    else:
        sys.stderr.write(f"{code}: {message}\n")
    return status


def _state_text(st: State) -> str:
    rows = []
    for user, held in st.to_dict().items():
        items = " ".join(f"{r}*{n}" if n > 1 else r for r, n in sorted(held.items()))
        rows.append(f"  {user}: {items or '-'}")
    return "\n".join(rows)


def _cap(args: argparse.Namespace) -> int:
    return args.cap if getattr(args, "cap", None) is not None else exchange_cap()


# -- policy --------------------------------------------------------------------


def cmd_policy(args: argparse.Namespace) -> int:
    try:
        source = Path(args.file).read_text(encoding="utf-8")
    except OSError as e:
        return _fail(args, "IOError", str(e), EXIT_CAP)
    owner = args.owner or "Me"
    try:
        rs = parse_ruleset(source, owner)
    except MuacError as e:
        return _fail(args, type(e).__name__, str(e))
    if args.action == "check":
        _emit(args, {"ok": True, "owner": owner, "rules": [str(r) for r in rs.rules]},
              "\n".join(str(r) for r in rs.rules), sys.stdout)
        if not args.json:
            sys.stderr.write(f"{len(rs.rules)} rule(s) ok\n")
        return EXIT_OK
    compiled = compile_ruleset(rs)
    if args.ground:
        users = [u for u in (args.users or "").split(",") if u]
        if owner not in users:
            users.append(owner)
        theory = ground_rules(compiled, users)
        lines = [f"{i.label}: {i.formula}" for i in theory.instances]
        payload = {"ok": True, "owner": owner,
                   "instances": [{"rule": i.label, "formula": omega_to_json(i.formula)}
                                 for i in theory.instances]}
    else:
        lines = [str(c) for c in compiled]
        payload = {"ok": True, "owner": owner,
                   "rules": [{"rule": c.label, "variables": list(c.variables),
                              "precondition": omega_to_json(c.precondition),
                              "text": str(c)} for c in compiled]}
    _emit(args, payload, "\n".join(lines), sys.stdout)
    return EXIT_OK


# -- prove / verify --------------------------------------------------------------


def cmd_prove(args: argparse.Namespace) -> int:
    try:
        scn = resolve(args.scenario)
    except (OSError, ScenarioError) as e:
        return _fail(args, "ScenarioError", str(e), EXIT_CAP)
    goals = [g for g in args.want.split(",") if g]
    if args.user not in scn.users:
        return _fail(args, "UnknownUser", f"{args.user} is not declared", EXIT_CAP)
    try:
        comp = fair_st_theory(scn.theory(), scn.state, args.user, goals, args.mode, _cap(args),
                              sliced=not args.full)
    except CapExceeded as e:
        return _fail(args, "CapExceeded", str(e), EXIT_CAP)
    if comp is None:
        return _fail(args, "NoFairExchange",
                     f"no {args.mode} computation gives {args.user} {', '.join(goals)}")
    doc = proof_to_json(comp.proof)
    text = canonical_dumps(doc)
    summary = {
        "ok": True,
        "mode": proof_mode(comp.proof),
        "steps": [sorted(str(t) for t in step) for step in comp.firing],
        "state": comp.final.to_dict(),
        "nodes": comp.proof.size(),
        "proof_hash": proof_hash(doc),
    }
    if args.out:
        Path(args.out).write_text(text + "\n", encoding="utf-8")
    if args.json:
        if not args.out:
            summary["proof"] = doc
        sys.stdout.write(json.dumps(summary, sort_keys=True, ensure_ascii=False) + "\n")
        return EXIT_OK
    if not args.out:
        sys.stdout.write(text + "\n")
    lines = [f"fair {summary['mode']} computation in {len(comp.firing)} step(s):"]
    lines += [f"  step {i + 1}: {format_exchange(s)}" for i, s in enumerate(comp.firing)]
    lines += ["resulting state:", _state_text(comp.final),
              f"proof: {summary['nodes']} nodes, sha256 {summary['proof_hash']}"]
    sys.stderr.write("\n".join(lines) + "\n")
    return EXIT_OK


def cmd_verify(args: argparse.Namespace) -> int:
    try:
        raw = sys.stdin.read() if args.proof == "-" else Path(args.proof).read_text(encoding="utf-8")
    except OSError as e:
        return _fail(args, "IOError", str(e), EXIT_CAP)
    try:
        proof = proof_from_json(json.loads(raw))
    except (json.JSONDecodeError, MalformedProofError) as e:
        return _fail(args, "InvalidProof", f"MalformedProof: {e}")
    verdict = check_proof(proof, args.mode)
    if isinstance(verdict, Invalid):
        return _fail(args, "InvalidProof", str(verdict))
    if args.against:
        try:
            scn = resolve(args.against)
        except (OSError, ScenarioError) as e:
            return _fail(args, "ScenarioError", str(e), EXIT_CAP)
        sub = check_reduced_against(proof, scn.theory().full_omega(), compile_state(scn.state))
        if isinstance(sub, Invalid):
            return _fail(args, "NotSubsumed", str(sub))
    _emit(args, {"ok": True, "nodes": verdict.nodes, "mode": args.mode},
          f"valid ({verdict.nodes} nodes, {args.mode})", sys.stdout)
    return EXIT_OK


# -- simulate ------------------------------------------------------------------


@dataclass
class Row:
    name: str
    kind: str
    verdict: str
    oracle: str
    expect: str | None
    detail: str = ""
    proof_ok: bool | None = None

    @property
    def agrees(self) -> bool:
        return self.oracle in ("-", self.verdict)

    @property
    def matches(self) -> bool:
        return self.expect is None or self.expect == self.verdict


def _verdict(strict: bool, star: bool) -> str:
    return "fair" if strict else "eventually-fair" if star else "unfair"


def run_proposal(scn: Scenario, p: Proposal, cap: int) -> Row:
    st = p.state or scn.state
    theory = scn.theory()
    policies = scn.policies()
    certs: dict[str, Any] = {}
    if p.kind == "exchange":
        for mode in MODES:
            certs[mode] = decide_exchange(theory, st, p.exchange, mode, cap)
        label = is_fair_label(policies, p.exchange, scn.users)
        oracle = _verdict(is_fair_transition(st, p.exchange, policies),
                          bool(label) and firing_sequence(p.exchange, st) is not None)
        detail = format_exchange(p.exchange)
    elif p.kind == "target":
        for mode in MODES:
            certs[mode] = decide_theory(theory, st, p.target, mode, cap)
        size = len(st.bag)
        strict_o = exists_fair_transition(st, p.target, policies, scn.users, size) is not None
        # the one-step oracle cannot rule out multi-step computations, so it only
        # confirms the star-cut answer's label
        star = certs[STARCUT]
        star_o = bool(star) and bool(is_fair_label(policies, star.exchange, scn.users, size))
        oracle = _verdict(strict_o, star_o)
        detail = "target state"
    else:
        for mode in MODES:
            try:
                comp = fair_st_theory(theory, st, p.user, p.want, mode, cap)
            except CapExceeded:
                comp = Unfair("cap")
            certs[mode] = comp.certificate if comp else comp
        strict_o = any(
            all(apply_exchange(st, e).get(p.user, r) >= 1 for r in p.want)
            and is_fair_label(policies, e, scn.users, max(6, len(e)))
            for e in feasible_exchanges(st, scn.users)
        )
        star = certs[STARCUT]
        star_o = bool(star) and bool(is_fair_label(policies, star.exchange, scn.users,
                                                   max(6, len(star.exchange))))
        oracle = _verdict(strict_o, star_o)
        detail = f"{p.user} wants {', '.join(p.want)}"
    verdict = _verdict(bool(certs[STRICT]), bool(certs[STARCUT]))
    proof_ok = None
    mode = STRICT if certs[STRICT] else STARCUT if certs[STARCUT] else None
    if mode is not None:
        cert = certs[mode]
        proof = build_proof(cert, theory, st)
        proof_ok = bool(check_proof(proof, mode))
        if verdict != "unfair":
            detail += f"  [{format_exchange(cert.exchange)}]" if p.kind != "exchange" else ""
    return Row(p.name, p.kind, verdict, oracle, p.expect, detail, proof_ok)


def simulate(scn: Scenario, cap: int) -> list[Row]:
    return [run_proposal(scn, p, cap) for p in scn.proposals]


def cmd_simulate(args: argparse.Namespace) -> int:
    try:
        scn = resolve(args.scenario)
    except (OSError, ScenarioError) as e:
        return _fail(args, "ScenarioError", str(e), EXIT_CAP)
    rows = simulate(scn, _cap(args))
    bad = [r for r in rows if not (r.agrees and r.matches and r.proof_ok is not False)]
    if args.json:
        payload = {"ok": not bad, "rows": [
            {"name": r.name, "kind": r.kind, "verdict": r.verdict, "oracle": r.oracle,
             "expect": r.expect, "proof_ok": r.proof_ok} for r in rows]}
        sys.stdout.write(json.dumps(payload, sort_keys=True) + "\n")
    else:
        width = max([len(r.name) for r in rows] + [8])
        out = [f"{'proposal':<{width}}  {'verdict':<15}  {'oracle':<15}  {'expect':<15}  detail"]
        for r in rows:
            out.append(f"{r.name:<{width}}  {r.verdict:<15}  {r.oracle:<15}  "
                       f"{(r.expect or '-'):<15}  {r.detail}")
        for r in bad:
            if not r.agrees:
                out.append(f"DISAGREEMENT {r.name}: decide says {r.verdict}, oracle says {r.oracle}")
            if not r.matches:
                out.append(f"MISMATCH {r.name}: expected {r.expect}, got {r.verdict}")
            if r.proof_ok is False:
                out.append(f"PROOF {r.name}: synthesized proof failed the checker")
        sys.stdout.write("\n".join(out) + "\n")
    return EXIT_NO if bad else EXIT_OK


# -- serve / client ------------------------------------------------------------


def _ledger_for(args: argparse.Namespace):
    if args.snapshot and Path(args.snapshot).exists():
        return restore(args.snapshot)
    users: list[str] = []
    resources: list[str] = []
    if args.scenario:
        scn = resolve(args.scenario)
        users, resources = list(scn.users), list(scn.resources)
    users += [u for u in (args.users or "").split(",") if u]
    resources += [r for r in (args.resources or "").split(",") if r]
    return Ledger.create(users, resources, args.mode)


def cmd_serve(args: argparse.Namespace) -> int:
    try:
        ledger = _ledger_for(args)
    except CorruptSnapshot as e:
        return _fail(args, "CorruptSnapshot", str(e), EXIT_CAP)
    except (OSError, ScenarioError) as e:
        return _fail(args, "ScenarioError", str(e), EXIT_CAP)
    if args.snapshot and not Path(args.snapshot).exists():
        persist(ledger, args.snapshot)
    service = LedgerService(ledger, args.snapshot)
    if args.listen == "-":
        run_stdio(service)
        return EXIT_OK
    server = LedgerServer(parse_address(args.listen), service)
    host, port = server.server_address[:2]
    sys.stderr.write(f"ledger listening on {host}:{port}\n")
    sys.stderr.flush()
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        server.server_close()
    return EXIT_OK


def _connect(addr: str):
    return Client(addr)


def client_request(conn: Any, user: str, goals: Sequence[str], cap: int, confirm,
                   report: TextIO) -> tuple[int, dict]:
    """Fetch the ledger, prove locally, show the outcome, submit when confirmed."""
    st_resp = conn.call("GetState")
    if not st_resp.get("ok"):
        return EXIT_NO, st_resp
    pol_resp = conn.call("GetPolicies")
    if not pol_resp.get("ok"):
        return EXIT_NO, pol_resp
    info = st_resp["result"]
    users = tuple(info["users"])
    if user not in users:
        return EXIT_NO, {"ok": False, "error": {"code": "UnknownUser",
                                                "message": f"{user} is not registered"}}
    st = State(info["state"], users)
    ctx = Context((n, tuple(a)) for n, a in info["context"])
    rulesets = {u: parse_ruleset(src, u) for u, src in pol_resp["result"].items()}
    theory = theory_from_rulesets(rulesets, ctx, users)
    try:
        comp = fair_st_theory(theory, st, user, goals, info["mode"], cap, sliced=True)
    except CapExceeded as e:
        return EXIT_CAP, {"ok": False, "error": {"code": "CapExceeded", "message": str(e)}}
    if comp is None:
        return EXIT_NO, {"ok": False, "error": {"code": "NoFairExchange",
                                                "message": "no fair exchange found"}}
    report.write(f"proposed computation ({len(comp.firing)} step(s)):\n")
    for i, step in enumerate(comp.firing):
        report.write(f"  step {i + 1}: {format_exchange(step)}\n")
    report.write("resulting state:\n" + _state_text(comp.final) + "\n")
    report.write(f"proof: {comp.proof.size()} nodes, {proof_mode(comp.proof)}\n")
    if not confirm():
        return EXIT_NO, {"ok": False, "error": {"code": "Declined", "message": "not submitted"}}
    resp = conn.call("Exchange", proof=proof_to_json(comp.proof))
    return (EXIT_OK if resp.get("ok") else EXIT_NO), resp


def _ask() -> bool:
    try:
        answer = input("submit this exchange? [y/N] ")
    except EOFError:
        return False
    return answer.strip().lower() in ("y", "yes")


def setup_requests(scn: Scenario) -> list[dict]:
    """Requests that register a scenario's policies, context and holdings."""
    reqs: list[dict] = []
    for user in sorted(scn.sources):
        reqs.append({"op": "SetPolicy", "args": {"user": user, "source": scn.sources[user]}})
    for name, fact_args in sorted(scn.context.facts):
        reqs.append({"op": "SetContextFact", "args": {"pred": name, "args": list(fact_args)}})
    for (user, res), n in scn.state.bag.items():
        reqs += [{"op": "AddResource", "args": {"user": user, "res": res}}] * n
    return reqs


def cmd_client(args: argparse.Namespace) -> int:
    try:
        conn = _connect(args.addr)
    except (OSError, ValueError) as e:
        return _fail(args, "ConnectionError", str(e), EXIT_CAP)
    with conn:
        if args.action == "request":
            goals = [g for g in args.want.split(",") if g]
            confirm = (lambda: True) if args.yes else _ask
            report = sys.stderr if args.json else sys.stdout
            status, resp = client_request(conn, args.user, goals, _cap(args), confirm, report)
        elif args.action == "setup":
            try:
                scn = resolve(args.scenario)
            except (OSError, ScenarioError) as e:
                return _fail(args, "ScenarioError", str(e), EXIT_CAP)
            if scn.approvals is not None:
                return _fail(args, "ScenarioError", "the ledger takes MuAC policies only", EXIT_CAP)
            resp = {"ok": True, "result": None}
            for req in setup_requests(scn):
                resp = conn.call(req["op"], **req["args"])
                if not resp.get("ok"):
                    break
            status = EXIT_OK if resp.get("ok") else EXIT_NO
        else:
            try:
                call_args = json.loads(args.args or "{}")
            except json.JSONDecodeError as e:
                return _fail(args, "BadRequest", str(e), EXIT_CAP)
            resp = conn.call(args.op, **call_args)
            status = EXIT_OK if resp.get("ok") else EXIT_NO
    if args.json or args.action == "call":
        sys.stdout.write(json.dumps(resp, sort_keys=True, ensure_ascii=False) + "\n")
    elif resp.get("ok"):
        result = resp.get("result")
        if isinstance(result, dict) and "state" in result:
            sys.stdout.write("ledger state:\n" + _state_text(State(result["state"])) + "\n")
        else:
            sys.stdout.write("ok\n")
    else:
        error = resp.get("error", {})
        sys.stderr.write(f"{error.get('code')}: {error.get('message')}\n")
    return status


# -- argument parsing ----------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--json", action="store_true", help="machine-readable output")

    parser = argparse.ArgumentParser(prog="muacl", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    pol = sub.add_parser("policy", help="check or compile a MuAC ruleset", parents=[common])
    pol.add_argument("action", choices=("check", "compile"))
    pol.add_argument("file")
    pol.add_argument("--owner", help="user the ruleset belongs to (Me)")
    pol.add_argument("--ground", action="store_true", help="list ground instances")
    pol.add_argument("--users", help="comma-separated universe for --ground")
    pol.set_defaults(func=cmd_policy)

    def search_opts(p: argparse.ArgumentParser, mode: str) -> None:
        p.add_argument("--mode", choices=MODES, default=mode)
        p.add_argument("--cap", type=int, default=None,
                       help=f"largest exchange searched (MUAC_CAP, default {DEFAULT_EXCHANGE_CAP})")

    pr = sub.add_parser("prove", help="find a fair computation and its proof", parents=[common])
    pr.add_argument("scenario", help="scenario file or bundled:<name>")
    pr.add_argument("--user", required=True)
    pr.add_argument("--want", required=True, help="comma-separated resources")
    pr.add_argument("--out", help="write the proof here instead of standard output")
    pr.add_argument("--full", action="store_true", help="keep the whole theory and state")
    search_opts(pr, STARCUT)
    pr.set_defaults(func=cmd_prove)

    ve = sub.add_parser("verify", help="check a proof file", parents=[common])
    ve.add_argument("proof", help="proof file, or - for standard input")
    ve.add_argument("--against", help="scenario the proof must be drawn from")
    ve.add_argument("--mode", choices=MODES, default=STARCUT)
    ve.set_defaults(func=cmd_verify)

    si = sub.add_parser("simulate", help="decide every proposal of a scenario", parents=[common])
    si.add_argument("scenario")
    si.add_argument("--cap", type=int, default=None)
    si.set_defaults(func=cmd_simulate)

    se = sub.add_parser("serve", help="run the ledger service", parents=[common])
    se.add_argument("--snapshot", help="snapshot file (restored when present)")
    se.add_argument("--listen", default="127.0.0.1:7878", help="host:port, or - for stdio")
    se.add_argument("--scenario", help="take users and resources from this scenario")
    se.add_argument("--users", help="comma-separated users")
    se.add_argument("--resources", help="comma-separated resources")
    se.add_argument("--mode", choices=MODES, default=STARCUT)
    se.set_defaults(func=cmd_serve)

    cl = sub.add_parser("client", help="talk to a running ledger")
    cl.add_argument("addr", help="host:port")
    csub = cl.add_subparsers(dest="action", required=True)
    rq = csub.add_parser("request", help="prove locally and submit", parents=[common])
    rq.add_argument("--user", required=True)
    rq.add_argument("--want", required=True)
    rq.add_argument("--yes", action="store_true", help="submit without asking")
    rq.add_argument("--cap", type=int, default=None)
    st = csub.add_parser("setup", help="register a scenario's policies and holdings",
                         parents=[common])
    st.add_argument("scenario")
    ca = csub.add_parser("call", help="send one raw request", parents=[common])
    ca.add_argument("op")
    ca.add_argument("--args", help="JSON object of arguments")
    cl.set_defaults(func=cmd_client)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
