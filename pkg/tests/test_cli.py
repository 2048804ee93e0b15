import io
import json
import threading

import pytest

from fairexchange.cli import main, setup_requests, simulate
from fairexchange.logic import proof_from_json
from fairexchange.scenario import resolve
from fairexchange.ttp import Ledger, LedgerServer, LedgerService, restore

import helpers as h


def run(capsys, *argv):
    code = main(list(argv))
    out = capsys.readouterr()
    return code, out.out, out.err


def test_policy_check_and_compile(tmp_path, capsys):
    src = tmp_path / "carl.muac"
    src.write_text(h.SOURCES["Carl"])
    code, out, err = run(capsys, "policy", "check", str(src), "--owner", "Carl")
    assert code == 0 and "3 rule(s) ok" in err
    code, out, _ = run(capsys, "policy", "compile", str(src), "--owner", "Carl")
    assert code == 0
    assert out.splitlines()[0] == "Λu,u'. ⊤ → G((lw@u' ⊸ lw@Carl) ⊸* (hw@Carl ⊸ hw@u))"
    code, out, _ = run(capsys, "policy", "compile", str(src), "--owner", "Carl", "--ground",
                       "--users", "Alice,Bob", "--json")
    doc = json.loads(out)
    assert code == 0 and doc["ok"] and len(doc["instances"]) == 10


def test_policy_errors(tmp_path, capsys):
    bad = tmp_path / "bad.muac"
    bad.write_text("Gives(Me, x, Me)")
    code, _, err = run(capsys, "policy", "check", str(bad))
    assert code == 1 and err.startswith("SemanticError")
    empty = tmp_path / "empty.muac"
    empty.write_text("")
    assert run(capsys, "policy", "compile", str(empty))[0] == 0
    assert run(capsys, "policy", "check", str(tmp_path / "missing"))[0] == 2


def test_prove_then_verify(tmp_path, capsys):
    out_file = tmp_path / "p.json"
    code, out, err = run(capsys, "prove", "bundled:running", "--user", "Alice", "--want", "hw",
                         "--out", str(out_file))
    assert code == 0 and out == "" and "proof:" in err
    proof_from_json(json.loads(out_file.read_text()))
    code, out, _ = run(capsys, "verify", str(out_file), "--against", "bundled:running")
    assert code == 0 and out.startswith("valid")
    code, _, err = run(capsys, "verify", str(out_file), "--against", "bundled:explicit")
    assert code == 1 and err.startswith("NotSubsumed")


def test_prove_to_stdout_is_deterministic(capsys):
    first = run(capsys, "prove", "bundled:running", "--user", "Alice", "--want", "hw")[1]
    second = run(capsys, "prove", "bundled:running", "--user", "Alice", "--want", "hw")[1]
    assert first == second and json.loads(first)["rule"]


def test_prove_outcomes(capsys, monkeypatch):
    assert run(capsys, "prove", "bundled:running", "--user", "Alice", "--want", "hp,hw",
               "--mode", "strict")[0] == 1
    assert run(capsys, "prove", "bundled:running", "--user", "Alice", "--want", "hp,hw",
               "--cap", "3")[0] == 2
    monkeypatch.setenv("MUAC_CAP", "1")
    assert run(capsys, "prove", "bundled:running", "--user", "Alice", "--want", "hw")[0] == 2
    monkeypatch.delenv("MUAC_CAP")
    assert run(capsys, "prove", "bundled:running", "--user", "Zed", "--want", "hw")[0] == 2
    assert run(capsys, "prove", "bundled:nothing", "--user", "Alice", "--want", "hw")[0] == 2
    code, out, _ = run(capsys, "prove", "bundled:running", "--user", "Alice", "--want", "hp",
                       "--json", "--full")
    doc = json.loads(out)
    assert code == 0 and doc["state"]["Alice"] == {"hp": 1} and "proof" in doc


def test_verify_rejects_damage(tmp_path, capsys, monkeypatch):
    code, out, _ = run(capsys, "prove", "bundled:running", "--user", "Alice", "--want", "hw")
    monkeypatch.setattr("sys.stdin", io.StringIO(out[: len(out) // 2]))
    code, _, err = run(capsys, "verify", "-")
    assert code == 1 and err.startswith("InvalidProof")
    doc = json.loads(out)
    doc["premises"] = []
    monkeypatch.setattr("sys.stdin", io.StringIO(json.dumps(doc)))
    code, out, _ = run(capsys, "verify", "-", "--json")
    assert code == 1 and json.loads(out)["error"] == "InvalidProof"


def test_simulate_bundled(capsys):
    for name in ("running", "examples", "explicit"):
        code, out, _ = run(capsys, "simulate", f"bundled:{name}")
        assert code == 0, out
        assert "DISAGREEMENT" not in out and "MISMATCH" not in out


def test_simulate_reports_mismatch(tmp_path, capsys):
    text = h.bundled("running").replace("expect = eventually-fair", "expect = fair")
    path = tmp_path / "wrong.scn"
    path.write_text(text)
    code, out, _ = run(capsys, "simulate", str(path))
    assert code == 1 and "MISMATCH relay-hp" in out


def test_simulate_rows():
    rows = {r.name: r for r in simulate(resolve("bundled:examples"), 8)}
    assert rows["relay-hp"].verdict == "eventually-fair"
    assert rows["double-spend"].verdict == "unfair" and rows["double-spend"].agrees


@pytest.fixture
def server():
    service = LedgerService(Ledger.create(h.USERS, ["sb", "lw", "hw", "hp"]))
    srv = LedgerServer(("127.0.0.1", 0), service)
    threading.Thread(target=srv.serve_forever, daemon=True).start()
    host, port = srv.server_address
    yield f"{host}:{port}", service
    srv.shutdown()
    srv.server_close()


def test_client_session(server, capsys):
    addr, service = server
    assert run(capsys, "client", addr, "request", "--user", "Alice", "--want", "hw", "--yes")[0] == 1
    assert run(capsys, "client", addr, "setup", "bundled:running")[0] == 0
    assert service.ledger.state == h.FIXTURE_STATE.with_users(h.USERS)
    code, out, _ = run(capsys, "client", addr, "request", "--user", "Alice", "--want", "hw", "--yes")
    assert code == 0 and "ledger state:" in out
    assert service.ledger.state == h.CIRCULAR_AFTER.with_users(h.USERS)
    code, out, _ = run(capsys, "client", addr, "call", "WithdrawResource",
                       "--args", '{"user": "Alice", "res": "sb"}')
    assert code == 1 and json.loads(out)["error"]["code"] == "NoSuchResource"
    assert run(capsys, "client", addr, "setup", "bundled:explicit")[0] == 2


def test_client_without_server(capsys):
    assert run(capsys, "client", "127.0.0.1:1", "call", "GetState")[0] == 2


def test_setup_requests_cover_the_scenario():
    reqs = setup_requests(resolve("bundled:running"))
    ops = [r["op"] for r in reqs]
    assert ops.count("SetPolicy") == 3 and ops.count("SetContextFact") == 2
    assert ops.count("AddResource") == 7


def test_serve_stdio_with_snapshot(tmp_path, capsys, monkeypatch):
    snap = tmp_path / "ledger.json"
    lines = "\n".join(json.dumps({"id": i, "op": "AddResource", "args": {"user": "A", "res": "x"}})
                      for i in range(3))
    monkeypatch.setattr("sys.stdin", io.StringIO(lines + "\n"))
    code, out, _ = run(capsys, "serve", "--listen", "-", "--snapshot", str(snap),
                       "--users", "A", "--resources", "x")
    assert code == 0 and all(json.loads(x)["ok"] for x in out.splitlines())
    assert restore(snap).state.get("A", "x") == 3
    snap.write_text("{}")
    assert run(capsys, "serve", "--listen", "-", "--snapshot", str(snap))[0] == 2
