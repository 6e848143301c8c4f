import json
import socket
import threading

import numpy as np
import pytest

from qmoney.photonics import AbstractDevice
from qmoney.protocol import Reason, VerificationClaim, bank_verify, mint
from qmoney.security import SecurityParams
from qmoney.service import wire
from qmoney.service.client import BankClient, BankError, client_mint, client_verify
from qmoney.service.ledger import Bank, BankConfig, load_banknote
from qmoney.service.server import BankServer

PARAMS = SecurityParams(eta=0.0336, beta=0.033, eps=0.0018, delta=0.0165)
PERFECT = AbstractDevice(1.0, 0.0)


@pytest.fixture
def server(tmp_path):
    bank = Bank.open(tmp_path / "bank.jsonl", BankConfig(PARAMS, cap_T=3), np.random.default_rng(1), fsync=False)
    srv = BankServer(("127.0.0.1", 0), bank)
    srv.start_background()
    yield srv
    srv.shutdown()
    srv.server_close()
    bank.close()


def _raw(endpoint, lines):
    with socket.create_connection(endpoint, timeout=10) as s:
        s.sendall(b"".join(lines))
        f = s.makefile("rb")
        return [json.loads(f.readline()) for _ in lines]


def test_mint_round_trip(server, tmp_path):
    with BankClient(*server.endpoint) as c:
        reply = c.mint(4)
    assert reply["n"] == 4
    note = reply["banknote"]
    record = server.bank.get(reply["serial"])
    np.testing.assert_array_equal(wire.unpack_blocks(note["blocks"], 4), record.secrets)
    assert record.counter_s == 0 and not record.register_r.any()


def test_thresholds(server):
    with BankClient(*server.endpoint) as c:
        serial = c.mint(4)["serial"]
        reply = c.thresholds(serial)
    assert wire.parse_prob(reply["error_threshold"]) == PARAMS.error_threshold
    assert wire.parse_prob(reply["efficiency_threshold"]) == PARAMS.efficiency_threshold
    assert wire.params_from_wire(reply["params"]) == PARAMS


def test_unknown_serial(server):
    claim = VerificationClaim("deadbeef", "n", [0], [(1, 2)], [0], 1)
    with BankClient(*server.endpoint) as c:
        assert c.verify(claim).reason is Reason.UNKNOWN_SERIAL
        with pytest.raises(BankError, match="UNKNOWN_SERIAL"):
            c.thresholds("deadbeef")


def test_malformed_input_gets_error_and_connection_survives(server):
    replies = _raw(
        server.endpoint,
        [
            b"this is not json\n",
            b'{"type":"BOGUS","id":7}\n',
            b'{"type":"MINT_REQ","id":8,"n":"four"}\n',
            b'{"type":"VERIFY_REQ","id":9,"claim":{"serial":"x"}}\n',
            b'{"type":"MINT_REQ","id":10,"n":2}\n',
        ],
    )
    assert [r["type"] for r in replies] == ["ERROR"] * 4 + ["MINT_RESP"]
    assert [r["id"] for r in replies] == [None, 7, 8, 9, 10]


def test_client_verify_fresh_note_accepted(server, tmp_path):
    note = tmp_path / "note.json"
    client_mint(server.endpoint, 2_000, note)
    verdict, stats = client_verify(server.endpoint, note, 1_000, PERFECT, np.random.default_rng(0))
    assert verdict.accepted and stats.l_conclusive == 1_000 and stats.errors == 0
    assert load_banknote(note).consumed.sum() == 1_000


def test_reuse_disjoint_then_exhaust(server, tmp_path):
    note = tmp_path / "note.json"
    serial = client_mint(server.endpoint, 100, note)
    rng = np.random.default_rng(0)
    for _ in range(3):
        verdict, _ = client_verify(server.endpoint, note, 10, PERFECT, rng)
        assert verdict.accepted
    verdict, _ = client_verify(server.endpoint, note, 10, PERFECT, rng)
    assert verdict.reason is Reason.ATTEMPTS_EXHAUSTED
    assert server.bank.get(serial).register_r.sum() == 30


def test_local_efficiency_abort_does_not_contact_bank(server, tmp_path):
    note = tmp_path / "note.json"
    serial = client_mint(server.endpoint, 100, note)
    verdict, _ = client_verify(server.endpoint, note, 50, AbstractDevice(0.0, 0.0), np.random.default_rng(0))
    assert verdict.reason is Reason.EFFICIENCY_SHORTFALL
    assert server.bank.get(serial).counter_s == 0


def test_client_verify_unknown_serial(server, tmp_path):
    note = tmp_path / "note.json"
    client_mint(server.endpoint, 10, note)
    obj = json.loads(note.read_text())
    obj["serial"] = "0" * 32
    note.write_text(json.dumps(obj))
    verdict, _ = client_verify(server.endpoint, note, 5, PERFECT, np.random.default_rng(0))
    assert verdict.reason is Reason.UNKNOWN_SERIAL


def _correct_claim(record, indices, nonce):
    indices = np.asarray(indices)
    v = record.secrets[indices]
    bits = ((v >> 3) ^ (v >> 2)) & 1
    return VerificationClaim(record.serial, nonce, indices, np.tile((1, 2), (indices.size, 1)), bits, indices.size)


def test_concurrent_overlapping_claims_over_tcp(server):
    params = SecurityParams(eta=1.0, beta=0.033, eps=0.01, delta=0.0135)
    for trial in range(20):
        record, _ = server.bank.mint(50, params=params, cap_T=10)
        claims = [_correct_claim(record, np.arange(k, k + 20), f"{trial}-{k}") for k in range(0, 8)]
        results = [None] * len(claims)
        barrier = threading.Barrier(len(claims))

        def go(i):
            with BankClient(*server.endpoint) as c:
                barrier.wait()
                results[i] = c.verify(claims[i])

        threads = [threading.Thread(target=go, args=(i,)) for i in range(len(claims))]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
        assert sum(v.accepted for v in results) == 1
        assert all(v.reason in (Reason.OK, Reason.REUSED_INDEX) for v in results)


def test_forced_interleaving_lets_exactly_one_through():
    """Thread A is paused inside persistence while B submits an overlapping claim."""
    params = SecurityParams(eta=1.0, beta=0.033, eps=0.01, delta=0.0135)
    record, _ = mint(10, 0.25, params, 5, np.random.default_rng(0))
    in_persist, release = threading.Event(), threading.Event()
    out = {}

    def slow_persist(mutation):
        in_persist.set()
        release.wait(10)

    def a():
        out["a"] = bank_verify(record, _correct_claim(record, [0, 1, 2], "a"), persist=slow_persist)

    def b():
        out["b"] = bank_verify(record, _correct_claim(record, [2, 3], "b"))

    ta = threading.Thread(target=a)
    ta.start()
    assert in_persist.wait(10)
    tb = threading.Thread(target=b)
    tb.start()
    tb.join(0.2)
    assert tb.is_alive(), "overlapping claim must wait for the in-flight verdict"
    release.set()
    ta.join()
    tb.join()
    assert out["a"].accepted and out["b"].reason is Reason.REUSED_INDEX
    assert record.counter_s == 2
