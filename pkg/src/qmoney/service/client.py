"""Holder-side client: talks to the bank and runs local measurements."""
from __future__ import annotations

import itertools
import socket
from pathlib import Path
from typing import Any

import numpy as np

from qmoney import protocol
from qmoney.photonics import DeviceModel
from qmoney.protocol import Reason, TrialStats, Verdict
from qmoney.security import SecurityParams
from qmoney.service import wire
from qmoney.service.ledger import banknote_from_json, load_banknote, save_banknote


class BankError(RuntimeError):
    """The bank answered with an ERROR message."""


class BankClient:
    def __init__(self, host: str, port: int, timeout: float | None = 30.0):
        self._sock = socket.create_connection((host, port), timeout=timeout)
        self._rfile = self._sock.makefile("rb")
        self._ids = itertools.count(1)

    def __enter__(self) -> BankClient:
        return self

    def __exit__(self, *exc) -> None:
        self.close()

    def close(self) -> None:
        self._rfile.close()
        self._sock.close()

    def request(self, msg: dict[str, Any]) -> dict[str, Any]:
        msg = {**msg, "id": next(self._ids)}
        self._sock.sendall(wire.encode_message(msg))
        line = self._rfile.readline()
        if not line:
            raise ConnectionError("bank closed the connection")
        reply = wire.decode_message(line)
        if reply.get("id") != msg["id"]:
            raise wire.ProtocolError(f"response id {reply.get('id')!r} != request id {msg['id']}")
        if reply["type"] == "ERROR":
            raise BankError(reply["reason"])
        return reply

    def mint(self, n: int, **extra) -> dict[str, Any]:
        return self._expect(self.request({"type": "MINT_REQ", "n": n, **extra}), "MINT_RESP")

    def thresholds(self, serial: str) -> dict[str, Any]:
        reply = self.request({"type": "THRESHOLDS_REQ", "serial": serial})
        return self._expect(reply, "THRESHOLDS_RESP")

    def verify(self, claim: protocol.VerificationClaim) -> Verdict:
        reply = self.request({"type": "VERIFY_REQ", "claim": wire.claim_to_wire(claim)})
        return wire.verdict_from_wire(self._expect(reply, "VERIFY_RESP"))

    @staticmethod
    def _expect(reply: dict[str, Any], kind: str) -> dict[str, Any]:
        if reply["type"] != kind:
            raise wire.ProtocolError(f"expected {kind}, got {reply['type']}")
        return reply


def client_mint(endpoint: tuple[str, int], n: int, path: str | Path, **extra) -> str:
    """Request a note of ``n`` blocks and write it to ``path``; returns the serial."""
    with BankClient(*endpoint) as client:
        reply = client.mint(n, **extra)
    save_banknote(banknote_from_json(reply["banknote"]), path)
    return reply["serial"]


def client_verify(
    endpoint: tuple[str, int],
    banknote_path: str | Path,
    l: int,
    dev: DeviceModel,
    rng: np.random.Generator,
) -> tuple[Verdict, TrialStats]:
    """Measure ``l`` fresh states of a note on disk and ask the bank to judge them.

    The note file is rewritten with the newly consumed indices before the
    claim is sent, so a crash never lets the same states be measured twice.
    ``TrialStats.errors`` is the bank-reported count, zero on a local abort.
    """
    handle = load_banknote(banknote_path)
    with BankClient(*endpoint) as client:
        try:
            thresholds = client.thresholds(handle.serial)
        except BankError as exc:
            if str(exc) == Reason.UNKNOWN_SERIAL.value:
                return Verdict(False, Reason.UNKNOWN_SERIAL), TrialStats(0, 0, 0)
            raise
        params: SecurityParams = wire.params_from_wire(thresholds["params"])
        indices = protocol.holder_select_subset(handle, l, rng)
        claim = protocol.holder_measure(handle, indices, dev, rng)
        save_banknote(handle, banknote_path)
        if not protocol.holder_efficiency_check(claim, params):
            verdict = Verdict(False, Reason.EFFICIENCY_SHORTFALL)
        else:
            verdict = client.verify(claim)
    return verdict, TrialStats(claim.l, claim.l_conclusive, verdict.errors_observed)
