"""Threaded TCP bank daemon speaking newline-delimited JSON."""
from __future__ import annotations

import json
import logging
import socketserver
import threading
from typing import Any

from qmoney.service import wire
from qmoney.service.ledger import Bank, banknote_to_json

logger = logging.getLogger(__name__)

MAX_LINE = 1 << 30


def handle_message(bank: Bank, msg: dict[str, Any]) -> dict[str, Any]:
    """Answer one decoded request.  Failures come back as ERROR messages."""
    rid = msg.get("id")
    kind = msg["type"]
    try:
        if kind == "MINT_REQ":
            params = bank.config.params
            if "params" in msg:
                params = wire.params_from_wire(msg["params"])
            mu = wire.parse_prob(msg["mu"]) if "mu" in msg else None
            n = msg["n"]
            if not isinstance(n, int) or isinstance(n, bool):
                raise wire.ProtocolError(f"n must be an integer, got {n!r}")
            record, handle = bank.mint(n, mu=mu, params=params, cap_T=msg.get("cap_T"))
            return {
                "type": "MINT_RESP",
                "id": rid,
                "serial": record.serial,
                "n": record.n,
                "banknote": banknote_to_json(handle),
            }
        if kind == "VERIFY_REQ":
            claim = wire.claim_from_wire(msg["claim"])
            verdict = bank.verify(claim)
            return {"type": "VERIFY_RESP", "id": rid, "serial": claim.serial, **wire.verdict_to_wire(verdict)}
        if kind == "THRESHOLDS_REQ":
            record = bank.get(msg["serial"])
            if record is None:
                return wire.error_message(rid, "UNKNOWN_SERIAL")
            p = record.params
            return {
                "type": "THRESHOLDS_RESP",
                "id": rid,
                "serial": record.serial,
                "efficiency_threshold": wire.fmt_prob(p.efficiency_threshold),
                "error_threshold": wire.fmt_prob(p.error_threshold),
                "params": wire.params_to_wire(p),
                "mu": wire.fmt_prob(record.mu),
            }
        return wire.error_message(rid, f"unexpected request type {kind}")
    except (ValueError, TypeError) as exc:
        return wire.error_message(rid, f"bad request: {exc}")
    except OSError as exc:
        logger.exception("persistence failure")
        return wire.error_message(rid, f"persistence failure: {exc}")


def handle_line(bank: Bank, line: bytes) -> bytes:
    try:
        msg = wire.decode_message(line)
    except wire.ProtocolError as exc:
        rid = None
        try:
            obj = json.loads(line)
            if isinstance(obj, dict):
                rid = obj.get("id")
        except ValueError:
            pass
        return wire.encode_message(wire.error_message(rid, str(exc)))
    return wire.encode_message(handle_message(bank, msg))


class _Handler(socketserver.StreamRequestHandler):
    def handle(self):
        bank: Bank = self.server.bank
        while True:
            line = self.rfile.readline(MAX_LINE)
            if not line:
                return
            if not line.strip():
                continue
            self.wfile.write(handle_line(bank, line))
            self.wfile.flush()


class BankServer(socketserver.ThreadingTCPServer):
    daemon_threads = True
    allow_reuse_address = True

    def __init__(self, address: tuple[str, int], bank: Bank):
        super().__init__(address, _Handler)
        self.bank = bank

    @property
    def endpoint(self) -> tuple[str, int]:
        host, port = self.server_address[:2]
        return host, port

    def start_background(self) -> threading.Thread:
        thread = threading.Thread(target=self.serve_forever, daemon=True)
        thread.start()
        return thread


def serve(bank: Bank, host: str = "127.0.0.1", port: int = 7341) -> None:
    """Run the bank until interrupted."""
    with BankServer((host, port), bank) as server:
        logger.info("bank listening on %s:%d", *server.endpoint)
        try:
            server.serve_forever()
        except KeyboardInterrupt:
            pass
        finally:
            bank.close()
