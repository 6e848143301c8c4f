"""Append-only journal of mints and verifications, and the bank built on it.

Each journal line is one JSON object.  A ``mint`` line carries the complete
record; a ``verify`` line carries the indices it consumed and the counter
value it produced.  Replaying the file in order rebuilds every record, and
verify lines are keyed by ``(serial, attempt_nonce)`` so that duplicated
lines apply once.
"""
from __future__ import annotations

import json
import logging
import os
import threading
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path
from typing import Any

import numpy as np

from qmoney import protocol
from qmoney.protocol import BankRecord, BanknoteHandle, Mutation, VerificationClaim, Verdict
from qmoney.security import SecurityParams
from qmoney.service import wire

logger = logging.getLogger(__name__)


class LedgerCorruptError(RuntimeError):
    """A journal line other than the last one cannot be parsed."""


# -- entries ----------------------------------------------------------------


def record_to_entry(record: BankRecord, created_at: str | None = None) -> dict[str, Any]:
    return {
        "format_version": wire.FORMAT_VERSION,
        "op": "mint",
        "serial": record.serial,
        "n": record.n,
        "secrets": wire.pack_blocks(record.secrets),
        "register_r": wire.pack_bitmap(record.register_r),
        "counter_s": record.counter_s,
        "cap_T": record.cap_T,
        "params": wire.params_to_wire(record.params),
        "mu": wire.fmt_prob(record.mu),
        "created_at": created_at or datetime.now(timezone.utc).isoformat(),
    }


def record_from_entry(entry: dict[str, Any]) -> BankRecord:
    _check_version(entry)
    n = int(entry["n"])
    return BankRecord(
        serial=entry["serial"],
        secrets=wire.unpack_blocks(entry["secrets"], n),
        register_r=wire.unpack_bitmap(entry["register_r"], n),
        counter_s=int(entry["counter_s"]),
        cap_T=int(entry["cap_T"]),
        params=wire.params_from_wire(entry["params"]),
        mu=wire.parse_prob(entry["mu"]),
    )


def mutation_to_entry(m: Mutation) -> dict[str, Any]:
    return {
        "format_version": wire.FORMAT_VERSION,
        "op": "verify",
        "serial": m.serial,
        "attempt_nonce": m.attempt_nonce,
        "indices": np.asarray(m.indices, dtype=np.int64).tolist(),
        "verdict": wire.verdict_to_wire(m.verdict),
        "new_s": m.new_s,
    }


def mutation_from_entry(entry: dict[str, Any]) -> Mutation:
    _check_version(entry)
    return Mutation(
        serial=entry["serial"],
        attempt_nonce=entry["attempt_nonce"],
        indices=np.asarray(entry["indices"], dtype=np.int64),
        verdict=wire.verdict_from_wire(entry["verdict"]),
        new_s=int(entry["new_s"]),
    )


def _check_version(entry: dict[str, Any]) -> None:
    version = entry.get("format_version")
    if version != wire.FORMAT_VERSION:
        raise LedgerCorruptError(f"unsupported format_version {version!r}")


# -- banknote file ----------------------------------------------------------


def banknote_to_json(handle: BanknoteHandle) -> dict[str, Any]:
    return {
        "format_version": wire.FORMAT_VERSION,
        "serial": handle.serial,
        "n": len(handle),
        "mu": wire.fmt_prob(handle.mu),
        "blocks": wire.pack_blocks(handle._blocks),
        "consumed": wire.pack_bitmap(handle.consumed),
    }


def banknote_from_json(obj: dict[str, Any]) -> BanknoteHandle:
    _check_version(obj)
    n = int(obj["n"])
    consumed = obj.get("consumed")
    return BanknoteHandle(
        obj["serial"],
        wire.unpack_blocks(obj["blocks"], n),
        wire.parse_prob(obj["mu"]),
        consumed=None if consumed is None else wire.unpack_bitmap(consumed, n),
    )


def save_banknote(handle: BanknoteHandle, path: str | Path) -> None:
    path = Path(path)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_text(json.dumps(banknote_to_json(handle)) + "\n")
    os.replace(tmp, path)


def load_banknote(path: str | Path) -> BanknoteHandle:
    return banknote_from_json(json.loads(Path(path).read_text()))


# -- journal ----------------------------------------------------------------


class Journal:
    def __init__(self, path: str | Path, fsync: bool = True):
        self.path = Path(path)
        self.fsync = fsync
        self._lock = threading.Lock()
        self._fh = None

    def read(self) -> list[dict[str, Any]]:
        """Parse every complete line, truncating a torn or garbled last line."""
        if not self.path.exists():
            return []
        data = self.path.read_bytes()
        entries: list[dict[str, Any]] = []
        offset = 0
        lines = data.split(b"\n")
        for n, raw in enumerate(lines):
            last = n == len(lines) - 1
            if last and raw == b"":
                break
            try:
                if last:
                    raise ValueError("line has no terminating newline")
                entries.append(json.loads(raw))
            except ValueError as exc:
                if last or all(rest == b"" for rest in lines[n + 1:]):
                    logger.warning(
                        "truncating torn journal tail at byte %d of %s: %s", offset, self.path, exc
                    )
                    with open(self.path, "r+b") as fh:
                        fh.truncate(offset)
                    break
                raise LedgerCorruptError(f"{self.path}: bad journal line {n + 1}") from exc
            offset += len(raw) + 1
        return entries

    def append(self, entry: dict[str, Any]) -> None:
        line = (json.dumps(entry, separators=(",", ":")) + "\n").encode("utf-8")
        with self._lock:
            if self._fh is None:
                self._fh = open(self.path, "ab")
            fh = self._fh
            start = fh.tell()
            try:
                fh.write(line)
                fh.flush()
                if self.fsync:
                    os.fsync(fh.fileno())
            except BaseException:
                fh.truncate(start)
                raise

    def close(self) -> None:
        with self._lock:
            if self._fh is not None:
                self._fh.close()
                self._fh = None


# -- bank -------------------------------------------------------------------


@dataclass(frozen=True)
class BankConfig:
    params: SecurityParams
    cap_T: int = 10
    max_n: int = 10**8


class Bank:
    """All records of one bank, backed by a journal.

    Requests on distinct serials run concurrently; requests on one serial are
    serialized by that record's lock, which also covers the journal write so
    that the journal order per serial matches the order of verdicts.
    """

    def __init__(self, journal: Journal, config: BankConfig, rng: np.random.Generator | None = None):
        self.journal = journal
        self.config = config
        self.rng = rng if rng is not None else np.random.default_rng()
        self.records: dict[str, BankRecord] = {}
        self.verdicts: dict[tuple[str, str], Verdict] = {}
        self._registry_lock = threading.Lock()
        self.recover()

    @classmethod
    def open(cls, path: str | Path, config: BankConfig, rng=None, fsync: bool = True) -> Bank:
        return cls(Journal(path, fsync=fsync), config, rng)

    def recover(self) -> None:
        records: dict[str, BankRecord] = {}
        verdicts: dict[tuple[str, str], Verdict] = {}
        for entry in self.journal.read():
            op = entry.get("op")
            if op == "mint":
                record = record_from_entry(entry)
                records.setdefault(record.serial, record)
            elif op == "verify":
                m = mutation_from_entry(entry)
                key = (m.serial, m.attempt_nonce)
                if key in verdicts:
                    continue
                if m.serial not in records:
                    raise LedgerCorruptError(f"verify line for unknown serial {m.serial}")
                protocol.apply_mutation(records[m.serial], m)
                verdicts[key] = m.verdict
            else:
                raise LedgerCorruptError(f"unknown journal op {op!r}")
        self.records = records
        self.verdicts = verdicts
        logger.info("recovered %d records, %d verifications", len(records), len(verdicts))

    def get(self, serial: str) -> BankRecord | None:
        with self._registry_lock:
            return self.records.get(serial)

    def mint(
        self,
        n: int,
        mu: float | None = None,
        params: SecurityParams | None = None,
        cap_T: int | None = None,
    ) -> tuple[BankRecord, BanknoteHandle]:
        if n > self.config.max_n:
            raise ValueError(f"N={n} exceeds the bank limit {self.config.max_n}")
        params = params or self.config.params
        mu = params.mu if mu is None else mu
        cap_T = self.config.cap_T if cap_T is None else cap_T
        with self._registry_lock:
            record, handle = protocol.mint(n, mu, params, cap_T, self.rng)
        self.journal.append(record_to_entry(record))
        with self._registry_lock:
            self.records[record.serial] = record
        return record, handle

    def verify(self, claim: VerificationClaim) -> Verdict:
        record = self.get(claim.serial)
        if record is None:
            return protocol.bank_verify(None, claim)
        key = (claim.serial, claim.attempt_nonce)
        with record.lock:
            if key in self.verdicts:
                return self.verdicts[key]

            def persist(m: Mutation) -> None:
                self.journal.append(mutation_to_entry(m))

            verdict = protocol.bank_verify(record, claim, persist=persist)
            self.verdicts[key] = verdict
        return verdict

    def snapshot(self) -> dict[str, tuple]:
        with self._registry_lock:
            return {serial: r.snapshot() for serial, r in self.records.items()}

    def close(self) -> None:
        self.journal.close()
