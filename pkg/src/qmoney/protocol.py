"""Bank and holder sides of banknote minting and verification.

Block indices ``k`` are 0-based positions into the note.  Claims carry
conclusive outcomes only, as parallel arrays of indices, 1-based pulse pairs
and parity bits.
"""
from __future__ import annotations

import math
import threading
import uuid
from dataclasses import dataclass, field
from enum import Enum
from fractions import Fraction
from typing import Callable

import numpy as np

from qmoney import photonics
from qmoney.photonics import DeviceModel
from qmoney.security import SecurityParams


class Reason(str, Enum):
    OK = "OK"
    EFFICIENCY_SHORTFALL = "EFFICIENCY_SHORTFALL"
    ERROR_RATE_EXCEEDED = "ERROR_RATE_EXCEEDED"
    REUSED_INDEX = "REUSED_INDEX"
    ATTEMPTS_EXHAUSTED = "ATTEMPTS_EXHAUSTED"
    UNKNOWN_SERIAL = "UNKNOWN_SERIAL"


class HandleError(RuntimeError):
    """Misuse of a banknote handle (reselection, double measurement)."""


@dataclass
class BankRecord:
    serial: str
    secrets: np.ndarray
    register_r: np.ndarray
    counter_s: int
    cap_T: int
    params: SecurityParams
    mu: float
    lock: threading.RLock = field(default_factory=threading.RLock, repr=False, compare=False)

    @property
    def n(self) -> int:
        return int(self.secrets.shape[0])

    def snapshot(self) -> tuple:
        """Hashable view of the mutable state, for equality checks."""
        return (self.serial, self.secrets.tobytes(), self.register_r.tobytes(), self.counter_s)


class BanknoteHandle:
    """Holder's view of a note: blocks can be measured but never read.

    Indices go through two stages.  :func:`holder_select_subset` marks them in
    ``consumed``; :meth:`measure` then measures each selected index once.
    """

    def __init__(self, serial: str, blocks: np.ndarray, mu: float, consumed=None):
        self.serial = serial
        self.mu = mu
        self._blocks = np.asarray(blocks, dtype=np.uint8).copy()
        n = self._blocks.shape[0]
        self.consumed = (
            np.zeros(n, dtype=bool) if consumed is None else np.asarray(consumed, dtype=bool).copy()
        )
        self._measured = self.consumed.copy()

    def __len__(self) -> int:
        return self._blocks.shape[0]

    def measure(self, indices: np.ndarray, matchings: np.ndarray, dev: DeviceModel, rng):
        indices = np.asarray(indices, dtype=np.int64)
        if indices.size:
            if not self.consumed[indices].all():
                raise HandleError("index measured without being selected")
            if self._measured[indices].any():
                raise HandleError("index already measured")
            if np.unique(indices).size != indices.size:
                raise HandleError("duplicate index in measurement")
        self._measured[indices] = True
        return photonics.sample_batch(self._blocks[indices], matchings, self.mu, dev, rng)


@dataclass
class VerificationClaim:
    serial: str
    attempt_nonce: str
    indices: np.ndarray
    pairs: np.ndarray
    bits: np.ndarray
    l: int

    def __post_init__(self):
        self.indices = np.asarray(self.indices, dtype=np.int64).reshape(-1)
        self.pairs = np.asarray(self.pairs, dtype=np.uint8).reshape(-1, 2)
        self.bits = np.asarray(self.bits, dtype=np.uint8).reshape(-1)
        n = self.indices.size
        if self.pairs.shape[0] != n or self.bits.size != n:
            raise ValueError("claim arrays have mismatched lengths")
        if n > self.l:
            raise ValueError(f"claim has {n} conclusive outcomes but l={self.l}")
        if n and (self.bits.max() > 1):
            raise ValueError("claim bits must be 0 or 1")
        if np.unique(self.indices).size != n:
            raise ValueError("claim indices must be distinct")
        self.pair_ids = photonics.pair_ids_from_positions(self.pairs[:, 0], self.pairs[:, 1])

    @property
    def l_conclusive(self) -> int:
        return int(self.indices.size)

    @property
    def triplets(self) -> list[tuple[int, tuple[int, int], int]]:
        return [
            (int(k), (int(p[0]), int(p[1])), int(b))
            for k, p, b in zip(self.indices, self.pairs, self.bits)
        ]


@dataclass(frozen=True)
class Verdict:
    accepted: bool
    reason: Reason
    errors_observed: int = 0
    threshold_used: int = 0

    def __post_init__(self):
        if self.accepted != (self.reason is Reason.OK):
            raise ValueError("accepted must hold exactly when reason is OK")


@dataclass(frozen=True)
class TrialStats:
    l: int
    l_conclusive: int
    errors: int

    @property
    def error_rate(self) -> float:
        return self.errors / self.l_conclusive if self.l_conclusive else math.nan

    @property
    def conclusive_fraction(self) -> float:
        return self.l_conclusive / self.l if self.l else math.nan


def mint(
    n: int, mu: float, params: SecurityParams, cap_T: int, rng: np.random.Generator
) -> tuple[BankRecord, BanknoteHandle]:
    if n < 1:
        raise ValueError(f"a banknote needs at least one block, got N={n}")
    if mu <= 0:
        raise ValueError(f"mu must be > 0, got {mu}")
    secrets = rng.integers(0, 16, n, dtype=np.uint8)
    serial = uuid.uuid4().hex
    record = BankRecord(serial, secrets, np.zeros(n, dtype=bool), 0, cap_T, params, mu)
    return record, BanknoteHandle(serial, secrets, mu)


def holder_select_subset(handle: BanknoteHandle, l: int, rng: np.random.Generator) -> np.ndarray:
    if l < 0:
        raise ValueError(f"l must be >= 0, got {l}")
    free = np.flatnonzero(~handle.consumed)
    if free.size < l:
        raise HandleError(f"only {free.size} unconsumed states left, need {l}")
    if l == 0:
        return np.empty(0, dtype=np.int64)
    chosen = np.sort(rng.choice(free, size=l, replace=False))
    handle.consumed[chosen] = True
    return chosen


def holder_measure(
    handle: BanknoteHandle,
    indices: np.ndarray,
    dev: DeviceModel,
    rng: np.random.Generator,
    attempt_nonce: str | None = None,
) -> VerificationClaim:
    indices = np.asarray(indices, dtype=np.int64)
    matchings = rng.integers(0, 3, indices.size, dtype=np.uint8)
    conclusive, pair_ids, bits = handle.measure(indices, matchings, dev, rng)
    return VerificationClaim(
        serial=handle.serial,
        attempt_nonce=attempt_nonce or uuid.uuid4().hex,
        indices=indices[conclusive],
        pairs=photonics.pairs_as_tuples(pair_ids[conclusive]),
        bits=bits[conclusive],
        l=int(indices.size),
    )


def exact(x: float) -> Fraction:
    """Rational value of the shortest decimal that round-trips ``x``."""
    return Fraction(repr(float(x)))


def efficiency_ok(l: int, l_conclusive: int, params: SecurityParams) -> bool:
    threshold = exact(params.eta) - exact(params.eps)
    return l_conclusive >= math.ceil(threshold * l)


def holder_efficiency_check(claim: VerificationClaim, params: SecurityParams) -> bool:
    return efficiency_ok(claim.l, claim.l_conclusive, params)


def max_allowed_errors(l_conclusive: int, params: SecurityParams) -> int:
    """Largest error count strictly below ``l' (beta + delta)``."""
    bound = l_conclusive * (exact(params.beta) + exact(params.delta))
    return math.ceil(bound) - 1


def count_errors(secrets: np.ndarray, claim: VerificationClaim) -> int:
    if claim.l_conclusive == 0:
        return 0
    truth = photonics.parity_values(secrets[claim.indices], claim.pair_ids)
    return int(np.count_nonzero(truth != claim.bits))


@dataclass(frozen=True)
class Mutation:
    """State change a verification applies to its record."""

    serial: str
    attempt_nonce: str
    indices: np.ndarray
    verdict: Verdict
    new_s: int


def bank_verify(
    record: BankRecord | None,
    claim: VerificationClaim,
    persist: Callable[[Mutation], None] | None = None,
) -> Verdict:
    """Judge ``claim`` against ``record`` and apply the resulting mutation.

    The whole check-and-update runs under the record's lock.  ``persist`` is
    called with the pending mutation before it touches the record; if it
    raises, the record is left unchanged.
    """
    if record is None or record.serial != claim.serial:
        return Verdict(False, Reason.UNKNOWN_SERIAL)
    with record.lock:
        verdict, mark = _judge(record, claim)
        mutation = Mutation(record.serial, claim.attempt_nonce, mark, verdict, record.counter_s + 1)
        if persist is not None:
            persist(mutation)
        apply_mutation(record, mutation)
    return verdict


def _judge(record: BankRecord, claim: VerificationClaim) -> tuple[Verdict, np.ndarray]:
    none = np.empty(0, dtype=np.int64)
    if record.counter_s >= record.cap_T:
        return Verdict(False, Reason.ATTEMPTS_EXHAUSTED), none
    idx = claim.indices
    if idx.size and (idx.min() < 0 or idx.max() >= record.n):
        raise ValueError("claim index outside the banknote")
    if record.register_r[idx].any():
        return Verdict(False, Reason.REUSED_INDEX), none
    if not efficiency_ok(claim.l, claim.l_conclusive, record.params):
        return Verdict(False, Reason.EFFICIENCY_SHORTFALL), idx
    errors = count_errors(record.secrets, claim)
    allowed = max_allowed_errors(claim.l_conclusive, record.params)
    if errors <= allowed:
        return Verdict(True, Reason.OK, errors, allowed), idx
    return Verdict(False, Reason.ERROR_RATE_EXCEEDED, errors, allowed), idx


def apply_mutation(record: BankRecord, mutation: Mutation) -> None:
    record.register_r[mutation.indices] = True
    record.counter_s = max(record.counter_s, mutation.new_s)


def run_honest_verification(
    record: BankRecord,
    handle: BanknoteHandle,
    l: int,
    dev: DeviceModel,
    params: SecurityParams,
    rng: np.random.Generator,
) -> tuple[Verdict, TrialStats]:
    """Select, measure, check efficiency locally, then submit to the bank.

    A local efficiency abort is reported as an ``EFFICIENCY_SHORTFALL``
    verdict and never reaches the bank.
    """
    indices = holder_select_subset(handle, l, rng)
    claim = holder_measure(handle, indices, dev, rng)
    errors = count_errors(record.secrets, claim)
    stats = TrialStats(l, claim.l_conclusive, errors)
    if not holder_efficiency_check(claim, params):
        return Verdict(False, Reason.EFFICIENCY_SHORTFALL, errors), stats
    return bank_verify(record, claim), stats
