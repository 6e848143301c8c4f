"""Hidden-matching measurements on coherent-state pulse blocks.

A block encodes four secret bits as the phases of four weak coherent pulses.
Blocks are stored as integers 0..15 with ``x1`` in the most significant bit,
so ``"0110"`` is 6.  Pulse positions are 1-based throughout, matching the
usual ``(i, j)`` pair notation.

Two device models are provided.  :class:`AbstractDevice` reproduces exactly
the two statistics the security analysis consumes; :class:`DetailedDevice`
derives them from click probabilities of an interferometric receiver, and
:func:`calibrate_detailed` computes those statistics in closed form.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import ClassVar, Union

import numpy as np

DEFAULT_MU = 0.25

# pair id = 2 * matching index + slot
PAIRS: tuple[tuple[int, int], ...] = ((1, 2), (3, 4), (1, 3), (2, 4), (1, 4), (2, 3))
PAIR_ID = {p: n for n, p in enumerate(PAIRS)}
_PAIR_I = np.array([p[0] for p in PAIRS], dtype=np.uint8)
_PAIR_J = np.array([p[1] for p in PAIRS], dtype=np.uint8)

INTERFEROMETER_DELAYS_NS = {1: 2, 2: 4, 3: 6}


@dataclass(frozen=True)
class PulseBlock:
    bits: tuple[int, int, int, int]
    mu: float = DEFAULT_MU

    def __post_init__(self):
        if len(self.bits) != 4 or any(b not in (0, 1) for b in self.bits):
            raise ValueError(f"bits must be four values in {{0, 1}}, got {self.bits}")
        if self.mu <= 0:
            raise ValueError(f"mu must be > 0, got {self.mu}")

    @classmethod
    def from_value(cls, value: int, mu: float = DEFAULT_MU) -> PulseBlock:
        if not 0 <= value < 16:
            raise ValueError(f"block value must be in [0, 16), got {value}")
        return cls(tuple((value >> (3 - n)) & 1 for n in range(4)), mu)

    @classmethod
    def from_string(cls, bits: str, mu: float = DEFAULT_MU) -> PulseBlock:
        return cls(tuple(int(c) for c in bits), mu)

    @property
    def value(self) -> int:
        return (self.bits[0] << 3) | (self.bits[1] << 2) | (self.bits[2] << 1) | self.bits[3]

    def amplitude_signs(self) -> tuple[int, ...]:
        """Sign of each pulse amplitude, ``(-1) ** x_n``."""
        return tuple(1 - 2 * b for b in self.bits)


@dataclass(frozen=True)
class Matching:
    id: str
    pairs: tuple[tuple[int, int], tuple[int, int]]

    @property
    def index(self) -> int:
        return int(self.id[1:]) - 1


M1 = Matching("M1", ((1, 2), (3, 4)))
M2 = Matching("M2", ((1, 3), (2, 4)))
M3 = Matching("M3", ((1, 4), (2, 3)))
MATCHINGS = (M1, M2, M3)


@dataclass(frozen=True)
class MeasurementOutcome:
    conclusive: bool
    pair: tuple[int, int] | None = None
    bit: int | None = None

    @classmethod
    def inconclusive(cls) -> MeasurementOutcome:
        return cls(False)


@dataclass(frozen=True)
class AbstractDevice:
    """Conclusive with probability ``eta_c``; conclusive bits flipped w.p. ``e_flip``."""

    variant: ClassVar[str] = "abstract"
    eta_c: float = 0.0336
    e_flip: float = 0.033

    def __post_init__(self):
        for name in ("eta_c", "e_flip"):
            _check_prob(name, getattr(self, name))


@dataclass(frozen=True)
class DetailedDevice:
    """Two-port interferometer per pair with imperfect visibility and dark counts.

    ``split_loss`` is the fraction of each pulse routed to the interferometer
    of the chosen matching; further splitting inside the receiver is folded
    into ``eta_det``.
    """

    variant: ClassVar[str] = "detailed"
    eta_det: float = 0.1024
    p_dark: float = 1e-5
    visibility: float = 0.9351
    split_loss: float = 1 / 3

    def __post_init__(self):
        for name in ("eta_det", "p_dark", "visibility", "split_loss"):
            _check_prob(name, getattr(self, name))

    def port_click_probs(self, mu: float) -> tuple[float, float]:
        """Click probabilities of the (correct, wrong) output port of one pair."""
        mu_eff = 2 * mu * self.split_loss
        mu_right = mu_eff * (1 + self.visibility) / 2
        mu_wrong = mu_eff * (1 - self.visibility) / 2
        keep = 1 - self.p_dark
        return (
            1 - keep * math.exp(-self.eta_det * mu_right),
            1 - keep * math.exp(-self.eta_det * mu_wrong),
        )


DeviceModel = Union[AbstractDevice, DetailedDevice]


def _check_prob(name: str, value: float) -> None:
    if not 0.0 <= value <= 1.0:
        raise ValueError(f"{name} must be in [0, 1], got {value}")


def _check_pair(pair: tuple[int, int]) -> None:
    i, j = pair
    if not 1 <= i < j <= 4:
        raise ValueError(f"pair must satisfy 1 <= i < j <= 4, got {pair}")


def parity(block: PulseBlock, pair: tuple[int, int]) -> int:
    _check_pair(pair)
    i, j = pair
    return block.bits[i - 1] ^ block.bits[j - 1]


def parity_values(values: np.ndarray, pair_ids: np.ndarray) -> np.ndarray:
    """Vectorised parity for packed block values and pair ids."""
    values = np.asarray(values, dtype=np.uint8)
    i = _PAIR_I[pair_ids]
    j = _PAIR_J[pair_ids]
    return ((values >> (4 - i)) ^ (values >> (4 - j))) & 1


def pair_to_interferometer(pair: tuple[int, int]) -> int:
    """Delay in ns of the interferometer that interferes ``pair``."""
    _check_pair(pair)
    return INTERFEROMETER_DELAYS_NS[pair[1] - pair[0]]


def pairs_as_tuples(pair_ids: np.ndarray) -> np.ndarray:
    """``(n, 2)`` array of 1-based positions for an array of pair ids."""
    return np.stack([_PAIR_I[pair_ids], _PAIR_J[pair_ids]], axis=-1)


def pair_ids_from_positions(i: np.ndarray, j: np.ndarray) -> np.ndarray:
    """Inverse of :func:`pairs_as_tuples`; raises on positions that form no pair."""
    lookup = np.full((5, 5), -1, dtype=np.int8)
    for n, (a, b) in enumerate(PAIRS):
        lookup[a, b] = n
    i = np.asarray(i, dtype=np.int64)
    j = np.asarray(j, dtype=np.int64)
    if i.size and (i.min() < 0 or j.min() < 0 or i.max() > 4 or j.max() > 4):
        raise ValueError("pair positions out of range")
    ids = lookup[i, j]
    if ids.size and ids.min() < 0:
        raise ValueError("invalid pair in claim")
    return ids.astype(np.uint8)


# -- batched sampling -------------------------------------------------------
#
# The batch samplers take packed block values and per-state matching indices
# and return (conclusive mask, pair ids, bits) where pair ids and bits are
# meaningful only where the mask is set.


def sample_abstract_batch(values, matchings, dev: AbstractDevice, rng: np.random.Generator):
    values = np.asarray(values, dtype=np.uint8)
    matchings = np.asarray(matchings, dtype=np.uint8)
    n = values.shape[0]
    conclusive = rng.random(n) < dev.eta_c
    pair_ids = 2 * matchings + rng.integers(0, 2, n, dtype=np.uint8)
    flips = (rng.random(n) < dev.e_flip).astype(np.uint8)
    bits = parity_values(values, pair_ids) ^ flips
    return conclusive, pair_ids, bits


def sample_detailed_batch(
    values, matchings, mu: float, dev: DetailedDevice, rng: np.random.Generator
):
    values = np.asarray(values, dtype=np.uint8)
    matchings = np.asarray(matchings, dtype=np.uint8)
    n = values.shape[0]
    p_right, p_wrong = dev.port_click_probs(mu)
    u = rng.random((n, 2, 2))
    right = u[:, :, 0] < p_right
    wrong = u[:, :, 1] < p_wrong
    has_candidate = right | wrong
    # single click: error iff the wrong port fired; double click: fair coin
    coin = rng.random((n, 2)) < 0.5
    err = np.where(right & wrong, coin, wrong)

    both = has_candidate[:, 0] & has_candidate[:, 1]
    pick_second = np.where(both, rng.random(n) < 0.5, has_candidate[:, 1])
    slot = pick_second.astype(np.uint8)
    conclusive = has_candidate[:, 0] | has_candidate[:, 1]
    chosen_err = np.where(pick_second, err[:, 1], err[:, 0]).astype(np.uint8)
    pair_ids = 2 * matchings + slot
    bits = parity_values(values, pair_ids) ^ chosen_err
    return conclusive, pair_ids, bits


def sample_batch(values, matchings, mu: float, dev: DeviceModel, rng: np.random.Generator):
    if isinstance(dev, AbstractDevice):
        return sample_abstract_batch(values, matchings, dev, rng)
    if isinstance(dev, DetailedDevice):
        return sample_detailed_batch(values, matchings, mu, dev, rng)
    raise TypeError(f"unknown device model {dev!r}")


def _one(block: PulseBlock, m: Matching, result) -> MeasurementOutcome:
    conclusive, pair_ids, bits = result
    if not conclusive[0]:
        return MeasurementOutcome.inconclusive()
    pair = PAIRS[int(pair_ids[0])]
    assert pair in m.pairs
    return MeasurementOutcome(True, pair, int(bits[0]))


def sample_outcome_abstract(
    block: PulseBlock, m: Matching, dev: AbstractDevice, rng: np.random.Generator
) -> MeasurementOutcome:
    if not isinstance(dev, AbstractDevice):
        raise TypeError("sample_outcome_abstract needs an AbstractDevice")
    result = sample_abstract_batch(np.array([block.value]), np.array([m.index]), dev, rng)
    return _one(block, m, result)


def sample_outcome_detailed(
    block: PulseBlock, m: Matching, dev: DetailedDevice, rng: np.random.Generator
) -> MeasurementOutcome:
    if not isinstance(dev, DetailedDevice):
        raise TypeError("sample_outcome_detailed needs a DetailedDevice")
    result = sample_detailed_batch(np.array([block.value]), np.array([m.index]), block.mu, dev, rng)
    return _one(block, m, result)


def sample_outcome(
    block: PulseBlock, m: Matching, dev: DeviceModel, rng: np.random.Generator
) -> MeasurementOutcome:
    if isinstance(dev, AbstractDevice):
        return sample_outcome_abstract(block, m, dev, rng)
    return sample_outcome_detailed(block, m, dev, rng)


def calibrate_detailed(dev: DetailedDevice, mu: float = DEFAULT_MU) -> tuple[float, float]:
    """Exact ``(eta, beta)`` of a detailed device by enumerating all 16 click patterns.

    Parities only decide which port is the correct one, so a single
    representative block covers every secret.  ``beta`` is NaN when the
    device never produces a conclusive outcome.
    """
    if not isinstance(dev, DetailedDevice):
        raise TypeError("calibrate_detailed needs a DetailedDevice")
    p_right, p_wrong = dev.port_click_probs(mu)
    eta = 0.0
    wrong_mass = 0.0
    for r0, w0, r1, w1 in itertools.product((False, True), repeat=4):
        prob = 1.0
        for clicked, p in ((r0, p_right), (w0, p_wrong), (r1, p_right), (w1, p_wrong)):
            prob *= p if clicked else 1 - p
        errs = [_pair_error(r, w) for r, w in ((r0, w0), (r1, w1))]
        errs = [e for e in errs if e is not None]
        if not errs:
            continue
        eta += prob
        wrong_mass += prob * sum(errs) / len(errs)
    beta = wrong_mass / eta if eta > 0 else math.nan
    return eta, beta


def _pair_error(right: bool, wrong: bool) -> float | None:
    if right and wrong:
        return 0.5
    if right:
        return 0.0
    if wrong:
        return 1.0
    return None
