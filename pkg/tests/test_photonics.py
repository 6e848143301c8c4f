import itertools
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import binomial_sigma
from qmoney import photonics
from qmoney.photonics import (
    MATCHINGS,
    PAIRS,
    AbstractDevice,
    DetailedDevice,
    PulseBlock,
    calibrate_detailed,
    pair_to_interferometer,
    parity,
    sample_outcome_abstract,
    sample_outcome_detailed,
)

ALL_PAIRS = list(itertools.combinations(range(1, 5), 2))
ALL_STRINGS = ["".join(bits) for bits in itertools.product("01", repeat=4)]


def brute_parity(bits: str, pair):
    i, j = pair
    return int(bits[i - 1] != bits[j - 1])


def test_matchings_cover_all_pairs_once():
    seen = [p for m in MATCHINGS for p in m.pairs]
    assert sorted(seen) == ALL_PAIRS
    for m in MATCHINGS:
        assert sorted(x for p in m.pairs for x in p) == [1, 2, 3, 4]
    assert sorted(PAIRS) == ALL_PAIRS


def test_parity_examples():
    zero = PulseBlock.from_string("0000")
    assert all(parity(zero, p) == 0 for p in ALL_PAIRS)
    b = PulseBlock.from_string("0110")
    assert parity(b, (1, 4)) == 0
    assert parity(b, (1, 2)) == 1


def test_parity_exhaustive_table():
    for bits in ALL_STRINGS:
        block = PulseBlock.from_string(bits)
        for pair in ALL_PAIRS:
            assert parity(block, pair) == brute_parity(bits, pair)


def test_vectorised_parity_matches_table():
    values = np.repeat(np.arange(16, dtype=np.uint8), 6)
    pair_ids = np.tile(np.arange(6), 16)
    got = photonics.parity_values(values, pair_ids)
    for v, pid, g in zip(values, pair_ids, got):
        assert g == brute_parity(ALL_STRINGS[v], PAIRS[pid])


@pytest.mark.parametrize("pair", [(0, 1), (2, 2), (3, 5), (4, 1)])
def test_parity_rejects_bad_pair(pair):
    with pytest.raises(ValueError):
        parity(PulseBlock.from_string("0101"), pair)


@given(value=st.integers(0, 15), pid=st.integers(0, 5))
def test_parity_invariant_under_complement(value, pid):
    pair = PAIRS[pid]
    assert parity(PulseBlock.from_value(value), pair) == parity(PulseBlock.from_value(15 - value), pair)


def test_block_encoding_round_trip():
    for v, bits in enumerate(ALL_STRINGS):
        block = PulseBlock.from_string(bits)
        assert block.value == v
        assert PulseBlock.from_value(v) == block
    assert PulseBlock.from_string("0110").amplitude_signs() == (1, -1, -1, 1)
    with pytest.raises(ValueError):
        PulseBlock((0, 1, 2, 0))
    with pytest.raises(ValueError):
        PulseBlock((0, 1, 1, 0), mu=0)


@pytest.mark.parametrize(
    "pair,delay", [((1, 2), 2), ((2, 3), 2), ((3, 4), 2), ((1, 3), 4), ((2, 4), 4), ((1, 4), 6)]
)
def test_pair_to_interferometer(pair, delay):
    assert pair_to_interferometer(pair) == delay


def test_abstract_noiseless(rng):
    dev = AbstractDevice(eta_c=1.0, e_flip=0.0)
    block = PulseBlock.from_string("0000")
    for _ in range(50):
        out = sample_outcome_abstract(block, MATCHINGS[0], dev, rng)
        assert out.conclusive and out.bit == 0 and out.pair in {(1, 2), (3, 4)}


def test_abstract_dead_device(rng):
    dev = AbstractDevice(eta_c=0.0, e_flip=0.5)
    for m in MATCHINGS:
        out = sample_outcome_abstract(PulseBlock.from_value(5), m, dev, rng)
        assert not out.conclusive and out.pair is None and out.bit is None


@given(value=st.integers(0, 15), m=st.integers(0, 2), seed=st.integers(0, 2**32 - 1))
def test_conclusive_pairs_belong_to_matching(value, m, seed):
    rng = np.random.default_rng(seed)
    block = PulseBlock.from_value(value)
    for dev in (AbstractDevice(eta_c=1.0, e_flip=0.0), DetailedDevice(eta_det=1.0, visibility=1.0, p_dark=0.5)):
        out = photonics.sample_outcome(block, MATCHINGS[m], dev, rng)
        if out.conclusive:
            assert out.pair in MATCHINGS[m].pairs
        if isinstance(dev, AbstractDevice):
            assert out.bit == parity(block, out.pair)


def test_abstract_statistics_match_configuration():
    n = 1_000_000
    dev = AbstractDevice(eta_c=0.0336, e_flip=0.033)
    rng = np.random.default_rng(7)
    values = rng.integers(0, 16, n, dtype=np.uint8)
    matchings = rng.integers(0, 3, n, dtype=np.uint8)
    conclusive, pair_ids, bits = photonics.sample_abstract_batch(values, matchings, dev, rng)
    eta_hat = conclusive.mean()
    assert abs(eta_hat - 0.0336) <= 3 * binomial_sigma(0.0336, n)
    wrong = photonics.parity_values(values[conclusive], pair_ids[conclusive]) != bits[conclusive]
    assert abs(wrong.mean() - 0.033) <= 3 * binomial_sigma(0.033, int(conclusive.sum()))
    np.testing.assert_array_equal(pair_ids // 2, matchings)


def test_detailed_ideal_limit(rng):
    dev = DetailedDevice(eta_det=1.0, p_dark=0.0, visibility=1.0)
    for v in range(16):
        block = PulseBlock.from_value(v, mu=50.0)
        for m in MATCHINGS:
            out = sample_outcome_detailed(block, m, dev, rng)
            assert out.conclusive and out.bit == parity(block, out.pair)


def test_detailed_dead_detector(rng):
    dev = DetailedDevice(eta_det=0.0, p_dark=0.0)
    for v in range(16):
        assert not sample_outcome_detailed(PulseBlock.from_value(v), MATCHINGS[v % 3], dev, rng).conclusive
    eta, beta = calibrate_detailed(dev)
    assert eta == 0 and math.isnan(beta)


def test_calibrate_without_error_mechanism():
    eta, beta = calibrate_detailed(DetailedDevice(p_dark=0.0, visibility=1.0))
    assert beta == 0.0
    assert 0 < eta < 1


def _calibration_oracle(dev, mu):
    """Closed form: per pair P(candidate) and P(wrong and candidate)."""
    pr, pw = dev.port_click_probs(mu)
    cand = 1 - (1 - pr) * (1 - pw)
    err = pw * (1 - pr) + 0.5 * pr * pw
    eta = 1 - (1 - cand) ** 2
    # one candidate: its error; two candidates: average error, same by symmetry
    wrong = 2 * err * (1 - cand) + cand * cand * (err / cand)
    return eta, wrong / eta


@given(
    eta_det=st.floats(0.01, 1.0),
    p_dark=st.floats(0.0, 0.2),
    visibility=st.floats(0.0, 1.0),
    mu=st.floats(0.01, 3.0),
)
def test_calibration_matches_closed_form(eta_det, p_dark, visibility, mu):
    dev = DetailedDevice(eta_det=eta_det, p_dark=p_dark, visibility=visibility)
    eta, beta = calibrate_detailed(dev, mu)
    eta_o, beta_o = _calibration_oracle(dev, mu)
    assert eta == pytest.approx(eta_o, rel=1e-12)
    assert beta == pytest.approx(beta_o, rel=1e-9)


def test_default_detailed_device_reproduces_operating_point():
    eta, beta = calibrate_detailed(DetailedDevice())
    assert eta == pytest.approx(0.0336, abs=1e-4)
    assert beta == pytest.approx(0.033, abs=1e-4)


@pytest.mark.parametrize(
    "dev",
    [
        DetailedDevice(),
        DetailedDevice(eta_det=0.7, p_dark=1e-3, visibility=0.9),
        DetailedDevice(eta_det=0.3, p_dark=0.05, visibility=0.6, split_loss=0.5),
    ],
)
def test_detailed_sampler_agrees_with_enumeration(dev):
    n = 1_000_000
    rng = np.random.default_rng(99)
    values = rng.integers(0, 16, n, dtype=np.uint8)
    matchings = rng.integers(0, 3, n, dtype=np.uint8)
    conclusive, pair_ids, bits = photonics.sample_detailed_batch(values, matchings, 0.25, dev, rng)
    eta, beta = calibrate_detailed(dev, 0.25)
    n_conc = int(conclusive.sum())
    assert abs(n_conc / n - eta) <= 3 * binomial_sigma(eta, n)
    wrong = photonics.parity_values(values[conclusive], pair_ids[conclusive]) != bits[conclusive]
    assert abs(wrong.mean() - beta) <= 3 * binomial_sigma(beta, n_conc)


def test_device_validation():
    with pytest.raises(ValueError):
        AbstractDevice(eta_c=1.5)
    with pytest.raises(ValueError):
        DetailedDevice(visibility=-0.1)
    with pytest.raises(TypeError):
        sample_outcome_abstract(PulseBlock.from_value(0), MATCHINGS[0], DetailedDevice(), np.random.default_rng())
