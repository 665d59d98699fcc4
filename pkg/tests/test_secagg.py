import itertools
import logging

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fedver.params import ParamVector
from fedver.secagg import (
    FixedPointCodec,
    MaskedShare,
    SecureAggregationError,
    aggregate,
    encode,
    mask,
    net_mask,
    prg_stream,
    setup_pairwise_seeds,
)


def _layout(n):
    return (("w", (n,)),)


def _secure_mean(codec, vectors, round_seed=0):
    n = len(vectors)
    codec = codec.with_devices(n)
    seeds = setup_pairwise_seeds(range(n), round_seed)
    shares = [mask(codec, encode(codec, v), k, seeds) for k, v in enumerate(vectors)]
    return aggregate(codec, shares, _layout(vectors[0].size), list(range(n))).values


def test_codec_invariants():
    c = FixedPointCodec(1.0, 16, 5)
    assert c.step == 2.0 / (2**16 - 1)
    assert c.modulus == 2 ** (16 + 3)
    assert 5 * c.levels < c.modulus
    with pytest.raises(ValueError):
        FixedPointCodec(0.0, 16, 2)


def test_encode_zero_is_midpoint():
    c = FixedPointCodec(1.0, 16, 2)
    enc = encode(c, np.zeros(4))
    assert np.all(enc == 32768)
    assert np.all(np.abs(c.decode(enc)) <= c.step / 2)


def test_encode_endpoints():
    c = FixedPointCodec(1.0, 16, 2)
    assert encode(c, np.array([1.0]))[0] == 2**16 - 1
    assert encode(c, np.array([-1.0]))[0] == 0


def test_round_trip_error_bound():
    c = FixedPointCodec(1.0, 16, 2)
    x = np.random.default_rng(0).uniform(-1, 1, 1000)
    assert np.max(np.abs(c.decode(encode(c, x)) - x)) <= (2 / (2**16 - 1)) / 2


def test_encode_clips_and_warns(caplog):
    c = FixedPointCodec(1.0, 8, 2)
    with caplog.at_level(logging.WARNING):
        enc = encode(c, np.array([5.0, -5.0, 0.0]))
    assert list(enc[:2]) == [255, 0]
    assert "clipped" in caplog.text


def test_encode_rejects_non_finite():
    with pytest.raises(ValueError):
        encode(FixedPointCodec(), np.array([np.inf]))


def test_seed_symmetry_and_counts():
    assert len(setup_pairwise_seeds([0, 1], 3)) == 1
    s = setup_pairwise_seeds(range(5), 3)
    pairs = list(itertools.combinations(range(5), 2))
    assert len(s) == 10
    assert len({s.seed(u, v) for u, v in pairs}) == 10
    for u, v in pairs:
        assert s.seed(u, v) == s.seed(v, u)


def test_seeds_need_two_devices():
    with pytest.raises(SecureAggregationError):
        setup_pairwise_seeds([4], 0)


def test_two_device_cancellation():
    c = FixedPointCodec(1.0, 16, 2)
    rng = np.random.default_rng(1)
    seeds = setup_pairwise_seeds([0, 1], 77)
    x0, x1 = rng.integers(0, c.levels + 1, 50).astype(np.uint64), rng.integers(0, c.levels + 1, 50).astype(np.uint64)
    m0, m1 = mask(c, x0, 0, seeds), mask(c, x1, 1, seeds)
    total = (m0.masked_values + m1.masked_values) % np.uint64(c.modulus)
    assert np.array_equal(total, (x0 + x1) % np.uint64(c.modulus))


def test_masking_is_reproducible():
    c = FixedPointCodec(1.0, 16, 3)
    seeds = setup_pairwise_seeds([0, 1, 2], 5)
    x = encode(c, np.linspace(-1, 1, 9))
    assert mask(c, x, 1, seeds) == mask(c, x, 1, seeds)
    assert np.array_equal(prg_stream(123, 20, c.modulus), prg_stream(123, 20, c.modulus))


@pytest.mark.parametrize("n", [2, 3, 7])
def test_masks_sum_to_zero(n):
    c = FixedPointCodec(1.0, 16, n)
    seeds = setup_pairwise_seeds(range(n), 11)
    total = np.zeros(33, dtype=object)
    for k in range(n):
        total = total + net_mask(c, k, seeds, 33).astype(object)
    assert all(int(t) % c.modulus == 0 for t in total)


def test_mask_unknown_device():
    c = FixedPointCodec(1.0, 16, 2)
    with pytest.raises(SecureAggregationError):
        mask(c, encode(c, np.zeros(3)), 9, setup_pairwise_seeds([0, 1], 0))


def test_identical_inputs_average():
    c = FixedPointCodec(1.0, 16)
    v = np.random.default_rng(2).uniform(-1, 1, 20)
    out = _secure_mean(c, [v, v, v, v])
    assert np.max(np.abs(out - v)) <= c.step / 2


def test_three_random_vectors_against_plaintext():
    c = FixedPointCodec(1.0, 16)
    rng = np.random.default_rng(3)
    vs = [rng.uniform(-1, 1, 30) for _ in range(3)]
    out = _secure_mean(c, vs)
    assert np.max(np.abs(out - np.mean(vs, axis=0))) <= 3 * c.step / (2 * 3) + c.step / 2


def test_tampered_share_shifts_one_coordinate():
    c = FixedPointCodec(1.0, 16, 3)
    rng = np.random.default_rng(4)
    vs = [rng.uniform(-1, 1, 10) for _ in range(3)]
    seeds = setup_pairwise_seeds(range(3), 0)
    shares = [mask(c, encode(c, v), k, seeds) for k, v in enumerate(vs)]
    honest = aggregate(c, shares, _layout(10)).values
    bad_vals = np.array(shares[1].masked_values)
    bad_vals[4] = (bad_vals[4] + 1) % c.modulus
    shares[1] = MaskedShare(1, bad_vals, c.modulus)
    tampered = aggregate(c, shares, _layout(10)).values
    diff = tampered - honest
    assert diff[4] == pytest.approx(c.step / 3, rel=1e-9)
    assert np.all(np.delete(diff, 4) == 0)


def test_aggregate_errors():
    c = FixedPointCodec(1.0, 16, 3)
    seeds = setup_pairwise_seeds(range(3), 0)
    shares = [mask(c, encode(c, np.zeros(4)), k, seeds) for k in range(3)]
    with pytest.raises(SecureAggregationError, match="device 2"):
        aggregate(c, shares[:2], _layout(4), [0, 1, 2])
    with pytest.raises(SecureAggregationError, match="device 1"):
        aggregate(c, [shares[0], MaskedShare(1, np.zeros(3), c.modulus), shares[2]], _layout(4))
    with pytest.raises(SecureAggregationError):
        aggregate(c, [shares[0], shares[0], shares[2]], _layout(4))
    with pytest.raises(TypeError):
        aggregate(c, [np.zeros(4)] * 3, _layout(4))


def test_no_wraparound_at_maximum():
    for n in (2, 3, 10):
        c = FixedPointCodec(1.0, 12, n)
        out = _secure_mean(c, [np.ones(5)] * n)
        assert np.allclose(out, 1.0, atol=c.step)


def test_permutation_invariance():
    c = FixedPointCodec(1.0, 16, 4)
    rng = np.random.default_rng(6)
    seeds = setup_pairwise_seeds(range(4), 1)
    shares = [mask(c, encode(c, rng.uniform(-1, 1, 8)), k, seeds) for k in range(4)]
    a = aggregate(c, shares, _layout(8))
    b = aggregate(c, shares[::-1], _layout(8))
    assert a == b


def test_wire_format_round_trip_and_width():
    c = FixedPointCodec(1.0, 16, 3)
    seeds = setup_pairwise_seeds(range(3), 9)
    share = mask(c, encode(c, np.linspace(-1, 1, 7)), 2, seeds, round_id=4)
    blob = share.to_bytes()
    assert len(blob) == 2 + 8 + 4 + 4 + 8 + 7 * 3  # 18-bit modulus -> 3-byte values
    assert MaskedShare.from_bytes(blob) == share


@settings(max_examples=30, deadline=None)
@given(n=st.integers(2, 6), bits=st.integers(4, 24), seed=st.integers(0, 2**31))
def test_correctness_property(n, bits, seed):
    c = FixedPointCodec(1.0, bits)
    rng = np.random.default_rng(seed)
    vs = [rng.uniform(-1, 1, 6) for _ in range(n)]
    out = _secure_mean(c, vs, round_seed=seed)
    assert np.max(np.abs(out - np.mean(vs, axis=0))) <= c.step
