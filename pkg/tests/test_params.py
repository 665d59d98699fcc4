import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fedver._seeding import derive_seed, make_rng
from fedver.params import LayoutError, ParamVector

LAYOUT = (("fc0.weight", (2, 3)), ("fc0.bias", (2,)))


def _vec(values):
    return ParamVector(np.asarray(values, dtype=float), LAYOUT)


def test_layout_size_checked():
    with pytest.raises(LayoutError):
        ParamVector(np.zeros(7), LAYOUT)


def test_non_finite_rejected():
    v = np.zeros(8)
    v[3] = np.nan
    with pytest.raises(ValueError):
        ParamVector(v, LAYOUT)


def test_immutable():
    p = _vec(np.arange(8))
    with pytest.raises(ValueError):
        p.values[0] = 5.0


def test_entries_and_arithmetic():
    p = _vec(np.arange(8))
    assert np.array_equal(p.entry("fc0.weight"), np.arange(6).reshape(2, 3))
    assert np.array_equal(p.entry("fc0.bias"), [6, 7])
    assert np.array_equal((p + p).values, 2 * np.arange(8))
    assert np.array_equal((p - p).values, np.zeros(8))
    assert np.array_equal((0.5 * p).values, np.arange(8) / 2)


def test_layout_mismatch_errors():
    other = ParamVector(np.zeros(8), (("a", (8,)),))
    with pytest.raises(LayoutError):
        _vec(np.zeros(8)) + other


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(allow_nan=False, allow_infinity=False, width=64), min_size=8, max_size=8))
def test_serialization_round_trip(values):
    p = _vec(values)
    q = ParamVector.from_bytes(p.to_bytes())
    assert q == p
    assert q.content_hash() == p.content_hash()


def test_read_from_concatenated():
    a, b = _vec(np.arange(8)), _vec(-np.arange(8))
    blob = a.to_bytes() + b.to_bytes()
    first, end = ParamVector.read_from(blob)
    second, _ = ParamVector.read_from(blob, end)
    assert first == a and second == b


def test_bad_magic():
    with pytest.raises(ValueError):
        ParamVector.from_bytes(b"XXXX" + _vec(np.zeros(8)).to_bytes()[4:])


def test_seed_derivation():
    assert derive_seed(1, "a") == derive_seed(1, "a")
    assert derive_seed(1, "a") != derive_seed(1, "b")
    assert derive_seed(1, 2) != derive_seed(12)
    assert derive_seed("1") != derive_seed(1)
    assert make_rng(3, "x").random() == make_rng(3, "x").random()
