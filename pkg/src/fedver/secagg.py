"""Pairwise-masking secure summation over fixed-point integers.

Every device encodes its parameter vector as integers, then adds a
pseudorandom mask for each peer: the lower-id device of a pair adds the
pair's stream and the higher-id device subtracts it.  Summing all shares
modulo ``2**k`` cancels every mask, so the aggregator recovers the sum and
nothing else.  There is no dropout recovery; every participant must submit.

The PRG is versioned (``PRG_VERSION``) so shares are reproducible bit for bit:
block ``c`` of the stream for pair seed ``s`` is
``blake2b(key=s as 8 LE bytes, msg=c as 8 LE bytes, digest_size=64)``,
read as eight little-endian uint64 words, each reduced modulo ``2**k``.
"""

from __future__ import annotations

import hashlib
import logging
import math
import struct
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .params import LayoutEntry, ParamVector, layout_size

log = logging.getLogger(__name__)

PRG_VERSION = 1
WIRE_VERSION = 1
_MAX_MODULUS_BITS = 62
_WORDS_PER_BLOCK = 8


class SecureAggregationError(RuntimeError):
    pass


@dataclass(frozen=True)
class FixedPointCodec:
    """Clip to ``[-R, R]`` and map affinely onto ``{0, ..., 2**bits - 1}``.

    The modulus carries ``ceil(log2 n_devices)`` spare bits so the sum of all
    participants' encodings can never wrap.
    """

    clip_range: float = 1.0
    bits: int = 16
    n_devices: int = 2

    def __post_init__(self) -> None:
        if not (math.isfinite(self.clip_range) and self.clip_range > 0):
            raise ValueError("clip_range must be finite and > 0")
        if self.bits < 1:
            raise ValueError("bits must be >= 1")
        if self.n_devices < 1:
            raise ValueError("n_devices must be >= 1")
        if self.modulus_bits > _MAX_MODULUS_BITS:
            raise ValueError(
                f"bits + ceil(log2 n_devices) = {self.modulus_bits} exceeds {_MAX_MODULUS_BITS}"
            )

    @property
    def levels(self) -> int:
        return (1 << self.bits) - 1

    @property
    def step(self) -> float:
        return 2.0 * self.clip_range / self.levels

    @property
    def modulus_bits(self) -> int:
        return self.bits + math.ceil(math.log2(self.n_devices))

    @property
    def modulus(self) -> int:
        return 1 << self.modulus_bits

    def with_devices(self, n_devices: int) -> "FixedPointCodec":
        return FixedPointCodec(self.clip_range, self.bits, n_devices)

    def decode(self, encoded: np.ndarray) -> np.ndarray:
        return np.asarray(encoded, dtype=np.float64) * self.step - self.clip_range


@dataclass(frozen=True)
class PairwiseSeedMatrix:
    round_seed: int
    seeds: dict[tuple[int, int], int]

    @property
    def device_ids(self) -> tuple[int, ...]:
        ids = set()
        for u, v in self.seeds:
            ids.update((u, v))
        return tuple(sorted(ids))

    def seed(self, u: int, v: int) -> int:
        return self.seeds[(min(u, v), max(u, v))]

    def __len__(self) -> int:
        return len(self.seeds)


@dataclass(frozen=True, eq=False)
class MaskedShare:
    device_id: int
    masked_values: np.ndarray
    modulus: int
    round_id: int = 0

    def __post_init__(self) -> None:
        vals = np.array(self.masked_values, dtype=np.uint64).reshape(-1)
        if vals.size and int(vals.max()) >= self.modulus:
            raise ValueError("masked value outside [0, modulus)")
        vals.setflags(write=False)
        object.__setattr__(self, "masked_values", vals)

    @property
    def length(self) -> int:
        return self.masked_values.size

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, MaskedShare):
            return NotImplemented
        return (
            self.device_id == other.device_id
            and self.modulus == other.modulus
            and self.round_id == other.round_id
            and np.array_equal(self.masked_values, other.masked_values)
        )

    __hash__ = None  # type: ignore[assignment]

    def to_bytes(self) -> bytes:
        """Header ``<HQIIQ`` (version, round id, device id, length, modulus) then fixed-width LE integers."""
        width = _value_width(self.modulus)
        header = struct.pack("<HQIIQ", WIRE_VERSION, self.round_id, self.device_id, self.length, self.modulus)
        words = self.masked_values.astype("<u8").view(np.uint8).reshape(-1, 8)[:, :width]
        return header + words.tobytes()

    @classmethod
    def from_bytes(cls, data: bytes) -> "MaskedShare":
        head = struct.calcsize("<HQIIQ")
        version, round_id, device_id, length, modulus = struct.unpack_from("<HQIIQ", data, 0)
        if version != WIRE_VERSION:
            raise ValueError(f"unsupported share wire version {version}")
        width = _value_width(modulus)
        body = np.frombuffer(data, dtype=np.uint8, count=length * width, offset=head).reshape(length, width)
        padded = np.zeros((length, 8), dtype=np.uint8)
        padded[:, :width] = body
        return cls(device_id, padded.view("<u8").reshape(-1).astype(np.uint64), modulus, round_id)


def _value_width(modulus: int) -> int:
    bits = modulus.bit_length() - 1
    return max(1, math.ceil(bits / 8))


def encode(codec: FixedPointCodec, v: ParamVector | np.ndarray) -> np.ndarray:
    """Clip, scale and round each coordinate to an integer in ``[0, 2**bits - 1]``."""
    x = v.values if isinstance(v, ParamVector) else np.asarray(v, dtype=np.float64)
    if not np.all(np.isfinite(x)):
        raise ValueError("cannot encode non-finite values")
    r = codec.clip_range
    clipped = np.clip(x, -r, r)
    if x.size and np.mean(clipped != x) > 0.01:
        log.warning("%.1f%% of coordinates clipped to +-%g", 100 * np.mean(clipped != x), r)
    q = np.floor((clipped + r) / codec.step + 0.5)
    return np.minimum(q, codec.levels).astype(np.uint64)


def setup_pairwise_seeds(device_ids: Iterable[int], round_seed: int) -> PairwiseSeedMatrix:
    ids = sorted(set(int(d) for d in device_ids))
    if len(ids) < 2:
        raise SecureAggregationError("secure aggregation needs at least 2 devices")
    key = int(round_seed).to_bytes(16, "little", signed=True)
    seeds = {}
    for i, u in enumerate(ids):
        for v in ids[i + 1 :]:
            h = hashlib.blake2b(struct.pack("<4sqq", b"pair", u, v), key=key, digest_size=8)
            seeds[(u, v)] = int.from_bytes(h.digest(), "little")
    return PairwiseSeedMatrix(int(round_seed), seeds)


def prg_stream(seed: int, length: int, modulus: int) -> np.ndarray:
    """Expand a pair seed into ``length`` integers modulo ``modulus`` (a power of two)."""
    key = int(seed).to_bytes(8, "little")
    n_blocks = -(-length // _WORDS_PER_BLOCK)
    raw = b"".join(
        hashlib.blake2b(c.to_bytes(8, "little"), key=key, digest_size=64).digest() for c in range(n_blocks)
    )
    words = np.frombuffer(raw, dtype="<u8")[:length].astype(np.uint64)
    return words & np.uint64(modulus - 1)


def net_mask(codec: FixedPointCodec, device_id: int, seeds: PairwiseSeedMatrix, length: int) -> np.ndarray:
    """Sum of this device's signed pair streams, modulo the codec modulus."""
    if device_id not in seeds.device_ids:
        raise SecureAggregationError(f"device {device_id} has no pairwise seeds this round")
    m = np.uint64(codec.modulus)
    total = np.zeros(length, dtype=np.uint64)
    for peer in seeds.device_ids:
        if peer == device_id:
            continue
        stream = prg_stream(seeds.seed(device_id, peer), length, codec.modulus)
        if peer > device_id:
            total = (total + stream) % m
        else:
            total = (total + (m - stream)) % m
    return total


def mask(
    codec: FixedPointCodec,
    encoded: np.ndarray,
    device_id: int,
    seeds: PairwiseSeedMatrix,
    round_id: int = 0,
) -> MaskedShare:
    encoded = np.asarray(encoded, dtype=np.uint64)
    if encoded.size and int(encoded.max()) > codec.levels:
        raise ValueError("encoded values exceed the codec range")
    total = (encoded + net_mask(codec, device_id, seeds, encoded.size)) % np.uint64(codec.modulus)
    return MaskedShare(device_id, total, codec.modulus, round_id)


def aggregate(
    codec: FixedPointCodec,
    shares: Sequence[MaskedShare],
    layout: Sequence[LayoutEntry],
    participants: Sequence[int] | None = None,
) -> ParamVector:
    """Unmask the sum of all shares and return the unweighted mean.

    Only :class:`MaskedShare` objects are accepted; the aggregator never sees
    encoded or plaintext vectors.
    """
    if not shares:
        raise SecureAggregationError("no shares submitted")
    for s in shares:
        if not isinstance(s, MaskedShare):
            raise TypeError(f"aggregator accepts only MaskedShare, got {type(s).__name__}")
    layout = tuple(layout)
    length = layout_size(layout)
    ids = [s.device_id for s in shares]
    if len(set(ids)) != len(ids):
        raise SecureAggregationError("duplicate share from one device")
    if participants is not None:
        missing = sorted(set(participants) - set(ids))
        if missing:
            raise SecureAggregationError(f"missing share from device {missing[0]}")
        extra = sorted(set(ids) - set(participants))
        if extra:
            raise SecureAggregationError(f"unexpected share from device {extra[0]}")
    n = len(shares)
    if codec.n_devices < n:
        raise SecureAggregationError(f"codec sized for {codec.n_devices} devices but {n} submitted")
    m = np.uint64(codec.modulus)
    total = np.zeros(length, dtype=np.uint64)
    for s in sorted(shares, key=lambda s: s.device_id):
        if s.length != length:
            raise SecureAggregationError(f"share from device {s.device_id} has length {s.length}, expected {length}")
        if s.modulus != codec.modulus:
            raise SecureAggregationError(f"share from device {s.device_id} uses a different modulus")
        total = (total + s.masked_values) % m
    summed = total.astype(np.float64) * codec.step - n * codec.clip_range
    return ParamVector(summed / n, layout)
