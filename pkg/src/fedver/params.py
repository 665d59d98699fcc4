"""Flat parameter vectors with layout metadata.

A :class:`ParamVector` is the only model representation that crosses a
device boundary.  It is immutable: arithmetic returns new vectors, and the
backing array is marked read-only.
"""

from __future__ import annotations

import hashlib
import math
import struct
from dataclasses import dataclass
from typing import Iterable, Iterator, Sequence

import numpy as np

LayoutEntry = tuple[str, tuple[int, ...]]

_MAGIC = b"FVPV"
_VERSION = 1


class LayoutError(ValueError):
    """Raised when two parameter vectors (or a vector and a model) disagree on layout."""


def normalize_layout(layout: Iterable[tuple[str, Sequence[int]]]) -> tuple[LayoutEntry, ...]:
    out = []
    for name, shape in layout:
        shape = tuple(int(s) for s in shape)
        if any(s < 0 for s in shape):
            raise LayoutError(f"negative dimension in layout entry {name!r}: {shape}")
        out.append((str(name), shape))
    return tuple(out)


def layout_size(layout: Iterable[LayoutEntry]) -> int:
    return sum(math.prod(shape) for _, shape in layout)


@dataclass(frozen=True, eq=False)
class ParamVector:
    values: np.ndarray
    layout: tuple[LayoutEntry, ...]

    def __post_init__(self) -> None:
        layout = normalize_layout(self.layout)
        values = np.array(self.values, dtype=np.float64).reshape(-1)
        if layout_size(layout) != values.size:
            raise LayoutError(
                f"layout describes {layout_size(layout)} elements but {values.size} values were given"
            )
        if not np.all(np.isfinite(values)):
            raise ValueError("parameter vector contains non-finite entries")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "layout", layout)

    def __len__(self) -> int:
        return self.values.size

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, ParamVector):
            return NotImplemented
        return self.layout == other.layout and np.array_equal(self.values, other.values)

    __hash__ = None  # type: ignore[assignment]

    def __repr__(self) -> str:
        names = ", ".join(name for name, _ in self.layout)
        return f"ParamVector(n={len(self)}, layout=[{names}])"

    def entries(self) -> Iterator[tuple[str, np.ndarray]]:
        offset = 0
        for name, shape in self.layout:
            size = math.prod(shape)
            yield name, self.values[offset : offset + size].reshape(shape)
            offset += size

    def entry(self, name: str) -> np.ndarray:
        for entry_name, arr in self.entries():
            if entry_name == name:
                return arr
        raise KeyError(name)

    def check_layout(self, other: "ParamVector") -> None:
        if not isinstance(other, ParamVector):
            raise TypeError(f"expected ParamVector, got {type(other).__name__}")
        if self.layout != other.layout:
            raise LayoutError("parameter vectors have different layouts")

    def with_values(self, values: np.ndarray) -> "ParamVector":
        return ParamVector(values, self.layout)

    def __add__(self, other: "ParamVector") -> "ParamVector":
        self.check_layout(other)
        return self.with_values(self.values + other.values)

    def __sub__(self, other: "ParamVector") -> "ParamVector":
        self.check_layout(other)
        return self.with_values(self.values - other.values)

    def scale(self, factor: float) -> "ParamVector":
        return self.with_values(self.values * float(factor))

    def __mul__(self, factor: float) -> "ParamVector":
        return self.scale(factor)

    __rmul__ = __mul__

    def to_bytes(self) -> bytes:
        parts = [_MAGIC, struct.pack("<HI", _VERSION, len(self.layout))]
        for name, shape in self.layout:
            raw = name.encode("utf-8")
            parts.append(struct.pack("<H", len(raw)))
            parts.append(raw)
            parts.append(struct.pack("<B", len(shape)))
            parts.append(struct.pack(f"<{len(shape)}I", *shape))
        parts.append(struct.pack("<Q", self.values.size))
        parts.append(self.values.astype("<f8").tobytes())
        return b"".join(parts)

    @classmethod
    def from_bytes(cls, data: bytes, offset: int = 0) -> "ParamVector":
        vec, _ = cls.read_from(data, offset)
        return vec

    @classmethod
    def read_from(cls, data: bytes, offset: int = 0) -> tuple["ParamVector", int]:
        """Parse one serialized vector starting at ``offset``; return it and the end offset."""
        if data[offset : offset + 4] != _MAGIC:
            raise ValueError("not a serialized ParamVector (bad magic)")
        offset += 4
        version, n_entries = struct.unpack_from("<HI", data, offset)
        offset += 6
        if version != _VERSION:
            raise ValueError(f"unsupported ParamVector version {version}")
        layout = []
        for _ in range(n_entries):
            (name_len,) = struct.unpack_from("<H", data, offset)
            offset += 2
            name = data[offset : offset + name_len].decode("utf-8")
            offset += name_len
            (ndim,) = struct.unpack_from("<B", data, offset)
            offset += 1
            shape = struct.unpack_from(f"<{ndim}I", data, offset)
            offset += 4 * ndim
            layout.append((name, shape))
        (n_values,) = struct.unpack_from("<Q", data, offset)
        offset += 8
        end = offset + 8 * n_values
        if end > len(data):
            raise ValueError("truncated ParamVector payload")
        values = np.frombuffer(data, dtype="<f8", count=n_values, offset=offset)
        return cls(values.astype(np.float64), tuple(layout)), end

    def content_hash(self) -> str:
        return hashlib.sha256(self.to_bytes()).hexdigest()
