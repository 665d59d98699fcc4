"""Synthetic identity datasets, train/test splitting and impostor sampling.

Each identity is a Gaussian cluster in embedding space, standing in for one
person's face images.  Per-identity random streams are derived from
``(seed, identity_id)`` so adding identities never perturbs existing ones.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from ._seeding import make_rng


class ConfigurationError(ValueError):
    """Invalid configuration value; ``field`` names the offending setting."""

    def __init__(self, field: str, message: str):
        super().__init__(f"{field}: {message}")
        self.field = field


class EmbeddingFormatError(ValueError):
    def __init__(self, path: str, line: int, message: str):
        super().__init__(f"{path}:{line}: {message}")
        self.path = path
        self.line = line


class MalformedRowError(EmbeddingFormatError):
    pass


class DimensionMismatchError(EmbeddingFormatError):
    pass


@dataclass(frozen=True)
class SynthesisConfig:
    n_identities: int = 20
    samples_per_identity: int = 100
    dimension: int = 16
    cluster_center_scale: float = 1.5
    within_cluster_stddev: float = 1.0
    seed: int = 0

    def validate(self) -> None:
        if self.n_identities < 2:
            raise ConfigurationError("n_identities", "must be >= 2")
        if self.samples_per_identity < 2:
            raise ConfigurationError("samples_per_identity", "must be >= 2")
        if self.dimension < 1:
            raise ConfigurationError("dimension", "must be >= 1")
        if not math.isfinite(self.cluster_center_scale) or self.cluster_center_scale < 0:
            raise ConfigurationError("cluster_center_scale", "must be finite and >= 0")
        if not (math.isfinite(self.within_cluster_stddev) and self.within_cluster_stddev > 0):
            raise ConfigurationError("within_cluster_stddev", "must be > 0")


@dataclass(frozen=True, eq=False)
class IdentityDataset:
    """Samples of one identity plus its train/test partition.

    A freshly generated or loaded dataset is unsplit (both index tuples empty);
    :func:`split_dataset` fills them in and requires at least 2 samples.
    """

    identity_id: int
    samples: np.ndarray
    train_indices: tuple[int, ...] = ()
    test_indices: tuple[int, ...] = ()

    def __post_init__(self) -> None:
        samples = np.array(self.samples, dtype=np.float64)
        if samples.ndim != 2:
            raise ValueError("samples must be a 2-D array (n_samples, dimension)")
        if samples.shape[0] < 1:
            raise ValueError(f"identity {self.identity_id} has no samples")
        if not np.all(np.isfinite(samples)):
            raise ValueError(f"identity {self.identity_id} has non-finite samples")
        samples.setflags(write=False)
        object.__setattr__(self, "samples", samples)
        train = tuple(int(i) for i in self.train_indices)
        test = tuple(int(i) for i in self.test_indices)
        if train or test:
            if set(train) & set(test):
                raise ValueError("train and test indices overlap")
            if sorted(train + test) != list(range(samples.shape[0])):
                raise ValueError("train and test indices must cover every sample exactly once")
        object.__setattr__(self, "train_indices", train)
        object.__setattr__(self, "test_indices", test)

    @property
    def dimension(self) -> int:
        return self.samples.shape[1]

    @property
    def is_split(self) -> bool:
        return bool(self.train_indices)

    @property
    def train(self) -> np.ndarray:
        return self.samples[list(self.train_indices)]

    @property
    def test(self) -> np.ndarray:
        return self.samples[list(self.test_indices)]

    def __len__(self) -> int:
        return self.samples.shape[0]


def generate_identities(config: SynthesisConfig) -> list[IdentityDataset]:
    config.validate()
    out = []
    for k in range(config.n_identities):
        center = make_rng(config.seed, "center", k).standard_normal(config.dimension)
        center *= config.cluster_center_scale
        noise = make_rng(config.seed, "samples", k).standard_normal(
            (config.samples_per_identity, config.dimension)
        )
        out.append(IdentityDataset(k, center + config.within_cluster_stddev * noise))
    return out


def split_dataset(ds: IdentityDataset, ratio: float = 0.9, seed: int = 0) -> IdentityDataset:
    """Shuffle one identity's samples and partition them into train/test.

    The train size is ``floor(ratio * n)`` clamped so both parts are non-empty.
    """
    if not 0.0 < ratio < 1.0:
        raise ValueError(f"split ratio must lie in (0, 1), got {ratio}")
    n = len(ds)
    if n < 2:
        raise ValueError(f"identity {ds.identity_id} needs at least 2 samples to split, has {n}")
    n_train = min(max(math.floor(ratio * n), 1), n - 1)
    order = make_rng(seed, "split", ds.identity_id).permutation(n)
    train = tuple(sorted(int(i) for i in order[:n_train]))
    test = tuple(sorted(int(i) for i in order[n_train:]))
    return IdentityDataset(ds.identity_id, ds.samples, train, test)


def sample_cross_identity_impostors(
    target_identity: int,
    pool: Sequence[IdentityDataset],
    count: int,
    seed: int,
    partition: str = "train",
) -> np.ndarray:
    """Draw ``count`` vectors from the ``partition`` of uniformly chosen non-target identities.

    Returns an array of shape ``(count, dimension)``.
    """
    if count < 1:
        raise ValueError("count must be >= 1")
    if partition not in ("train", "test"):
        raise ValueError(f"unknown partition {partition!r}")
    others = sorted((ds for ds in pool if ds.identity_id != target_identity), key=lambda d: d.identity_id)
    if not others:
        raise ValueError(f"pool contains no identity other than {target_identity}")
    sources = []
    for ds in others:
        if not ds.is_split:
            raise ValueError(f"identity {ds.identity_id} has not been split")
        sources.append(ds.train if partition == "train" else ds.test)
    rng = make_rng(seed, "impostors", target_identity, partition)
    picks = rng.integers(len(sources), size=count)
    rows = [sources[p][rng.integers(sources[p].shape[0])] for p in picks]
    return np.array(rows, dtype=np.float64)


def template_relative(samples: np.ndarray, template: np.ndarray) -> np.ndarray:
    """Elementwise absolute difference between samples and an enrollment template.

    This is the verifier's input representation: a shared model can only score
    "same person as the owner" if its input is expressed relative to the owner.
    """
    return np.abs(np.atleast_2d(samples) - np.asarray(template)[None, :])


def load_embeddings(path: str | os.PathLike) -> list[IdentityDataset]:
    """Read ``label,v1,...,vd`` rows into one unsplit dataset per identity label."""
    path = os.fspath(path)
    if not os.path.exists(path):
        raise FileNotFoundError(f"embedding file not found: {path}")
    rows: dict[int, list[list[float]]] = {}
    dim = None
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            text = line.strip()
            if not text or text.startswith("#"):
                continue
            fields = [f.strip() for f in text.split(",")]
            if len(fields) < 2:
                raise MalformedRowError(path, lineno, "expected a label followed by at least one value")
            try:
                label = int(fields[0])
            except ValueError:
                raise MalformedRowError(path, lineno, f"identity label {fields[0]!r} is not an integer") from None
            try:
                values = [float(f) for f in fields[1:]]
            except ValueError:
                raise MalformedRowError(path, lineno, "non-numeric value") from None
            if not all(math.isfinite(v) for v in values):
                raise MalformedRowError(path, lineno, "non-finite value")
            if dim is None:
                dim = len(values)
            elif len(values) != dim:
                raise DimensionMismatchError(
                    path, lineno, f"row has {len(values)} values, expected {dim}"
                )
            rows.setdefault(label, []).append(values)
    if not rows:
        raise EmbeddingFormatError(path, 0, "file contains no data rows")
    return [IdentityDataset(label, np.array(rows[label])) for label in sorted(rows)]


def write_embeddings(path: str | os.PathLike, datasets: Sequence[IdentityDataset]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("# identity,values...\n")
        for ds in datasets:
            for row in ds.samples:
                fh.write(",".join([str(ds.identity_id)] + [repr(float(v)) for v in row]) + "\n")
