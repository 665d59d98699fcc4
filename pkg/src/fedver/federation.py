"""Round state machine: local training, plaintext or secure averaging, redistribution.

Aggregation interfaces accept only :class:`ParamVector` (plaintext) or
:class:`MaskedShare` (secure) values.  Raw feature vectors stay inside
:class:`DeviceState`.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import secagg
from ._seeding import derive_seed, make_rng
from .data import IdentityDataset, template_relative
from .params import LayoutError, ParamVector
from .training import Model, OptimizerConfig, TrainReport, train_from_scratch, train_local

log = logging.getLogger(__name__)

PLAINTEXT = "plaintext"
SECURE = "secure"


@dataclass(frozen=True)
class AggregationWeights:
    p: tuple[float, ...]

    def __post_init__(self) -> None:
        p = tuple(float(v) for v in self.p)
        if not p:
            raise ValueError("aggregation weights are empty")
        if any(not np.isfinite(v) or v < 0 for v in p):
            raise ValueError("aggregation weights must be finite and non-negative")
        if abs(sum(p) - 1.0) > 1e-12:
            raise ValueError(f"aggregation weights sum to {sum(p)!r}, not 1")
        object.__setattr__(self, "p", p)

    def __len__(self) -> int:
        return len(self.p)


def make_weights(sample_counts: Sequence[int], scheme: str = "proportional") -> AggregationWeights:
    counts = [int(c) for c in sample_counts]
    if not counts:
        raise ValueError("no sample counts given")
    if any(c < 1 for c in counts):
        raise ValueError("every sample count must be >= 1")
    if scheme == "uniform":
        return AggregationWeights(tuple(1.0 / len(counts) for _ in counts))
    if scheme != "proportional":
        raise ValueError(f"unknown weight scheme {scheme!r}")
    total = sum(counts)
    return AggregationWeights(tuple(c / total for c in counts))


def fedavg(models: Sequence[tuple[ParamVector, float]]) -> ParamVector:
    """Coordinatewise convex combination ``sum_k p_k w_k``.

    Computed as ``w_0 + sum_k p_k (w_k - w_0)`` so averaging identical models
    returns that model exactly.
    """
    if not models:
        raise ValueError("fedavg needs at least one model")
    for vec, _ in models:
        if not isinstance(vec, ParamVector):
            raise TypeError(f"fedavg accepts only ParamVector, got {type(vec).__name__}")
    weights = AggregationWeights(tuple(w for _, w in models))
    base = models[0][0]
    acc = np.zeros_like(base.values)
    for (vec, _), p in zip(models, weights.p):
        base.check_layout(vec)
        acc += p * (vec.values - base.values)
    return base.with_values(base.values + acc)


@dataclass
class DeviceState:
    """One edge device.

    The identity's train partition is divided once into a fitting part and a
    validation part (for early stopping); impostors are divided the same way.
    The supervised verifier sees samples relative to the owner's enrollment
    template (mean of the fitting genuine samples), standardized per
    coordinate with statistics of the device's own fitting set.
    """

    device_id: int
    identity: IdentityDataset
    impostors: np.ndarray
    rng_seed: int
    kind: str = "supervised"
    validation_fraction: float = 0.1
    local_model: ParamVector | None = None
    _fit: tuple = field(init=False, repr=False)
    _val: tuple = field(init=False, repr=False)
    template: np.ndarray = field(init=False, repr=False)
    _center: np.ndarray = field(init=False, repr=False)
    _scale: np.ndarray = field(init=False, repr=False)

    def __post_init__(self) -> None:
        if self.kind not in ("supervised", "unsupervised"):
            raise ValueError(f"unknown device kind {self.kind!r}")
        if not self.identity.is_split:
            raise ValueError(f"device {self.device_id}: identity data has not been split")
        genuine = self.identity.train
        impostors = np.atleast_2d(np.asarray(self.impostors, dtype=np.float64)).reshape(-1, genuine.shape[1])
        self.impostors = impostors
        g_fit, g_val = self._holdout(genuine, "genuine")
        i_fit, i_val = self._holdout(impostors, "impostor") if impostors.shape[0] else (impostors, impostors)
        self.template = g_fit.mean(axis=0)
        rel = template_relative(np.vstack([g_fit, i_fit]), self.template)
        self._center = rel.mean(axis=0)
        sd = rel.std(axis=0)
        self._scale = np.where(sd > 0, sd, 1.0)
        if self.kind == "unsupervised":
            self._fit = (g_fit, None)
            self._val = (g_val, None)
        else:
            self._fit = self._labelled(g_fit, i_fit)
            self._val = self._labelled(g_val, i_val)

    def _holdout(self, samples: np.ndarray, tag: str) -> tuple[np.ndarray, np.ndarray]:
        n = samples.shape[0]
        n_val = int(round(self.validation_fraction * n))
        n_val = min(n_val, n - 1)
        order = make_rng(self.rng_seed, "holdout", tag).permutation(n)
        return samples[np.sort(order[n_val:])], samples[np.sort(order[:n_val])]

    def _labelled(self, genuine: np.ndarray, impostors: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        x = np.vstack([genuine, impostors]) if impostors.shape[0] else genuine
        y = np.concatenate([np.ones(genuine.shape[0]), np.zeros(impostors.shape[0])])
        return self.features(x), y

    def features(self, samples: np.ndarray) -> np.ndarray:
        """Model input for raw samples: standardized template-relative for the verifier, raw otherwise."""
        samples = np.atleast_2d(samples)
        if self.kind == "supervised":
            return (template_relative(samples, self.template) - self._center) / self._scale
        return samples

    @property
    def sample_count(self) -> int:
        return int(self._fit[0].shape[0])

    def training_data(self):
        x, y = self._fit
        return x if y is None else (x, y)

    def validation_data(self):
        x, y = self._val
        if x.shape[0] == 0:
            return None
        return x if y is None else (x, y)


@dataclass
class RoundRecord:
    round_index: int
    participants: tuple[int, ...]
    aggregator_mode: str
    global_model: ParamVector
    weights: AggregationWeights
    train_reports: dict[int, TrainReport]

    def __post_init__(self) -> None:
        if not self.participants:
            raise ValueError("a round needs at least one participant")


def round_seed(seed: int, round_index: int) -> int:
    return derive_seed(seed, "round", round_index)


def _map(fn: Callable, items: Sequence, threads: int) -> list:
    if threads <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


def _local_update(device: DeviceState, model: Model, opt: OptimizerConfig, seed: int):
    try:
        return train_local(
            model, device.training_data(), device.validation_data(), opt,
            derive_seed(device.rng_seed, "local", seed),
        )
    except Exception as exc:
        raise RuntimeError(f"device {device.device_id}: local training failed: {exc}") from exc


def run_round(
    devices: Sequence[DeviceState],
    global_model: Model,
    mode: str = PLAINTEXT,
    opt: OptimizerConfig = OptimizerConfig(),
    codec: secagg.FixedPointCodec | None = None,
    round_seed: int = 0,
    round_index: int = 0,
    weight_scheme: str = "proportional",
    threads: int = 1,
) -> RoundRecord:
    """One federated round; the new global model is written to every device."""
    if not devices:
        raise ValueError("a round needs at least one device")
    if mode not in (PLAINTEXT, SECURE):
        raise ValueError(f"unknown aggregator mode {mode!r}")
    if (codec is not None) != (mode == SECURE):
        raise ValueError("a codec is required for secure mode and only for secure mode")
    devices = sorted(devices, key=lambda d: d.device_id)
    ids = tuple(d.device_id for d in devices)
    if len(set(ids)) != len(ids):
        raise ValueError("duplicate device ids")
    for d in devices:
        d.local_model = global_model.params

    results = _map(lambda d: _local_update(d, global_model, opt, round_seed), devices, threads)
    trained = [r[0] for r in results]
    reports = {d.device_id: r[1] for d, r in zip(devices, results)}
    weights = make_weights([d.sample_count for d in devices], weight_scheme)

    if mode == PLAINTEXT:
        new_global = fedavg(list(zip(trained, weights.p)))
    else:
        new_global = _secure_average(devices, trained, weights, codec, round_seed, round_index, threads)

    for d in devices:
        d.local_model = new_global
    return RoundRecord(round_index, ids, mode, new_global, weights, reports)


def _secure_average(devices, trained, weights, codec, seed, round_index, threads) -> ParamVector:
    n = len(devices)
    if n < 2:
        raise secagg.SecureAggregationError("secure aggregation needs at least 2 devices")
    codec = codec.with_devices(n)
    seeds = secagg.setup_pairwise_seeds([d.device_id for d in devices], seed)
    layout = trained[0].layout

    def submit(item):
        device, vec, p = item
        if vec.layout != layout:
            raise LayoutError(f"device {device.device_id}: model layout differs from the round layout")
        # Pre-scaling by n*p_k turns the aggregator's plain mean into the weighted mean.
        scaled = vec.scale(n * p)
        return secagg.mask(codec, secagg.encode(codec, scaled), device.device_id, seeds, round_index)

    shares = _map(submit, list(zip(devices, trained, weights.p)), threads)
    return secagg.aggregate(codec, shares, layout, [d.device_id for d in devices])


def run_federation(
    devices: Sequence[DeviceState],
    model: Model,
    n_rounds: int = 1,
    mode: str = PLAINTEXT,
    opt: OptimizerConfig = OptimizerConfig(),
    codec: secagg.FixedPointCodec | None = None,
    seed: int = 0,
    weight_scheme: str = "proportional",
    threads: int = 1,
) -> list[RoundRecord]:
    """Chain ``n_rounds`` rounds starting from the shared initial ``model.params``."""
    if n_rounds < 1:
        raise ValueError("n_rounds must be >= 1")
    records = []
    current = model
    for r in range(n_rounds):
        rec = run_round(devices, current, mode, opt, codec, round_seed(seed, r), r, weight_scheme, threads)
        records.append(rec)
        current = current.with_params(rec.global_model)
    return records


def run_individual_baseline(
    devices: Sequence[DeviceState], model: Model, opt: OptimizerConfig, threads: int = 1
) -> dict[int, ParamVector]:
    """Train every device from its own initialization, on its own data, with no communication."""
    def one(d: DeviceState):
        params, _ = train_from_scratch(model, d.training_data(), d.validation_data(), opt, d.rng_seed)
        return d.device_id, params

    return dict(_map(one, sorted(devices, key=lambda d: d.device_id), threads))


def pooled_data(devices: Sequence[DeviceState], validation: bool = False):
    parts = [d.validation_data() if validation else d.training_data() for d in sorted(devices, key=lambda d: d.device_id)]
    parts = [p for p in parts if p is not None]
    if not parts:
        return None
    if isinstance(parts[0], tuple):
        return np.vstack([p[0] for p in parts]), np.concatenate([p[1] for p in parts])
    return np.vstack(parts)


def run_pooled_baseline(
    devices: Sequence[DeviceState], model: Model, opt: OptimizerConfig, seed: int
) -> ParamVector:
    """Train one model on the union of all devices' data (the privacy-violating reference)."""
    params, _ = train_from_scratch(model, pooled_data(devices), pooled_data(devices, validation=True), opt, seed)
    return params
