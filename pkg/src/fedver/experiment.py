"""Experiment runner: builds devices, trains every condition, evaluates and writes reports.

A condition is named ``{mode}/{system}/{impostors}``, for example
``supervised/fed-secure/gan``.  Systems are ``individual`` (no
communication), ``fed-plain`` (FedAvg at the server), ``fed-secure`` (FedAvg
through the masking aggregator) and ``pooled`` (one model on all data).
"""

from __future__ import annotations

import csv
import datetime as _dt
import json
import logging
import os
import time
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from . import __version__
from ._seeding import derive_seed
from .config import ExperimentConfig, config_to_dict, dump_config, validate_config
from .data import (
    IdentityDataset,
    generate_identities,
    load_embeddings,
    sample_cross_identity_impostors,
    split_dataset,
)
from .evaluation import (
    DistributionSummary,
    EerResult,
    TTestResult,
    compute_eer,
    summarize,
    t_test,
    unsupervised_scores,
)
from .federation import (
    PLAINTEXT,
    SECURE,
    DeviceState,
    run_federation,
    run_individual_baseline,
    run_pooled_baseline,
)
from .gan import GanModel, gan_sample, train_gan
from .nn import Autoencoder, MlpVerifier
from .params import ParamVector
from .secagg import FixedPointCodec

log = logging.getLogger(__name__)

INDIVIDUAL = "individual"
FED_PLAIN = "fed-plain"
FED_SECURE = "fed-secure"
POOLED = "pooled"

OUTPUT_FILES = (
    "config_echo.txt",
    "transcript.jsonl",
    "eer.csv",
    "summary.csv",
    "histogram.csv",
    "ttest.json",
    "manifest.json",
)
# Manifest fields that legitimately differ between otherwise identical runs.
VOLATILE_MANIFEST_FIELDS = ("created_at", "wall_clock_seconds")

_SOURCE_TAG = {"cross_identity": "cross", "gan": "gan", "none": "none"}


def condition_name(mode: str, system: str, impostor_source: str) -> str:
    return f"{mode}/{system}/{_SOURCE_TAG[impostor_source]}"


@dataclass
class EvalReport:
    condition: str
    results: dict[int, EerResult]
    summary: DistributionSummary

    @property
    def eer_percent(self) -> list[float]:
        return [self.results[k].eer_percent for k in sorted(self.results)]


@dataclass
class ExperimentReport:
    conditions: dict[str, EvalReport]
    ttests: list[dict] = field(default_factory=list)
    transcript: list[dict] = field(default_factory=list)
    files: list[str] = field(default_factory=list)
    output_dir: str | None = None
    duration_seconds: float = 0.0
    version: str = __version__
    config: ExperimentConfig | None = None


def build_datasets(cfg: ExperimentConfig) -> list[IdentityDataset]:
    if cfg.embeddings_path:
        raw = load_embeddings(cfg.embeddings_path)
    else:
        raw = generate_identities(replace(cfg.synthesis, seed=cfg.seed))
    datasets = [split_dataset(ds, cfg.split_ratio, derive_seed(cfg.seed, "split")) for ds in raw]
    if len(datasets) < max(cfg.n_devices, 2):
        raise ValueError(f"need at least {max(cfg.n_devices, 2)} identities, have {len(datasets)}")
    return datasets


class _GanPool:
    """Trains the shared GAN (or one per device) lazily, at most once per experiment."""

    def __init__(self, cfg: ExperimentConfig, datasets: Sequence[IdentityDataset]):
        self.cfg = cfg
        self.data = np.vstack([ds.train for ds in datasets])
        self._models: dict[int | None, GanModel] = {}

    def for_device(self, device_id: int) -> GanModel:
        key = device_id if self.cfg.gan.per_device else None
        if key not in self._models:
            seed = derive_seed(self.cfg.seed, "gan") if key is None else derive_seed(self.cfg.seed, "gan", key)
            settings = self.cfg.gan
            log.info("training GAN (seed %d) on %d samples", seed, self.data.shape[0])
            self._models[key] = train_gan(
                self.data,
                replace(settings.train, seed=seed),
                latent_dim=settings.latent_dim,
                generator_hidden=settings.hidden,
                discriminator_hidden=settings.hidden,
            )
        return self._models[key]


@dataclass
class _Cell:
    mode: str
    source: str
    device_ids: list[int]
    datasets: dict[int, IdentityDataset]
    impostors: dict[int, np.ndarray]
    eval_impostors: dict[int, np.ndarray]


def _prepare_cell(cfg, datasets, mode, source, gans: _GanPool) -> _Cell:
    by_id = {ds.identity_id: ds for ds in datasets}
    device_ids = sorted(by_id)[: cfg.n_devices]
    impostors, eval_impostors = {}, {}
    for k in device_ids:
        d = by_id[k].dimension
        n_eval = cfg.eval_impostors or len(by_id[k].test_indices)
        if source == "cross_identity":
            impostors[k] = sample_cross_identity_impostors(
                k, datasets, cfg.impostors_per_device, derive_seed(cfg.seed, "train-impostors")
            )
        elif source == "gan":
            impostors[k] = gan_sample(gans.for_device(k), cfg.impostors_per_device, derive_seed(cfg.seed, "gan-train-impostors", k))
        else:
            impostors[k] = np.empty((0, d))
        if source == "gan":
            eval_impostors[k] = gan_sample(gans.for_device(k), n_eval, derive_seed(cfg.seed, "gan-eval-impostors", k))
        else:
            eval_impostors[k] = sample_cross_identity_impostors(
                k, datasets, n_eval, derive_seed(cfg.seed, "eval-impostors"), partition="test"
            )
    return _Cell(mode, source, device_ids, by_id, impostors, eval_impostors)


def _devices(cfg, cell: _Cell) -> list[DeviceState]:
    return [
        DeviceState(
            device_id=k,
            identity=cell.datasets[k],
            impostors=cell.impostors[k],
            rng_seed=derive_seed(cfg.seed, "device", k),
            kind=cell.mode,
            validation_fraction=cfg.validation_fraction,
        )
        for k in cell.device_ids
    ]


def _model_template(cfg, mode: str, dim: int):
    seed = derive_seed(cfg.seed, "global-init", mode)
    if mode == "supervised":
        return MlpVerifier.create((dim, *cfg.hidden, 1), seed=seed)
    return Autoencoder.create((dim, *cfg.encoder_hidden, cfg.bottleneck), seed=seed)


def _evaluate(cfg, cell: _Cell, devices, model, params_for) -> dict[int, EerResult]:
    out = {}
    for dev in devices:
        params = params_for(dev.device_id)
        genuine = cell.datasets[dev.device_id].test
        impostor = cell.eval_impostors[dev.device_id]
        m = model.with_params(params)
        if cell.mode == "supervised":
            g = m.scores(dev.features(genuine))
            i = m.scores(dev.features(impostor))
        else:
            enrollment = cell.datasets[dev.device_id].train
            g = unsupervised_scores(m, enrollment, genuine)
            i = unsupervised_scores(m, enrollment, impostor)
        out[dev.device_id] = compute_eer(g, i)
    return out


def _transcript(condition: str, records) -> list[dict]:
    out = []
    for rec in records:
        out.append(
            {
                "condition": condition,
                "round": rec.round_index,
                "mode": rec.aggregator_mode,
                "participants": list(rec.participants),
                "weights": list(rec.weights.p),
                "final_losses": {str(k): rec.train_reports[k].final_train_loss for k in sorted(rec.train_reports)},
                "model_sha256": rec.global_model.content_hash(),
            }
        )
    return out


def _run_cell(cfg, cell: _Cell, aggregators: Sequence[str], threads: int):
    results: dict[str, dict[int, EerResult]] = {}
    transcript: list[dict] = []
    dim = cell.datasets[cell.device_ids[0]].dimension
    model = _model_template(cfg, cell.mode, dim)
    devices = _devices(cfg, cell)

    individual = run_individual_baseline(devices, model, cfg.optimizer, threads)
    name = condition_name(cell.mode, INDIVIDUAL, cell.source)
    results[name] = _evaluate(cfg, cell, devices, model, individual.__getitem__)

    for agg in aggregators:
        devices = _devices(cfg, cell)
        if agg == SECURE:
            codec = FixedPointCodec(cfg.codec.clip_range, cfg.codec.bits, len(devices))
            system = FED_SECURE
        else:
            codec, system = None, FED_PLAIN
        records = run_federation(
            devices, model, cfg.n_rounds, agg, cfg.optimizer, codec,
            derive_seed(cfg.seed, "federation", cell.mode), cfg.weight_scheme, threads,
        )
        final = records[-1].global_model
        name = condition_name(cell.mode, system, cell.source)
        results[name] = _evaluate(cfg, cell, devices, model, lambda _k, p=final: p)
        transcript.extend(_transcript(name, records))

    if cfg.pooled_baseline:
        pooled = run_pooled_baseline(devices, model, cfg.optimizer, derive_seed(cfg.seed, "pooled", cell.mode))
        name = condition_name(cell.mode, POOLED, cell.source)
        results[name] = _evaluate(cfg, cell, devices, model, lambda _k, p=pooled: p)
    return results, transcript


def _cells(cfg: ExperimentConfig) -> list[tuple[str, str]]:
    if not cfg.full_matrix:
        return [(cfg.mode, "none" if cfg.mode == "unsupervised" else cfg.impostor_source)]
    return [("supervised", "cross_identity"), ("supervised", "gan"), ("unsupervised", "none")]


def _ttests(conditions: dict[str, EvalReport]) -> list[dict]:
    out = []
    for name in conditions:
        mode, system, source = name.split("/")
        if system != INDIVIDUAL:
            continue
        pairs = [(INDIVIDUAL, FED_PLAIN), (INDIVIDUAL, FED_SECURE), (FED_PLAIN, FED_SECURE), (POOLED, FED_PLAIN)]
        for a, b in pairs:
            ca, cb = f"{mode}/{a}/{source}", f"{mode}/{b}/{source}"
            if ca in conditions and cb in conditions:
                record = {"a": ca, "b": cb}
                try:
                    record.update(compare_conditions_reports(conditions, ca, cb).to_dict())
                except ValueError as exc:
                    record["error"] = str(exc)
                out.append(record)
    return out


def compare_conditions_reports(conditions: dict[str, EvalReport], a: str, b: str) -> TTestResult:
    for name in (a, b):
        if name not in conditions:
            raise KeyError(f"unknown condition {name!r}; available: {', '.join(sorted(conditions))}")
    return t_test(conditions[a].eer_percent, conditions[b].eer_percent)


def compare_conditions(report: ExperimentReport, condition_a: str, condition_b: str) -> TTestResult:
    """Welch's t-test between the per-device EERs of two conditions."""
    return compare_conditions_reports(report.conditions, condition_a, condition_b)


def run_experiment(
    config: ExperimentConfig, threads: int = 1, output_dir: str | None = None, write: bool = True
) -> ExperimentReport:
    """Run every condition the config asks for; fully determined by ``config.seed``."""
    validate_config(config)
    started = time.perf_counter()
    datasets = build_datasets(config)
    gans = _GanPool(config, datasets)
    aggregators = [PLAINTEXT, SECURE] if config.full_matrix else [SECURE if config.aggregator == "secure" else PLAINTEXT]
    per_device: dict[str, dict[int, EerResult]] = {}
    transcript: list[dict] = []
    for mode, source in _cells(config):
        cell = _prepare_cell(config, datasets, mode, source, gans)
        try:
            results, trans = _run_cell(config, cell, aggregators, threads)
        except Exception as exc:
            raise RuntimeError(f"condition {mode}/{_SOURCE_TAG[source]}: {exc}") from exc
        per_device.update(results)
        transcript.extend(trans)
    conditions = {
        name: EvalReport(name, res, summarize([r.eer_percent for r in res.values()], config.n_bins))
        for name, res in per_device.items()
    }
    report = ExperimentReport(conditions, _ttests(conditions), transcript, config=config)
    report.duration_seconds = time.perf_counter() - started
    if write:
        write_report(report, output_dir or config.output_dir)
    return report


def _f(x: float) -> str:
    return repr(float(x))


def write_report(report: ExperimentReport, output_dir: str) -> list[str]:
    os.makedirs(output_dir, exist_ok=True)
    report.output_dir = output_dir

    def path(name: str) -> str:
        return os.path.join(output_dir, name)

    with open(path("config_echo.txt"), "w", encoding="utf-8") as fh:
        fh.write(dump_config(report.config))
    with open(path("transcript.jsonl"), "w", encoding="utf-8") as fh:
        for rec in report.transcript:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")
    with open(path("eer.csv"), "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["device_id", "condition", "eer_percent", "threshold", "n_genuine", "n_impostor"])
        for name, ev in report.conditions.items():
            for k in sorted(ev.results):
                r = ev.results[k]
                w.writerow([k, name, _f(r.eer_percent), _f(r.threshold), r.n_genuine, r.n_impostor])
    with open(path("summary.csv"), "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["condition", "min", "q1", "median", "q3", "max", "mean"])
        for name, ev in report.conditions.items():
            s = ev.summary
            w.writerow([name] + [_f(v) for v in (s.min, s.lower_quartile, s.median, s.upper_quartile, s.max, s.mean)])
    with open(path("histogram.csv"), "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["condition", "bin_left", "bin_right", "count"])
        for name, ev in report.conditions.items():
            edges, counts = ev.summary.bin_edges, ev.summary.counts
            for left, right, c in zip(edges[:-1], edges[1:], counts):
                w.writerow([name, _f(left), _f(right), c])
    with open(path("ttest.json"), "w", encoding="utf-8") as fh:
        json.dump(report.ttests, fh, indent=2, sort_keys=True)
        fh.write("\n")
    manifest = {
        "artifact_version": report.version,
        "conditions": list(report.conditions),
        "files": list(OUTPUT_FILES),
        "config": config_to_dict(report.config),
        "created_at": _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds"),
        "wall_clock_seconds": round(report.duration_seconds, 3),
    }
    with open(path("manifest.json"), "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    report.files = [path(name) for name in OUTPUT_FILES]
    return report.files


def load_report(path: str) -> ExperimentReport:
    """Rebuild per-condition EERs from a written report (a directory or its manifest.json)."""
    if not os.path.exists(path):
        raise FileNotFoundError(f"no report at {path}")
    directory = path if os.path.isdir(path) else os.path.dirname(os.path.abspath(path))
    eer_path = os.path.join(directory, "eer.csv")
    if not os.path.exists(eer_path):
        raise FileNotFoundError(f"no eer.csv next to {path}")
    per: dict[str, dict[int, EerResult]] = {}
    with open(eer_path, newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            per.setdefault(row["condition"], {})[int(row["device_id"])] = EerResult(
                float(row["eer_percent"]) / 100.0, float(row["threshold"]),
                int(row["n_genuine"]), int(row["n_impostor"]),
            )
    conditions = {
        name: EvalReport(name, res, summarize([r.eer_percent for r in res.values()])) for name, res in per.items()
    }
    return ExperimentReport(conditions, output_dir=directory)
