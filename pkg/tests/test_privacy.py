"""Structural privacy: aggregators only take model parameters and reports hold no raw samples."""

import re

import numpy as np
import pytest

from fedver import secagg
from fedver.config import CodecParams, ExperimentConfig
from fedver.data import SynthesisConfig
from fedver.experiment import OUTPUT_FILES, build_datasets, run_experiment
from fedver.federation import fedavg
from fedver.params import ParamVector, normalize_layout
from fedver.training import OptimizerConfig


def test_fedavg_rejects_raw_arrays():
    raw = np.random.default_rng(0).normal(size=(4, 3))
    with pytest.raises(TypeError):
        fedavg([(raw, 0.5), (raw, 0.5)])
    with pytest.raises(TypeError):
        fedavg([(raw[0], 1.0)])


def test_secure_aggregator_rejects_raw_arrays():
    layout = normalize_layout([("w", (3,))])
    codec = secagg.FixedPointCodec(1.0, 8, 2)
    raw = np.random.default_rng(1).normal(size=3)
    with pytest.raises(TypeError):
        secagg.aggregate(codec, [raw, raw], layout)
    with pytest.raises(TypeError):
        secagg.aggregate(codec, [ParamVector(raw, layout), ParamVector(raw, layout)], layout)


def _raw_strings(cfg):
    out = set()
    for ds in build_datasets(cfg):
        for v in np.concatenate([ds.train.ravel(), ds.test.ravel()]):
            out.add(repr(float(v)))
            out.add(f"{v:.10g}")
    return out


@pytest.mark.parametrize("aggregator", ["none", "secure"])
def test_emitted_files_hold_no_raw_samples(tmp_path, aggregator):
    cfg = ExperimentConfig(
        n_devices=4, aggregator=aggregator, n_rounds=1, impostors_per_device=20,
        codec=CodecParams(1.0, 12) if aggregator == "secure" else None,
        synthesis=SynthesisConfig(n_identities=4, samples_per_identity=20, dimension=5),
        optimizer=OptimizerConfig(epochs=3),
    )
    run_experiment(cfg, output_dir=str(tmp_path))
    raw = _raw_strings(cfg)
    number = re.compile(r"-?\d+\.\d+(?:e[-+]?\d+)?")
    for name in OUTPUT_FILES:
        tokens = set(number.findall((tmp_path / name).read_text()))
        leaked = tokens & raw
        assert not leaked, f"{name} contains raw sample values {sorted(leaked)[:3]}"
