"""Experiment configuration: ``key = value`` lines with dotted section prefixes.

Example::

    # minimal
    mode = supervised
    seed = 7
    aggregator = secure
    codec.bits = 8

Blank lines and ``#`` comments are ignored.  Unknown or repeated keys are
errors.  Every key and its default is listed in ``KEYS``.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, replace
from typing import Any, Callable

from .data import ConfigurationError, SynthesisConfig
from .gan import GanTrainConfig
from .training import OptimizerConfig

MODES = ("supervised", "unsupervised")
AGGREGATORS = ("none", "secure")
IMPOSTOR_SOURCES = ("cross_identity", "gan", "none")
WEIGHT_SCHEMES = ("proportional", "uniform")


class ConfigError(ValueError):
    """Configuration could not be parsed or validated."""

    def __init__(self, message: str, key: str | None = None, line: int | None = None):
        where = f"line {line}: " if line is not None else ""
        super().__init__(where + message)
        self.key = key
        self.line = line


@dataclass(frozen=True)
class CodecParams:
    clip_range: float = 1.0
    bits: int = 16


@dataclass(frozen=True)
class GanSettings:
    train: GanTrainConfig = GanTrainConfig()
    latent_dim: int = 8
    hidden: tuple[int, ...] = (32,)
    per_device: bool = False


@dataclass(frozen=True)
class ExperimentConfig:
    mode: str = "supervised"
    aggregator: str = "none"
    impostor_source: str = "cross_identity"
    n_devices: int = 20
    n_rounds: int = 3
    seed: int = 0
    weight_scheme: str = "proportional"
    output_dir: str = "fedver-out"
    full_matrix: bool = False
    pooled_baseline: bool = True
    impostors_per_device: int = 100
    eval_impostors: int = 0
    split_ratio: float = 0.9
    validation_fraction: float = 0.1
    embeddings_path: str = ""
    hidden: tuple[int, ...] = (32,)
    encoder_hidden: tuple[int, ...] = (16,)
    bottleneck: int = 8
    n_bins: int = 10
    synthesis: SynthesisConfig = SynthesisConfig()
    optimizer: OptimizerConfig = OptimizerConfig(epochs=30)
    codec: CodecParams | None = None
    gan: GanSettings = GanSettings()

    @property
    def runs_secure(self) -> bool:
        return self.aggregator == "secure" or self.full_matrix


def _parse_bool(text: str) -> bool:
    low = text.lower()
    if low in ("true", "yes", "1", "on"):
        return True
    if low in ("false", "no", "0", "off"):
        return False
    raise ValueError(f"expected a boolean, got {text!r}")


def _parse_dims(text: str) -> tuple[int, ...]:
    text = text.strip()
    if not text:
        return ()
    dims = tuple(int(p) for p in text.split(","))
    if any(d < 1 for d in dims):
        raise ValueError("layer sizes must be positive")
    return dims


def _fmt(value: Any) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ",".join(str(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _choice(options: tuple[str, ...]) -> Callable[[str], str]:
    def parse(text: str) -> str:
        if text not in options:
            raise ValueError(f"expected one of {', '.join(options)}; got {text!r}")
        return text

    return parse


# key -> (path into ExperimentConfig, parser)
KEYS: dict[str, tuple[tuple[str, ...], Callable[[str], Any]]] = {
    "mode": (("mode",), _choice(MODES)),
    "aggregator": (("aggregator",), _choice(AGGREGATORS)),
    "impostor_source": (("impostor_source",), _choice(IMPOSTOR_SOURCES)),
    "n_devices": (("n_devices",), int),
    "n_rounds": (("n_rounds",), int),
    "seed": (("seed",), int),
    "weight_scheme": (("weight_scheme",), _choice(WEIGHT_SCHEMES)),
    "output_dir": (("output_dir",), str),
    "full_matrix": (("full_matrix",), _parse_bool),
    "pooled_baseline": (("pooled_baseline",), _parse_bool),
    "impostors_per_device": (("impostors_per_device",), int),
    "eval_impostors": (("eval_impostors",), int),
    "split_ratio": (("split_ratio",), float),
    "validation_fraction": (("validation_fraction",), float),
    "embeddings_path": (("embeddings_path",), str),
    "model.hidden": (("hidden",), _parse_dims),
    "model.encoder_hidden": (("encoder_hidden",), _parse_dims),
    "model.bottleneck": (("bottleneck",), int),
    "eval.n_bins": (("n_bins",), int),
    "synthesis.n_identities": (("synthesis", "n_identities"), int),
    "synthesis.samples_per_identity": (("synthesis", "samples_per_identity"), int),
    "synthesis.dimension": (("synthesis", "dimension"), int),
    "synthesis.cluster_center_scale": (("synthesis", "cluster_center_scale"), float),
    "synthesis.within_cluster_stddev": (("synthesis", "within_cluster_stddev"), float),
    "optimizer.momentum": (("optimizer", "momentum"), float),
    "optimizer.weight_decay": (("optimizer", "weight_decay"), float),
    "optimizer.lr_initial": (("optimizer", "lr_initial"), float),
    "optimizer.lr_final": (("optimizer", "lr_final"), float),
    "optimizer.epochs": (("optimizer", "epochs"), int),
    "optimizer.batch_size": (("optimizer", "batch_size"), int),
    "optimizer.patience": (("optimizer", "patience"), int),
    "optimizer.class_balanced": (("optimizer", "class_balanced"), _parse_bool),
    "codec.clip_range": (("codec", "clip_range"), float),
    "codec.bits": (("codec", "bits"), int),
    "gan.iterations": (("gan", "train", "iterations"), int),
    "gan.batch_size": (("gan", "train", "batch_size"), int),
    "gan.lr_generator": (("gan", "train", "lr_generator"), float),
    "gan.lr_discriminator": (("gan", "train", "lr_discriminator"), float),
    "gan.disc_steps_per_gen_step": (("gan", "train", "disc_steps_per_gen_step"), int),
    "gan.momentum": (("gan", "train", "momentum"), float),
    "gan.latent_dim": (("gan", "latent_dim"), int),
    "gan.hidden": (("gan", "hidden"), _parse_dims),
    "gan.per_device": (("gan", "per_device"), _parse_bool),
}


def _get(obj: Any, path: tuple[str, ...]) -> Any:
    for name in path:
        obj = getattr(obj, name)
    return obj


def _apply(obj: Any, updates: dict[tuple[str, ...], Any]) -> Any:
    # One replace() per object, so cross-field checks see the final values only.
    direct: dict[str, Any] = {}
    nested: dict[str, dict[tuple[str, ...], Any]] = {}
    for path, value in updates.items():
        if len(path) == 1:
            direct[path[0]] = value
        else:
            nested.setdefault(path[0], {})[path[1:]] = value
    for name, sub in nested.items():
        direct[name] = _apply(getattr(obj, name), sub)
    return replace(obj, **direct)


def parse_config(text: str) -> ExperimentConfig:
    values: dict[str, tuple[Any, int]] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"expected 'key = value', got {line!r}", line=lineno)
        key, _, val = line.partition("=")
        key, val = key.strip(), val.strip()
        if key not in KEYS:
            raise ConfigError(f"unknown key {key!r}", key=key, line=lineno)
        if key in values:
            raise ConfigError(f"duplicate key {key!r}", key=key, line=lineno)
        try:
            values[key] = (KEYS[key][1](val), lineno)
        except ValueError as exc:
            raise ConfigError(f"{key}: {exc}", key=key, line=lineno) from None
    if "mode" not in values:
        raise ConfigError("missing required key 'mode'", key="mode")
    if "seed" not in values:
        raise ConfigError("missing required key 'seed'", key="seed")
    has_codec = any(k.startswith("codec.") for k in values)
    cfg = ExperimentConfig(codec=CodecParams() if has_codec else None)
    try:
        cfg = _apply(cfg, {KEYS[key][0]: value for key, (value, _) in values.items()})
    except (ValueError, ConfigurationError) as exc:
        raise ConfigError(str(exc)) from None
    if "synthesis.n_identities" not in values:
        cfg = replace(cfg, synthesis=replace(cfg.synthesis, n_identities=cfg.n_devices))
    if cfg.mode == "unsupervised":
        # The autoencoder never trains on impostors; evaluation still draws cross-identity trials.
        cfg = replace(cfg, impostor_source="none")
    validate_config(cfg)
    return cfg


def validate_config(cfg: ExperimentConfig) -> None:
    if cfg.mode not in MODES:
        raise ConfigError(f"mode must be one of {MODES}", key="mode")
    if cfg.aggregator not in AGGREGATORS:
        raise ConfigError(f"aggregator must be one of {AGGREGATORS}", key="aggregator")
    if cfg.impostor_source not in IMPOSTOR_SOURCES:
        raise ConfigError(f"impostor_source must be one of {IMPOSTOR_SOURCES}", key="impostor_source")
    if cfg.weight_scheme not in WEIGHT_SCHEMES:
        raise ConfigError(f"weight_scheme must be one of {WEIGHT_SCHEMES}", key="weight_scheme")
    if cfg.runs_secure and cfg.codec is None:
        raise ConfigError("secure aggregation requires a codec block (codec.bits / codec.clip_range)", key="codec")
    if not cfg.runs_secure and cfg.codec is not None:
        raise ConfigError("codec settings given but no secure aggregation is run", key="codec")
    if cfg.codec is not None:
        if cfg.codec.bits < 1 or not cfg.codec.clip_range > 0:
            raise ConfigError("codec.bits must be >= 1 and codec.clip_range > 0", key="codec")
    if cfg.n_devices < 1:
        raise ConfigError("n_devices must be >= 1", key="n_devices")
    if cfg.n_rounds < 1:
        raise ConfigError("n_rounds must be >= 1", key="n_rounds")
    if cfg.impostors_per_device < 1:
        raise ConfigError("impostors_per_device must be >= 1", key="impostors_per_device")
    if cfg.eval_impostors < 0:
        raise ConfigError("eval_impostors must be >= 0 (0 means: match the genuine trial count)", key="eval_impostors")
    if not 0.0 < cfg.split_ratio < 1.0:
        raise ConfigError("split_ratio must lie in (0, 1)", key="split_ratio")
    if not 0.0 <= cfg.validation_fraction < 1.0:
        raise ConfigError("validation_fraction must lie in [0, 1)", key="validation_fraction")
    if cfg.bottleneck < 1:
        raise ConfigError("model.bottleneck must be >= 1", key="model.bottleneck")
    if cfg.n_bins < 1:
        raise ConfigError("eval.n_bins must be >= 1", key="eval.n_bins")
    if not cfg.embeddings_path:
        try:
            cfg.synthesis.validate()
        except ConfigurationError as exc:
            raise ConfigError(str(exc), key=f"synthesis.{exc.field}") from None
        if cfg.synthesis.n_identities < max(cfg.n_devices, 2):
            raise ConfigError("synthesis.n_identities must be >= n_devices", key="synthesis.n_identities")


def load_config(path: str | os.PathLike) -> ExperimentConfig:
    path = os.fspath(path)
    if not os.path.exists(path):
        raise ConfigError(f"config file not found: {path}")
    with open(path, encoding="utf-8") as fh:
        return parse_config(fh.read())


def dump_config(cfg: ExperimentConfig) -> str:
    """Serialize every key, in ``KEYS`` order, so that ``parse_config`` reproduces ``cfg``."""
    lines = []
    for key, (path, _) in KEYS.items():
        if path[0] == "codec" and cfg.codec is None:
            continue
        lines.append(f"{key} = {_fmt(_get(cfg, path))}")
    return "\n".join(lines) + "\n"


def config_to_dict(cfg: ExperimentConfig) -> dict[str, Any]:
    out: dict[str, Any] = {}
    for key, (path, _) in KEYS.items():
        if path[0] == "codec" and cfg.codec is None:
            continue
        value = _get(cfg, path)
        out[key] = list(value) if isinstance(value, tuple) else value
    return out
