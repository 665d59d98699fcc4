"""Small MLP GAN used to synthesize impostor feature vectors on-device."""

from __future__ import annotations

import struct
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from ._seeding import derive_seed, make_rng
from .nn import DenseStack, init_params, sigmoid
from .params import ParamVector

_HEADER = b"FVGN"
_VERSION = 1


@dataclass(frozen=True)
class GanTrainConfig:
    iterations: int = 2000
    batch_size: int = 64
    lr_generator: float = 0.02
    lr_discriminator: float = 0.02
    disc_steps_per_gen_step: int = 1
    momentum: float = 0.5
    seed: int = 0

    def __post_init__(self) -> None:
        if self.iterations < 0:
            raise ValueError("iterations must be >= 0")
        if self.batch_size < 1 or self.disc_steps_per_gen_step < 1:
            raise ValueError("batch_size and disc_steps_per_gen_step must be positive")
        if not (self.lr_generator > 0 and self.lr_discriminator > 0):
            raise ValueError("learning rates must be positive")
        if not 0.0 <= self.momentum < 1.0:
            raise ValueError("momentum must lie in [0, 1)")


def generator_stack(latent_dim: int, hidden: Sequence[int], data_dim: int) -> DenseStack:
    dims = (latent_dim, *hidden, data_dim)
    return DenseStack(dims, ("tanh",) * len(hidden) + ("linear",), "gen.")


def discriminator_stack(data_dim: int, hidden: Sequence[int]) -> DenseStack:
    dims = (data_dim, *hidden, 1)
    return DenseStack(dims, ("tanh",) * len(hidden) + ("sigmoid",), "disc.")


@dataclass(frozen=True, eq=False)
class GanModel:
    data_dim: int
    latent_dim: int
    generator_hidden: tuple[int, ...]
    discriminator_hidden: tuple[int, ...]
    generator_params: ParamVector
    discriminator_params: ParamVector
    d_loss_trace: tuple[float, ...] = ()
    g_loss_trace: tuple[float, ...] = ()

    def __post_init__(self) -> None:
        if self.generator_params.layout != self.generator.layout:
            raise ValueError("generator parameters do not match the architecture")
        if self.discriminator_params.layout != self.discriminator.layout:
            raise ValueError("discriminator parameters do not match the architecture")

    @property
    def generator(self) -> DenseStack:
        return generator_stack(self.latent_dim, self.generator_hidden, self.data_dim)

    @property
    def discriminator(self) -> DenseStack:
        return discriminator_stack(self.data_dim, self.discriminator_hidden)

    def generate(self, z: np.ndarray) -> np.ndarray:
        out, _ = self.generator.forward(self.generator_params.values, z)
        return out

    def discriminate(self, x: np.ndarray) -> np.ndarray:
        logits, _ = self.discriminator.logits(self.discriminator_params.values, x)
        return sigmoid(logits[:, 0])

    def same_weights(self, other: "GanModel") -> bool:
        return (
            self.generator_params == other.generator_params
            and self.discriminator_params == other.discriminator_params
        )

    def to_bytes(self) -> bytes:
        gh, dh = self.generator_hidden, self.discriminator_hidden
        header = struct.pack(
            f"<4sHIIB{len(gh)}IB{len(dh)}I",
            _HEADER, _VERSION, self.data_dim, self.latent_dim, len(gh), *gh, len(dh), *dh,
        )
        return header + self.generator_params.to_bytes() + self.discriminator_params.to_bytes()

    @classmethod
    def from_bytes(cls, data: bytes) -> "GanModel":
        magic, version, data_dim, latent_dim, n_gh = struct.unpack_from("<4sHIIB", data, 0)
        if magic != _HEADER or version != _VERSION:
            raise ValueError("not a serialized GanModel")
        offset = struct.calcsize("<4sHIIB")
        gh = struct.unpack_from(f"<{n_gh}I", data, offset)
        offset += 4 * n_gh
        (n_dh,) = struct.unpack_from("<B", data, offset)
        offset += 1
        dh = struct.unpack_from(f"<{n_dh}I", data, offset)
        offset += 4 * n_dh
        gen, offset = ParamVector.read_from(data, offset)
        disc, _ = ParamVector.read_from(data, offset)
        return cls(data_dim, latent_dim, tuple(gh), tuple(dh), gen, disc)


def init_gan(
    data_dim: int,
    latent_dim: int = 8,
    generator_hidden: Sequence[int] = (32,),
    discriminator_hidden: Sequence[int] = (32,),
    seed: int = 0,
) -> GanModel:
    gen = generator_stack(latent_dim, generator_hidden, data_dim)
    disc = discriminator_stack(data_dim, discriminator_hidden)
    return GanModel(
        data_dim,
        latent_dim,
        tuple(generator_hidden),
        tuple(discriminator_hidden),
        init_params(gen.layout, "uniform_scaled", derive_seed(seed, "gan", "generator")),
        init_params(disc.layout, "uniform_scaled", derive_seed(seed, "gan", "discriminator")),
    )


def _disc_objective(stack: DenseStack, values: np.ndarray, real: np.ndarray, fake: np.ndarray):
    # -mean log D(real) - mean log(1 - D(fake)), written with softplus on logits.
    x = np.vstack([real, fake])
    logits, acts = stack.logits(values, x)
    z = logits[:, 0]
    n_real = real.shape[0]
    y = np.zeros(z.size)
    y[:n_real] = 1.0
    w = np.where(y == 1.0, 1.0 / n_real, 1.0 / fake.shape[0])
    loss = float(np.sum(w * (np.logaddexp(0.0, z) - y * z)))
    grad, _ = stack.backward(values, acts, (w * (sigmoid(z) - y))[:, None])
    return loss, grad


def discriminator_loss_and_gradient(
    model: GanModel, real: np.ndarray, fake: np.ndarray
) -> tuple[float, ParamVector]:
    loss, grad = _disc_objective(model.discriminator, model.discriminator_params.values, real, fake)
    return loss, model.discriminator_params.with_values(grad)


def generator_loss_and_gradient(model: GanModel, z: np.ndarray) -> tuple[float, ParamVector]:
    """Non-saturating generator loss ``-mean log D(G(z))`` and its gradient."""
    loss, grad = _gen_objective(model, model.generator_params.values, model.discriminator_params.values, z)
    return loss, model.generator_params.with_values(grad)


def _gen_objective(model: GanModel, g_values: np.ndarray, d_values: np.ndarray, z: np.ndarray):
    gen, disc = model.generator, model.discriminator
    fake, g_acts = gen.forward(g_values, z)
    logits, d_acts = disc.logits(d_values, fake)
    s = logits[:, 0]
    n = s.size
    loss = float(np.mean(np.logaddexp(0.0, -s)))
    d_s = ((sigmoid(s) - 1.0) / n)[:, None]
    _, d_fake = disc.backward(d_values, d_acts, d_s)
    g_grad, _ = gen.backward(g_values, g_acts, d_fake)
    return loss, g_grad


def train_gan(
    data: np.ndarray,
    config: GanTrainConfig,
    latent_dim: int = 8,
    generator_hidden: Sequence[int] = (32,),
    discriminator_hidden: Sequence[int] = (32,),
) -> GanModel:
    """Alternating SGD (with momentum) on the standard GAN game.

    The discriminator minimizes binary cross-entropy on real vs. generated
    batches; the generator uses the non-saturating loss.
    """
    data = np.atleast_2d(np.asarray(data, dtype=np.float64))
    if data.shape[0] < config.batch_size:
        raise ValueError(
            f"GAN training needs at least batch_size={config.batch_size} samples, got {data.shape[0]}"
        )
    model = init_gan(data.shape[1], latent_dim, generator_hidden, discriminator_hidden, config.seed)
    if config.iterations == 0:
        return model
    gen, disc = model.generator, model.discriminator
    g = np.array(model.generator_params.values)
    d = np.array(model.discriminator_params.values)
    vg = np.zeros_like(g)
    vd = np.zeros_like(d)
    rng = make_rng(config.seed, "gan", "train")
    n = data.shape[0]
    d_trace, g_trace = [], []
    for _ in range(config.iterations):
        for _ in range(config.disc_steps_per_gen_step):
            real = data[rng.choice(n, config.batch_size, replace=False)]
            z = rng.standard_normal((config.batch_size, latent_dim))
            fake, _ = gen.forward(g, z)
            d_loss, d_grad = _disc_objective(disc, d, real, fake)
            vd = config.momentum * vd + d_grad
            d = d - config.lr_discriminator * vd
        z = rng.standard_normal((config.batch_size, latent_dim))
        g_loss, g_grad = _gen_objective(model, g, d, z)
        vg = config.momentum * vg + g_grad
        g = g - config.lr_generator * vg
        d_trace.append(d_loss)
        g_trace.append(g_loss)
    if not (np.all(np.isfinite(g)) and np.all(np.isfinite(d))):
        raise FloatingPointError("GAN training diverged")
    return replace(
        model,
        generator_params=model.generator_params.with_values(g),
        discriminator_params=model.discriminator_params.with_values(d),
        d_loss_trace=tuple(d_trace),
        g_loss_trace=tuple(g_trace),
    )


def gan_sample(model: GanModel, count: int, seed: int) -> np.ndarray:
    """Draw ``count`` vectors ``G(z)`` with ``z`` standard normal."""
    if count < 1:
        raise ValueError("count must be >= 1")
    z = make_rng(seed, "gan", "sample").standard_normal((count, model.latent_dim))
    return model.generate(z)
