"""Dense networks with hand-written backpropagation.

Two model families share one fully connected building block:

* :class:`MlpVerifier` maps a feature vector to a genuine-probability score
  (tanh hidden units, sigmoid output) and is trained with binary
  cross-entropy.
* :class:`Autoencoder` reconstructs its input through a linear bottleneck; after
  training only the encoder is used, to embed samples for cosine scoring.

Models are immutable values.  Training code works on raw ``float64`` arrays
through the ``objective`` methods and wraps the result in a new ParamVector.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property, lru_cache
from typing import Sequence

import numpy as np

from ._seeding import make_rng
from .params import LayoutEntry, LayoutError, ParamVector, layout_size

_ACTIVATIONS = ("tanh", "linear", "sigmoid")
# Largest/smallest doubles strictly inside (0, 1).
_SCORE_LO = float(np.nextafter(0.0, 1.0))
_SCORE_HI = float(np.nextafter(1.0, 0.0))


def sigmoid(z: np.ndarray) -> np.ndarray:
    z = np.asarray(z, dtype=np.float64)
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def _activate(name: str, z: np.ndarray) -> np.ndarray:
    if name == "tanh":
        return np.tanh(z)
    if name == "sigmoid":
        return sigmoid(z)
    return z


def _activation_slope(name: str, a: np.ndarray) -> np.ndarray | float:
    # Derivative expressed through the activation output.
    if name == "tanh":
        return 1.0 - a * a
    if name == "sigmoid":
        return a * (1.0 - a)
    return 1.0


@dataclass(frozen=True)
class DenseStack:
    """A chain of affine layers, each followed by its activation.

    Layer ``i`` owns entries ``{prefix}fc{i}.weight`` with shape ``(out, in)``
    and ``{prefix}fc{i}.bias`` with shape ``(out,)``.
    """

    dims: tuple[int, ...]
    activations: tuple[str, ...]
    prefix: str = ""

    def __post_init__(self) -> None:
        dims = tuple(int(d) for d in self.dims)
        if len(dims) < 2 or any(d < 1 for d in dims):
            raise ValueError(f"invalid layer dimensions {dims}")
        if len(self.activations) != len(dims) - 1:
            raise ValueError("need exactly one activation per layer")
        for act in self.activations:
            if act not in _ACTIVATIONS:
                raise ValueError(f"unknown activation {act!r}")
        object.__setattr__(self, "dims", dims)
        object.__setattr__(self, "activations", tuple(self.activations))

    @property
    def n_layers(self) -> int:
        return len(self.dims) - 1

    @cached_property
    def layout(self) -> tuple[LayoutEntry, ...]:
        out = []
        for i, (d_in, d_out) in enumerate(zip(self.dims[:-1], self.dims[1:])):
            out.append((f"{self.prefix}fc{i}.weight", (d_out, d_in)))
            out.append((f"{self.prefix}fc{i}.bias", (d_out,)))
        return tuple(out)

    @cached_property
    def n_params(self) -> int:
        return layout_size(self.layout)

    @cached_property
    def _offsets(self) -> list[tuple[slice, tuple[int, int], slice]]:
        out = []
        offset = 0
        for d_in, d_out in zip(self.dims[:-1], self.dims[1:]):
            w = slice(offset, offset + d_out * d_in)
            offset += d_out * d_in
            b = slice(offset, offset + d_out)
            offset += d_out
            out.append((w, (d_out, d_in), b))
        return out

    @cached_property
    def weight_mask(self) -> np.ndarray:
        mask = np.zeros(self.n_params)
        for w, _, _ in self._offsets:
            mask[w] = 1.0
        return mask

    def unpack(self, values: np.ndarray) -> list[tuple[np.ndarray, np.ndarray]]:
        return [(values[w].reshape(shape), values[b]) for w, shape, b in self._offsets]

    def forward(self, values: np.ndarray, x: np.ndarray) -> tuple[np.ndarray, list[np.ndarray]]:
        """Return the output and the per-layer activations needed by :meth:`backward`."""
        h = np.atleast_2d(np.asarray(x, dtype=np.float64))
        if h.shape[1] != self.dims[0]:
            raise ValueError(f"input dimension {h.shape[1]} does not match layer input {self.dims[0]}")
        acts = [h]
        for (W, b), act in zip(self.unpack(values), self.activations):
            h = _activate(act, h @ W.T + b)
            acts.append(h)
        return h, acts

    def logits(self, values: np.ndarray, x: np.ndarray) -> tuple[np.ndarray, list[np.ndarray]]:
        """Like :meth:`forward` but the last layer's activation is not applied."""
        h = np.atleast_2d(np.asarray(x, dtype=np.float64))
        if h.shape[1] != self.dims[0]:
            raise ValueError(f"input dimension {h.shape[1]} does not match layer input {self.dims[0]}")
        acts = [h]
        layers = self.unpack(values)
        for i, ((W, b), act) in enumerate(zip(layers, self.activations)):
            z = h @ W.T + b
            h = z if i == self.n_layers - 1 else _activate(act, z)
            acts.append(h)
        return h, acts

    def backward(
        self, values: np.ndarray, acts: list[np.ndarray], d_pre_out: np.ndarray
    ) -> tuple[np.ndarray, np.ndarray]:
        """Backpropagate a gradient taken w.r.t. the last layer's pre-activation.

        Returns ``(grad_params, grad_input)``.
        """
        grad = np.zeros(self.n_params)
        dz = np.asarray(d_pre_out, dtype=np.float64)
        layers = self.unpack(values)
        d_in = dz
        for i in reversed(range(self.n_layers)):
            W, _ = layers[i]
            w_sl, shape, b_sl = self._offsets[i]
            grad[w_sl] = (dz.T @ acts[i]).reshape(-1)
            grad[b_sl] = dz.sum(axis=0)
            d_in = dz @ W
            if i > 0:
                dz = d_in * _activation_slope(self.activations[i - 1], acts[i])
        return grad, d_in


def init_params(
    layout: Sequence[LayoutEntry], scheme: str = "uniform_scaled", seed: int = 0
) -> ParamVector:
    """Initialize a parameter vector.

    ``uniform_scaled`` draws each 2-D ``*.weight`` entry uniformly from
    ``±sqrt(6 / (fan_in + fan_out))``; every other entry starts at zero.
    """
    layout = tuple(layout)
    if scheme not in ("zeros", "uniform_scaled"):
        raise ValueError(f"unknown initialization scheme {scheme!r}")
    values = np.zeros(layout_size(layout))
    if scheme == "uniform_scaled":
        rng = make_rng(seed, "init-params")
        offset = 0
        for name, shape in layout:
            size = math.prod(shape)
            if name.endswith("weight") and len(shape) == 2:
                fan_out, fan_in = shape
                limit = math.sqrt(6.0 / (fan_in + fan_out))
                values[offset : offset + size] = rng.uniform(-limit, limit, size)
            offset += size
    return ParamVector(values, layout)


def _check_params(params: ParamVector, layout: tuple[LayoutEntry, ...]) -> None:
    if not isinstance(params, ParamVector):
        raise TypeError(f"expected ParamVector, got {type(params).__name__}")
    if params.layout != layout:
        raise LayoutError("parameter layout does not match the model architecture")


@dataclass(frozen=True, eq=False)
class MlpVerifier:
    layer_dims: tuple[int, ...]
    params: ParamVector
    kind = "supervised"

    def __post_init__(self) -> None:
        dims = tuple(int(d) for d in self.layer_dims)
        if dims[-1] != 1:
            raise ValueError("verifier output dimension must be 1")
        object.__setattr__(self, "layer_dims", dims)
        _check_params(self.params, self.stack.layout)

    @classmethod
    def create(
        cls, layer_dims: Sequence[int], scheme: str = "uniform_scaled", seed: int = 0
    ) -> "MlpVerifier":
        stack = _verifier_stack(tuple(layer_dims))
        return cls(tuple(layer_dims), init_params(stack.layout, scheme, seed))

    @property
    def stack(self) -> DenseStack:
        return _verifier_stack(self.layer_dims)

    @property
    def layout(self) -> tuple[LayoutEntry, ...]:
        return self.stack.layout

    @property
    def input_dim(self) -> int:
        return self.layer_dims[0]

    def with_params(self, params: ParamVector) -> "MlpVerifier":
        return MlpVerifier(self.layer_dims, params)

    def scores(self, x: np.ndarray, values: np.ndarray | None = None) -> np.ndarray:
        values = self.params.values if values is None else values
        z, _ = self.stack.logits(values, x)
        return np.clip(sigmoid(z[:, 0]), _SCORE_LO, _SCORE_HI)

    def objective(
        self,
        values: np.ndarray,
        x: np.ndarray,
        y: np.ndarray,
        weight_decay: float = 0.0,
        class_balanced: bool = True,
    ) -> tuple[float, np.ndarray]:
        """Binary cross-entropy plus ``weight_decay/2 * ||weights||^2``.

        With ``class_balanced`` each label class present in the batch
        contributes equally, whatever its sample count.
        """
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        y = np.asarray(y, dtype=np.float64).reshape(-1)
        if x.shape[0] == 0:
            raise ValueError("empty batch")
        if y.shape[0] != x.shape[0]:
            raise ValueError("labels and samples differ in count")
        if not np.all((y == 0.0) | (y == 1.0)):
            raise ValueError("labels must be 0 (impostor) or 1 (genuine)")
        stack = self.stack
        z, acts = stack.logits(values, x)
        z = z[:, 0]
        if class_balanced:
            n_pos = float(np.sum(y))
            n_neg = y.size - n_pos
            present = (n_pos > 0) + (n_neg > 0)
            w = np.where(y == 1.0, 1.0 / max(n_pos, 1.0), 1.0 / max(n_neg, 1.0)) / present
        else:
            w = np.full(y.size, 1.0 / y.size)
        # softplus(z) - y*z is the cross-entropy of sigmoid(z) against y.
        loss = float(np.sum(w * (np.logaddexp(0.0, z) - y * z)))
        d_z = (w * (sigmoid(z) - y))[:, None]
        grad, _ = stack.backward(values, acts, d_z)
        mask = stack.weight_mask
        loss += 0.5 * weight_decay * float(np.sum(mask * values * values))
        grad += weight_decay * mask * values
        return loss, grad


@lru_cache(maxsize=None)
def _verifier_stack(dims: tuple[int, ...]) -> DenseStack:
    return DenseStack(dims, ("tanh",) * (len(dims) - 2) + ("sigmoid",))


@lru_cache(maxsize=None)
def _coder_stack(dims: tuple[int, ...], prefix: str) -> DenseStack:
    return DenseStack(dims, ("tanh",) * (len(dims) - 2) + ("linear",), prefix)


@dataclass(frozen=True, eq=False)
class Autoencoder:
    """Encoder ``d -> ... -> bottleneck`` and its mirror-image decoder.

    Hidden layers use tanh; the bottleneck and the reconstruction are linear.
    """

    encoder_dims: tuple[int, ...]
    params: ParamVector
    kind = "unsupervised"

    def __post_init__(self) -> None:
        object.__setattr__(self, "encoder_dims", tuple(int(d) for d in self.encoder_dims))
        _check_params(self.params, self.layout)

    @classmethod
    def create(
        cls, encoder_dims: Sequence[int], scheme: str = "uniform_scaled", seed: int = 0
    ) -> "Autoencoder":
        dims = tuple(encoder_dims)
        layout = _coder_stack(dims, "enc.").layout + _coder_stack(dims[::-1], "dec.").layout
        return cls(dims, init_params(layout, scheme, seed))

    @property
    def decoder_dims(self) -> tuple[int, ...]:
        return self.encoder_dims[::-1]

    @property
    def encoder(self) -> DenseStack:
        return _coder_stack(self.encoder_dims, "enc.")

    @property
    def decoder(self) -> DenseStack:
        return _coder_stack(self.decoder_dims, "dec.")

    @property
    def layout(self) -> tuple[LayoutEntry, ...]:
        return self.encoder.layout + self.decoder.layout

    @property
    def input_dim(self) -> int:
        return self.encoder_dims[0]

    @property
    def bottleneck(self) -> int:
        return self.encoder_dims[-1]

    def with_params(self, params: ParamVector) -> "Autoencoder":
        return Autoencoder(self.encoder_dims, params)

    def _split(self, values: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        n_enc = self.encoder.n_params
        return values[:n_enc], values[n_enc:]

    def embed(self, x: np.ndarray, values: np.ndarray | None = None) -> np.ndarray:
        values = self.params.values if values is None else values
        enc, _ = self._split(values)
        out, _ = self.encoder.forward(enc, x)
        return out

    def decode(self, h: np.ndarray, values: np.ndarray | None = None) -> np.ndarray:
        values = self.params.values if values is None else values
        _, dec = self._split(values)
        out, _ = self.decoder.forward(dec, h)
        return out

    def reconstruct(self, x: np.ndarray, values: np.ndarray | None = None) -> np.ndarray:
        return self.decode(self.embed(x, values), values)

    def objective(
        self,
        values: np.ndarray,
        x: np.ndarray,
        y: np.ndarray | None = None,
        weight_decay: float = 0.0,
        class_balanced: bool = True,
    ) -> tuple[float, np.ndarray]:
        """Mean per-sample reconstruction MSE plus weight decay; labels are ignored."""
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        if x.shape[0] == 0:
            raise ValueError("empty batch")
        enc_stack, dec_stack = self.encoder, self.decoder
        enc, dec = self._split(values)
        h, enc_acts = enc_stack.forward(enc, x)
        x_hat, dec_acts = dec_stack.forward(dec, h)
        diff = x_hat - x
        loss = float(np.mean(diff * diff))
        d_out = 2.0 * diff / diff.size
        g_dec, d_h = dec_stack.backward(dec, dec_acts, d_out)
        g_enc, _ = enc_stack.backward(enc, enc_acts, d_h)
        grad = np.concatenate([g_enc, g_dec])
        mask = np.concatenate([enc_stack.weight_mask, dec_stack.weight_mask])
        loss += 0.5 * weight_decay * float(np.sum(mask * values * values))
        grad += weight_decay * mask * values
        return loss, grad


def forward_verifier(model: MlpVerifier, x: np.ndarray) -> float:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise ValueError("forward_verifier scores a single feature vector")
    return float(model.scores(x[None, :])[0])


def _wrap(model, values: np.ndarray) -> ParamVector:
    return ParamVector(values, model.layout)


def loss_and_gradient_verifier(
    model: MlpVerifier,
    x: np.ndarray,
    y: np.ndarray,
    weight_decay: float = 0.0,
    class_balanced: bool = True,
) -> tuple[float, ParamVector]:
    loss, grad = model.objective(model.params.values, x, y, weight_decay, class_balanced)
    return loss, _wrap(model, grad)


def loss_and_gradient_autoencoder(
    model: Autoencoder, x: np.ndarray, weight_decay: float = 0.0
) -> tuple[float, ParamVector]:
    loss, grad = model.objective(model.params.values, x, weight_decay=weight_decay)
    return loss, _wrap(model, grad)


def encode(model: Autoencoder, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        return model.embed(x[None, :])[0]
    return model.embed(x)
