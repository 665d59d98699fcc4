import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fedver.nn import (
    Autoencoder,
    MlpVerifier,
    encode,
    forward_verifier,
    init_params,
    loss_and_gradient_autoencoder,
    loss_and_gradient_verifier,
)
from fedver.params import ParamVector

from helpers import central_difference, max_relative_error


def _set(model, **entries):
    values = np.zeros(len(model.params))
    offset = 0
    for name, shape in model.layout:
        size = math.prod(shape)
        if name in entries:
            values[offset : offset + size] = np.asarray(entries[name], dtype=float).reshape(-1)
        offset += size
    return model.with_params(ParamVector(values, model.layout))


def test_zero_params_score_half():
    m = MlpVerifier.create((4, 3, 1), scheme="zeros")
    assert forward_verifier(m, np.array([1.0, -2.0, 3.0, 0.5])) == 0.5


def test_single_layer_at_origin():
    m = _set(MlpVerifier.create((1, 1), scheme="zeros"), **{"fc0.weight": [[1.0]]})
    assert forward_verifier(m, np.array([0.0])) == 0.5


def test_hand_computed_forward():
    m = _set(
        MlpVerifier.create((2, 1, 1), scheme="zeros"),
        **{"fc0.weight": [[0.5, -0.25]], "fc0.bias": [0.1], "fc1.weight": [[2.0]], "fc1.bias": [-0.3]},
    )
    h = math.tanh(0.5 * 1 + (-0.25) * (-1) + 0.1)
    expected = 1 / (1 + math.exp(-(2.0 * h - 0.3)))
    assert forward_verifier(m, np.array([1.0, -1.0])) == pytest.approx(expected, abs=1e-15)


def test_dimension_mismatch():
    m = MlpVerifier.create((3, 1))
    with pytest.raises(ValueError):
        forward_verifier(m, np.zeros(2))


def test_output_dim_must_be_one():
    with pytest.raises(ValueError):
        MlpVerifier.create((3, 2))


def test_scores_stay_inside_unit_interval():
    m = _set(MlpVerifier.create((1, 1), scheme="zeros"), **{"fc0.weight": [[1e6]]})
    s = m.scores(np.array([[1.0], [-1.0]]))
    assert 0.0 < s[1] < s[0] < 1.0


def test_saturated_correct_predictions():
    m = _set(MlpVerifier.create((1, 1), scheme="zeros"), **{"fc0.weight": [[50.0]]})
    x = np.array([[1.0], [2.0], [-1.0], [-3.0]])
    y = np.array([1, 1, 0, 0])
    loss, _ = loss_and_gradient_verifier(m, x, y)
    assert loss < 0.01


def test_verifier_gradient_small_case():
    rng = np.random.default_rng(0)
    m = MlpVerifier.create((2, 1, 1), seed=3)
    x, y = rng.normal(size=(3, 2)), np.array([1.0, 0.0, 1.0])
    _, grad = loss_and_gradient_verifier(m, x, y, weight_decay=0.01)
    numeric = central_difference(lambda v: m.objective(v, x, y, 0.01)[0], m.params.values)
    assert max_relative_error(grad.values, numeric) < 1e-4


@pytest.mark.parametrize("balanced", [True, False])
def test_duplicated_batch_same_loss_and_grad(balanced):
    rng = np.random.default_rng(1)
    m = MlpVerifier.create((3, 4, 1), seed=1)
    x, y = rng.normal(size=(5, 3)), np.array([1.0, 0, 0, 1, 0])
    l1, g1 = loss_and_gradient_verifier(m, x, y, class_balanced=balanced)
    l2, g2 = loss_and_gradient_verifier(m, np.vstack([x, x]), np.concatenate([y, y]), class_balanced=balanced)
    assert abs(l1 - l2) <= 1e-12
    assert np.max(np.abs(g1.values - g2.values)) <= 1e-12


def test_class_balancing_weights_classes_equally():
    m = MlpVerifier.create((2, 1), scheme="zeros")
    x = np.zeros((4, 2))
    # With zero params every per-sample loss is log 2, whatever the weighting.
    loss, _ = loss_and_gradient_verifier(m, x, np.array([1.0, 0, 0, 0]))
    assert loss == pytest.approx(math.log(2), abs=1e-15)


def test_bad_labels_and_empty_batch():
    m = MlpVerifier.create((2, 1))
    with pytest.raises(ValueError):
        loss_and_gradient_verifier(m, np.zeros((2, 2)), np.array([0.5, 1.0]))
    with pytest.raises(ValueError):
        loss_and_gradient_verifier(m, np.zeros((0, 2)), np.zeros(0))


def test_identity_autoencoder_has_zero_loss():
    ae = _set(Autoencoder.create((3, 3), scheme="zeros"), **{"enc.fc0.weight": np.eye(3), "dec.fc0.weight": np.eye(3)})
    loss, _ = loss_and_gradient_autoencoder(ae, np.random.default_rng(2).normal(size=(6, 3)))
    assert loss == 0.0


def test_autoencoder_gradient():
    rng = np.random.default_rng(3)
    ae = Autoencoder.create((3, 2, 1), seed=4)
    x = rng.normal(size=(4, 3))
    _, grad = loss_and_gradient_autoencoder(ae, x, weight_decay=0.02)
    numeric = central_difference(lambda v: ae.objective(v, x, weight_decay=0.02)[0], ae.params.values)
    assert max_relative_error(grad.values, numeric) < 1e-4


def test_autoencoder_loss_is_mean_of_per_sample_losses():
    rng = np.random.default_rng(5)
    ae = Autoencoder.create((4, 3, 2), seed=6)
    x = rng.normal(size=(7, 4))
    batch, _ = loss_and_gradient_autoencoder(ae, x)
    per_sample = [loss_and_gradient_autoencoder(ae, row[None, :])[0] for row in x]
    assert abs(batch - np.mean(per_sample)) <= 1e-12


def test_encode_zero_params():
    ae = Autoencoder.create((4, 3, 2), scheme="zeros")
    assert np.array_equal(encode(ae, np.array([1.0, 2, 3, 4])), np.zeros(2))


def test_encode_is_prefix_of_reconstruction():
    ae = Autoencoder.create((4, 3, 2), seed=8)
    x = np.random.default_rng(9).normal(size=(5, 4))
    assert np.array_equal(ae.decode(encode(ae, x)), ae.reconstruct(x))


def test_hand_set_linear_encoder():
    ae = _set(Autoencoder.create((2, 1), scheme="zeros"), **{"enc.fc0.weight": [[1.0, 1.0]]})
    # The bottleneck is linear, so the embedding is the plain weighted sum.
    assert encode(ae, np.array([2.0, 3.0])) == pytest.approx([5.0], abs=0)


def test_init_zeros_and_determinism():
    layout = MlpVerifier.create((4, 3, 1)).layout
    assert not np.any(init_params(layout, "zeros", 1).values)
    assert init_params(layout, "uniform_scaled", 7) == init_params(layout, "uniform_scaled", 7)
    assert init_params(layout, "uniform_scaled", 7) != init_params(layout, "uniform_scaled", 8)
    with pytest.raises(ValueError):
        init_params(layout, "gaussian", 0)


def test_uniform_scaled_statistics():
    layout = (("fc0.weight", (4, 4)), ("fc0.bias", (4,)))
    draws = np.concatenate([init_params(layout, "uniform_scaled", s).values[:16] for s in range(625)])
    assert draws.size == 10_000
    assert np.max(np.abs(draws)) <= math.sqrt(6 / 8)
    assert abs(np.mean(draws)) <= 0.02
    assert not np.any(init_params(layout, "uniform_scaled", 3).values[16:])


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 10_000), hidden=st.integers(1, 4), d=st.integers(1, 4))
def test_verifier_gradient_property(seed, hidden, d):
    rng = np.random.default_rng(seed)
    m = MlpVerifier.create((d, hidden, 1), seed=seed)
    x = rng.normal(size=(4, d))
    y = rng.integers(0, 2, size=4).astype(float)
    _, grad = loss_and_gradient_verifier(m, x, y)
    numeric = central_difference(lambda v: m.objective(v, x, y)[0], m.params.values)
    assert max_relative_error(grad.values, numeric) < 1e-4
