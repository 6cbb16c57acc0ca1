#!/usr/bin/env python3
"""
Test the numerics layer: layers, tape backward, Adam and the parameter block
"""

import struct

import numpy as np
import pytest

from src.core.errors import CheckpointError, DimensionError, TrainingError
from src.core.numerics import (
    CHECKPOINT_FORMAT_VERSION, EVAL, TRAIN, Adam, Affine, Dropout, NoisyAffine, Parameter, ReLU,
    Sequential, Tape, adam_step, affine_forward, as_tensor2, backward, check_finite,
    deserialize_parameters, finite_difference_grad, load_parameters, matmul, relative_error, relu,
    serialize_parameters,
)

GRAD_STEP = 1e-5
GRAD_TOL = 1e-4


def _layer_grad_check(layer, x, seed, forward=None):
    """Compare analytic and central-difference grads of sum(G * layer(x))"""
    forward = forward or (lambda inp: layer.forward(inp, EVAL))
    out, cache = forward(x)
    g = np.random.default_rng(seed).standard_normal(out.shape)

    for p in layer.parameters():
        p.zero_grad()
    grad_x = layer.backward(g, cache)

    def loss():
        return float(np.sum(g * forward(x)[0]))

    assert relative_error(grad_x, finite_difference_grad(loss, x, GRAD_STEP)) < GRAD_TOL
    for p in layer.parameters():
        assert relative_error(p.grad, finite_difference_grad(loss, p.value, GRAD_STEP)) < GRAD_TOL, p.name


def test_as_tensor2_promotes_vectors():
    """1-D input becomes a single row, 3-D input is rejected"""
    assert as_tensor2([1.0, 2.0, 3.0]).shape == (1, 3)
    with pytest.raises(DimensionError):
        as_tensor2(np.zeros((2, 2, 2)))


def test_matmul_and_affine_shapes():
    a = np.arange(6, dtype=float).reshape(2, 3)
    b = np.ones((3, 4))
    assert matmul(a, b).shape == (2, 4)
    with pytest.raises(DimensionError):
        matmul(a, np.ones((2, 4)))

    w = Parameter("w", np.ones((3, 2)))
    bias = Parameter("b", np.array([[1.0, -1.0]]))
    out = affine_forward(a, w, bias)
    np.testing.assert_allclose(out, a.sum(axis=1, keepdims=True) + np.array([[1.0, -1.0]]))
    with pytest.raises(DimensionError):
        affine_forward(a, w, Parameter("b", np.zeros((1, 3))))


def test_matmul_is_associative_on_random_triples():
    rng = np.random.default_rng(3)
    for _ in range(50):
        p, q, r, s = rng.integers(1, 7, size=4)
        a = rng.uniform(0.1, 1.0, (p, q))
        b = rng.uniform(0.1, 1.0, (q, r))
        c = rng.uniform(0.1, 1.0, (r, s))
        np.testing.assert_allclose(matmul(matmul(a, b), c), matmul(a, matmul(b, c)), rtol=1e-9)


def test_check_finite_raises_training_error():
    with pytest.raises(TrainingError):
        check_finite(np.array([[1.0, np.nan]]))
    with pytest.raises(TrainingError):
        matmul(np.array([[np.inf]]), np.array([[1.0]]))


def test_relu():
    np.testing.assert_array_equal(relu(np.array([[-1.0, 0.0, 2.0]])), [[0.0, 0.0, 2.0]])

    x = np.random.default_rng(4).normal(size=(5, 8))
    out = relu(x)
    assert np.all(out >= 0.0)
    assert np.all(out[x >= 0] <= x[x >= 0])


def test_affine_gradients_on_random_instances():
    """Affine layer passes finite-difference checks on 100 small random instances"""
    for seed in range(100):
        rng = np.random.default_rng(seed)
        fan_in, fan_out, batch = rng.integers(1, 5, size=3)
        layer = Affine(int(fan_in), int(fan_out), rng)
        layer.b.value[...] = rng.standard_normal(layer.b.value.shape)
        _layer_grad_check(layer, rng.standard_normal((int(batch), int(fan_in))), seed)


def test_noisy_affine_gradients_with_fixed_noise():
    """Gradients w.r.t. mu, sigma and input under a frozen noise sample"""
    for seed in range(100):
        rng = np.random.default_rng(seed)
        fan_in, fan_out, batch = (int(v) for v in rng.integers(1, 5, size=3))
        layer = NoisyAffine(fan_in, fan_out, rng, sigma_init=0.5)
        noise = layer.sample_noise()
        x = rng.standard_normal((batch, fan_in))
        _layer_grad_check(layer, x, seed, forward=lambda inp: layer.forward(inp, TRAIN, noise=noise))


def test_relu_gradient_away_from_kink():
    for seed in range(100):
        rng = np.random.default_rng(seed)
        x = rng.standard_normal((3, 4))
        x[np.abs(x) < 0.05] = 0.5
        _layer_grad_check(ReLU(), x, seed)


def test_dropout_gradient_with_fixed_mask():
    rng = np.random.default_rng(5)
    layer = Dropout(0.3, rng)
    x = rng.standard_normal((4, 6))
    _, mask = layer.forward(x, TRAIN)
    _layer_grad_check(layer, x, 5, forward=lambda inp: (inp * mask, mask))


def test_dropout_is_identity_in_eval_mode():
    layer = Dropout(0.5, np.random.default_rng(0))
    x = np.ones((2, 3))
    out, cache = layer.forward(x, EVAL)
    assert cache is None
    np.testing.assert_array_equal(out, x)
    with pytest.raises(ValueError):
        Dropout(1.0, np.random.default_rng(0))


def test_noisy_affine_eval_mode_uses_means():
    rng = np.random.default_rng(0)
    layer = NoisyAffine(3, 2, rng)
    layer.b_mu.value[...] = [[0.5, -0.5]]
    x = rng.standard_normal((2, 3))
    out, _ = layer.forward(x, EVAL)
    np.testing.assert_allclose(out, x @ layer.w_mu.value + layer.b_mu.value)
    np.testing.assert_allclose(layer.w_sigma.value, 0.5 / np.sqrt(3))


def test_noisy_affine_train_mean_matches_eval():
    """Averaged over 10,000 noise draws, train output matches eval output within 3 standard errors"""
    rng = np.random.default_rng(2024)
    layer = NoisyAffine(4, 3, rng, sigma_init=0.5)
    x = rng.standard_normal((1, 4))
    draws = np.stack([layer.forward(x, TRAIN)[0] for _ in range(10_000)])
    eval_out = layer.forward(x, EVAL)[0]
    se = draws.std(axis=0) / np.sqrt(len(draws))
    assert np.all(np.abs(draws.mean(axis=0) - eval_out) <= 3 * se + 1e-12)


def test_sequential_backward_matches_finite_differences():
    rng = np.random.default_rng(9)
    net = Sequential([Affine(3, 5, rng, "a"), ReLU(), NoisyAffine(5, 2, rng, 0.3, "n")])
    x = rng.standard_normal((4, 3))
    g = rng.standard_normal((4, 2))

    tape = Tape()
    net.forward(x, EVAL, tape)
    grad_x = backward(g, tape)

    def loss():
        return float(np.sum(g * net.forward(x, EVAL)))

    assert relative_error(grad_x, finite_difference_grad(loss, x)) < GRAD_TOL
    for p in net.parameters():
        if p.name.endswith('sigma'):
            # zero noise in eval mode: sigma has no effect
            assert np.all(p.grad == 0.0)
            continue
        assert relative_error(p.grad, finite_difference_grad(loss, p.value)) < GRAD_TOL, p.name


def test_backward_rejects_wrong_gradient_shape():
    rng = np.random.default_rng(0)
    net = Sequential([Affine(2, 3, rng)])
    tape = Tape()
    net.forward(np.ones((1, 2)), EVAL, tape)
    with pytest.raises(DimensionError):
        backward(np.ones((1, 2)), tape)
    with pytest.raises(DimensionError):
        backward(np.ones((1, 3)), Tape())


def test_adam_first_step_moves_by_learning_rate():
    """Bias-corrected first step has magnitude ~lr in the gradient's sign direction"""
    p = Parameter("p", np.array([[1.0, -2.0]]))
    p.grad[...] = [[0.3, -4.0]]
    adam_step([p], lr=0.01, t=1)
    np.testing.assert_allclose(p.value, [[0.99, -1.99]], atol=1e-7)
    assert np.all(p.grad == 0.0)


def test_adam_zero_gradient_is_a_fixed_point():
    p = Parameter("p", np.array([[0.5, -1.5, 3.0]]))
    opt = Adam([p], lr=0.1)
    for _ in range(10):
        opt.step()
    np.testing.assert_array_equal(p.value, [[0.5, -1.5, 3.0]])
    assert np.all(p.adam_m == 0.0) and np.all(p.adam_v == 0.0)
    assert opt.t == 10


def test_adam_counter_and_non_finite_gradient():
    p = Parameter("p", np.zeros((1, 1)))
    opt = Adam([p], lr=0.1)
    p.grad[...] = 1.0
    opt.step()
    assert opt.t == 1
    p.grad[...] = np.nan
    with pytest.raises(TrainingError):
        opt.step()
    with pytest.raises(ValueError):
        adam_step([p], 0.1, t=0)


def test_parameter_block_layout_and_reload():
    rng = np.random.default_rng(3)
    net = Sequential([Affine(2, 3, rng, "a"), ReLU(), NoisyAffine(3, 1, rng, 0.5, "n")])
    blob = serialize_parameters(net.parameters())
    assert struct.unpack_from("<II", blob, 0) == (CHECKPOINT_FORMAT_VERSION, 6)
    assert struct.unpack_from("<II", blob, 8) == (2, 3)

    other = Sequential([Affine(2, 3, np.random.default_rng(99), "a"), ReLU(),
                        NoisyAffine(3, 1, np.random.default_rng(98), 0.5, "n")])
    load_parameters(other.parameters(), deserialize_parameters(blob))
    x = rng.standard_normal((5, 2))
    np.testing.assert_array_equal(net.forward(x), other.forward(x))


def test_parameter_block_errors_name_the_field():
    rng = np.random.default_rng(0)
    params = Sequential([Affine(2, 2, rng, "a")]).parameters()
    blob = serialize_parameters(params)

    with pytest.raises(CheckpointError) as exc:
        deserialize_parameters(struct.pack("<II", 7, 0))
    assert exc.value.field == "format_version"

    with pytest.raises(CheckpointError) as exc:
        deserialize_parameters(blob[:-8])
    assert exc.value.field == "layer_count"

    with pytest.raises(CheckpointError) as exc:
        load_parameters(params[:1], deserialize_parameters(blob))
    assert exc.value.field == "layer_count"

    wrong = Sequential([Affine(3, 2, rng, "b")]).parameters()
    with pytest.raises(CheckpointError) as exc:
        load_parameters(wrong, deserialize_parameters(blob))
    assert exc.value.field == "b.w"
