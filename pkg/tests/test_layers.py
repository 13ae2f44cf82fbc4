import numpy as np
import pytest

from utils.errors import DataError
from utils.layers import (
    Dense,
    LSTMCell,
    Module,
    Parameter,
    StackedLSTM,
    STGCNLayer,
    Standardizer,
    categorical_crossentropy,
    elbo_loss,
    kl_gaussian,
    lstm_cell,
    normalized_adjacency,
    reconstruction_nll,
    reparameterize,
    softmax_dense,
    stgcn_layer,
)
from utils.skeleton import SKELETON_EDGES
from utils.tensor import Tensor, gradient_check, matmul, mean_pool, sigmoid, softmax, tensor_sum

TOLERANCE = 1e-4


def test_matmul_identity_and_mean_pool_constant(rng):
    x = rng.normal(size=(3, 4))
    np.testing.assert_allclose(matmul(Tensor(np.eye(3)), Tensor(x)).data, x)
    np.testing.assert_allclose(mean_pool(Tensor(np.full((2, 3, 4, 5), 0.7))).data, 0.7)


def test_sigmoid_derivative_at_zero():
    x = Tensor(np.array([0.0]), requires_grad=True)
    tensor_sum(sigmoid(x)).backward()
    assert x.grad[0] == pytest.approx(0.25)


def test_lstm_cell_with_zero_weights_stays_at_zero():
    batch, features, hidden = 2, 5, 4
    h, c = Tensor(np.zeros((batch, hidden))), Tensor(np.zeros((batch, hidden)))
    zeros = dict(w_input=Tensor(np.zeros((features, 4 * hidden))),
                 w_hidden=Tensor(np.zeros((hidden, 4 * hidden))), bias=Tensor(np.zeros(4 * hidden)))
    for _ in range(3):
        h, c = lstm_cell(Tensor(np.zeros((batch, features))), h, c, **zeros)
        np.testing.assert_array_equal(h.data, 0.0)
        np.testing.assert_array_equal(c.data, 0.0)
    h, c = lstm_cell(Tensor(np.ones((batch, features))), h, c, **zeros)
    np.testing.assert_array_equal(c.data, 0.0)


def test_lstm_gradient_check_three_steps_hidden_four():
    for seed in range(10):
        rng = np.random.default_rng(seed)
        lstm = StackedLSTM(3, 4, 1, rng)
        x = rng.normal(size=(2, 3, 3))
        weights = rng.normal(size=(2, 4))
        errors = gradient_check(lambda: tensor_sum(lstm(x) * Tensor(weights)), lstm.parameters())
        assert max(errors.values()) <= TOLERANCE, errors


def test_stacked_lstm_gradient_reaches_input(rng):
    lstm = StackedLSTM(2, 3, 2, rng)
    x = Tensor(rng.normal(size=(1, 3, 2)), requires_grad=True)
    errors = gradient_check(lambda: tensor_sum(lstm(x)), [x])
    assert errors[0] <= TOLERANCE


def test_lstm_cell_module_matches_function(rng):
    cell = LSTMCell(3, 2, rng)
    x, h, c = (Tensor(rng.normal(size=s)) for s in ((1, 3), (1, 2), (1, 2)))
    h1, c1 = cell(x, h, c)
    h2, c2 = lstm_cell(x, h, c, cell.w_input, cell.w_hidden, cell.bias)
    np.testing.assert_array_equal(h1.data, h2.data)
    np.testing.assert_array_equal(c1.data, c2.data)


def test_normalized_adjacency_properties():
    adjacency = normalized_adjacency(SKELETON_EDGES, 10)
    matrix = adjacency.matrix
    assert np.max(np.abs(matrix - matrix.T)) <= 1e-12
    assert np.count_nonzero(matrix - np.diag(np.diag(matrix))) == 2 * len(SKELETON_EDGES)
    with pytest.raises(DataError):
        normalized_adjacency([(0, 0)], 3)


def test_stgcn_with_identity_adjacency_is_per_node_linear(rng):
    x = rng.normal(size=(1, 5, 4, 2))
    w_spatial = rng.normal(size=(2, 3))
    kernel = np.zeros((3, 3, 3))
    kernel[1] = np.eye(3)
    out = stgcn_layer(Tensor(x), np.eye(4), Tensor(w_spatial), Tensor(kernel), activation=False)
    np.testing.assert_allclose(out.data, x @ w_spatial)


def test_stgcn_constant_input_with_averaging_kernel(rng):
    x = np.ones((1, 7, 4, 2)) * rng.normal(size=(1, 1, 4, 2))
    k = 3
    kernel = np.stack([np.eye(2) / k] * k)
    out = stgcn_layer(Tensor(x), np.eye(4), Tensor(np.eye(2)), Tensor(kernel), activation=False)
    interior = slice(k // 2, 7 - k // 2)
    np.testing.assert_allclose(out.data[:, interior], x[:, interior])


def test_stgcn_gradient_check_t5_v4_c2():
    for seed in range(10):
        rng = np.random.default_rng(seed)
        adjacency = normalized_adjacency([(0, 1), (1, 2), (2, 3)], 4)
        layer = STGCNLayer(2, 3, adjacency, 3, rng, activation=False)
        x = Tensor(rng.normal(size=(2, 5, 4, 2)), requires_grad=True)
        weights = rng.normal(size=(2, 5, 4, 3))
        leaves = dict(layer.parameters(), x=x)
        errors = gradient_check(lambda: tensor_sum(layer(x) * Tensor(weights)), leaves)
        assert max(errors.values()) <= TOLERANCE, errors


def test_softmax_dense_uniform_logits(rng):
    layer = Dense(4, 9, rng)
    layer.weight.data[:] = 0.0
    probabilities = softmax_dense(Tensor(rng.normal(size=(2, 4))), layer)
    np.testing.assert_allclose(probabilities.data, 1 / 9)


def test_crossentropy_closed_form():
    logits = np.zeros((1, 9))
    logits[0, 0] = 1.0
    loss = categorical_crossentropy(Tensor(logits), np.array([0]))
    assert loss.item() == pytest.approx(np.log(np.e + 8) - 1)
    confident = np.full((1, 9), -50.0)
    confident[0, 4] = 50.0
    assert categorical_crossentropy(Tensor(confident), np.eye(9)[[4]]).item() == pytest.approx(0.0, abs=1e-12)


def test_kl_examples():
    assert kl_gaussian(Tensor(np.zeros((1, 3))), Tensor(np.zeros((1, 3)))).item() == 0.0
    assert kl_gaussian(Tensor(np.ones((1, 1))), Tensor(np.zeros((1, 1)))).item() == pytest.approx(0.5)


def test_kl_matches_monte_carlo():
    rng = np.random.default_rng(7)
    latent = 16
    for _ in range(20):
        mu = rng.normal(0.0, 1.0, size=latent)
        logvar = rng.normal(0.0, 0.5, size=latent)
        closed = kl_gaussian(Tensor(mu[None]), Tensor(logvar[None])).item()
        std = np.exp(0.5 * logvar)
        z = mu + std * rng.standard_normal((100_000, latent))
        log_q = np.sum(-0.5 * ((z - mu) / std) ** 2 - np.log(std), axis=1)
        log_p = np.sum(-0.5 * z ** 2, axis=1)
        estimate = np.mean(log_q - log_p)
        assert abs(estimate - closed) <= 0.01 * closed


def test_kl_is_zero_only_at_the_prior(rng):
    zeros = np.zeros((1, 4))
    assert kl_gaussian(Tensor(zeros), Tensor(zeros)).item() == 0.0
    for _ in range(20):
        mu, logvar = zeros.copy(), zeros.copy()
        which = rng.integers(4)
        if rng.random() < 0.5:
            mu[0, which] = rng.choice([-1.0, 1.0]) * rng.uniform(1e-3, 2.0)
        else:
            logvar[0, which] = rng.choice([-1.0, 1.0]) * rng.uniform(1e-3, 2.0)
        assert kl_gaussian(Tensor(mu), Tensor(logvar)).item() > 0.0


def test_softmax_is_shift_invariant(rng):
    for _ in range(10):
        z = rng.normal(0.0, 3.0, size=(4, 9))
        shift = rng.uniform(-100.0, 100.0, size=(4, 1))
        shifted = softmax(Tensor(z + shift)).data
        np.testing.assert_allclose(shifted, softmax(Tensor(z)).data, rtol=1e-10, atol=1e-12)
        np.testing.assert_allclose(softmax(Tensor(z)).data.sum(axis=1), 1.0)


def test_reconstruction_loss_needs_a_batch_axis():
    with pytest.raises(DataError):
        reconstruction_nll(Tensor(np.zeros(3)), np.ones(3))
    single = np.ones((1, 3, 4, 2))
    assert reconstruction_nll(Tensor(np.zeros_like(single)), single).item() == pytest.approx(12.0)


def test_reparameterize_examples():
    mu = Tensor(np.array([[0.5, -1.0]]), requires_grad=True)
    logvar = Tensor(np.zeros((1, 2)), requires_grad=True)
    np.testing.assert_allclose(reparameterize(mu, logvar, np.zeros((1, 2))).data, mu.data)
    noise = np.array([[0.3, -0.2]])
    z = reparameterize(mu, logvar, noise)
    np.testing.assert_allclose(z.data, mu.data + noise)
    tensor_sum(z).backward()
    np.testing.assert_allclose(mu.grad, 1.0)


def test_elbo_examples():
    x = np.random.default_rng(0).normal(size=(1, 3, 4, 2))
    prior = Tensor(np.zeros((1, 3)))
    assert elbo_loss(Tensor(x), x, prior, prior).item() == pytest.approx(0.0)
    assert elbo_loss(Tensor(x + 1.0), x, prior, prior).item() == pytest.approx(x.size / 2)
    both = elbo_loss([Tensor(x), Tensor(x + 1.0)], x, prior, prior)
    assert both.item() == pytest.approx(x.size / 4)


def test_module_state_round_trip_and_freeze(rng):
    class Tiny(Module):
        def __init__(self):
            self.first = Dense(2, 3, rng)
            self.stack = [Dense(3, 3, rng), Dense(3, 1, rng)]
            self.scale = Parameter(np.ones(1))

    model = Tiny()
    names = list(model.parameters())
    assert names == ["first.weight", "first.bias", "stack.0.weight", "stack.0.bias",
                     "stack.1.weight", "stack.1.bias", "scale"]
    assert model.parameter_count() == 6 + 3 + 9 + 3 + 3 + 1 + 1
    copy = Tiny()
    copy.load_state_dict(model.state_dict())
    np.testing.assert_array_equal(copy.first.weight.data, model.first.weight.data)
    with pytest.raises(DataError):
        copy.load_state_dict({"first.weight": np.zeros((2, 3))})
    model.freeze()
    assert not any(p.requires_grad for p in model.parameters().values())


def test_standardizer_fits_in_batches_and_stays_frozen(rng):
    data = rng.normal(3.0, 2.0, size=(40, 5))
    data[:, 2] = 7.0
    scaler = Standardizer(5).fit([data[:15], data[15:]])
    np.testing.assert_allclose(scaler.mean.data, data.mean(axis=0))
    np.testing.assert_allclose(scaler.scale.data[[0, 1, 3, 4]], data.std(axis=0)[[0, 1, 3, 4]])
    assert scaler.scale.data[2] == 1.0
    out = scaler(Tensor(data)).data
    np.testing.assert_allclose(out.mean(axis=0), 0.0, atol=1e-12)
    assert not any(p.trainable for p in scaler.parameters().values())
    with pytest.raises(DataError):
        Standardizer(5).fit([np.zeros((0, 5))])
