"""
Trainable building blocks on top of utils.tensor: parameters and modules, dense
layers, the LSTM cell and stack, the spatio-temporal graph convolution layer,
normalized skeleton adjacency, and the classification / variational losses.
"""

import logging
from dataclasses import dataclass

import numpy as np
from sklearn.preprocessing import StandardScaler

from utils.errors import DataError
from utils.tensor import (
    Tensor,
    add,
    as_tensor,
    exp,
    graph_propagate,
    log_softmax,
    matmul,
    mul,
    relu,
    reshape,
    sigmoid,
    softmax,
    square,
    sub,
    tanh,
    temporal_conv1d,
    tensor_sum,
)

logger = logging.getLogger(__name__)


class Parameter(Tensor):
    """Leaf tensor owned by a module; frozen parameters take no gradient and no updates"""

    def __init__(self, data, trainable=True, name=None, dtype=None):
        super().__init__(data, requires_grad=True, dtype=dtype, name=name)
        self.trainable = trainable

    @property
    def requires_grad(self):
        return self.trainable


def glorot_uniform(rng, shape, fan_in, fan_out, dtype=np.float64):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape).astype(dtype)


class Module:
    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)

    def forward(self, *args, **kwargs):
        raise NotImplementedError

    def named_parameters(self, prefix=""):
        """Yield (dotted name, Parameter) in attribute definition order"""
        for name, value in vars(self).items():
            if isinstance(value, Parameter):
                yield f"{prefix}{name}", value
            elif isinstance(value, Module):
                yield from value.named_parameters(f"{prefix}{name}.")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{prefix}{name}.{i}.")

    def parameters(self):
        return dict(self.named_parameters())

    def zero_grad(self):
        for param in self.parameters().values():
            param.zero_grad()

    def freeze(self):
        for param in self.parameters().values():
            param.trainable = False
            param.zero_grad()
        return self

    def state_dict(self):
        return {name: param.data.copy() for name, param in self.named_parameters()}

    def load_state_dict(self, state):
        """
        Copy stored arrays into this module's parameters

        Parameters:
        state (dict): name -> array, exactly this module's parameter names and shapes
        """
        params = self.parameters()
        missing = sorted(set(params) - set(state))
        unexpected = sorted(set(state) - set(params))
        if missing or unexpected:
            raise DataError(f"parameter names differ: missing {missing}, unexpected {unexpected}")
        for name, param in params.items():
            value = np.asarray(state[name])
            if value.shape != param.shape:
                raise DataError(f"parameter {name}: stored shape {value.shape}, expected {param.shape}")
            param.data = value.astype(param.dtype).copy()

    def parameter_count(self):
        return int(sum(p.data.size for p in self.parameters().values()))


class Dense(Module):
    def __init__(self, in_features, out_features, rng, dtype=np.float64):
        self.in_features = in_features
        self.out_features = out_features
        self.weight = Parameter(glorot_uniform(rng, (in_features, out_features), in_features, out_features, dtype))
        self.bias = Parameter(np.zeros(out_features, dtype=dtype))

    def forward(self, x):
        x = as_tensor(x, dtype=self.weight.dtype)
        if x.shape[-1] != self.in_features:
            raise DataError(f"Dense expects {self.in_features} input features, got {x.shape}")
        if x.ndim == 2:
            return add(matmul(x, self.weight), self.bias)
        lead = x.shape[:-1]
        flat = reshape(x, (-1, self.in_features))
        return reshape(add(matmul(flat, self.weight), self.bias), lead + (self.out_features,))


class Standardizer(Module):
    """Per-feature shift and scale fitted once on training data; never updated by the optimizer"""

    def __init__(self, features, dtype=np.float64):
        self.features = features
        self.mean = Parameter(np.zeros(features, dtype=dtype), trainable=False)
        self.scale = Parameter(np.ones(features, dtype=dtype), trainable=False)

    def fit(self, batches):
        """
        Fit mean and scale with StandardScaler, one partial fit per batch

        Parameters:
        batches (iterable[np.ndarray]): Arrays whose trailing axes flatten to the feature count

        Returns:
        Standardizer: self, for chaining
        """
        scaler = StandardScaler()
        rows_seen = 0
        for batch in batches:
            rows = np.asarray(batch, dtype=np.float64).reshape(-1, self.features)
            if len(rows):
                scaler.partial_fit(rows)
                rows_seen += len(rows)
        if not rows_seen:
            raise DataError("standardizer needs at least one sample to fit")
        # StandardScaler leaves constant features with scale 1
        self.mean.data = scaler.mean_.astype(self.mean.dtype)
        self.scale.data = scaler.scale_.astype(self.scale.dtype)
        logger.debug(f"Standardizer fitted on {rows_seen} rows of {self.features} features")
        return self

    def forward(self, x):
        x = as_tensor(x, dtype=self.mean.dtype)
        if x.shape[-1] != self.features:
            raise DataError(f"standardizer expects {self.features} features, got {x.shape}")
        return mul(sub(x, self.mean), (1.0 / self.scale.data).astype(self.mean.dtype))


def lstm_cell(x_t, h_prev, c_prev, w_input, w_hidden, bias):
    """
    One gated LSTM update with fused gate weights ordered (input, forget, cell, output)

    Parameters:
    x_t (Tensor): B x F input at this step
    h_prev (Tensor): B x H previous hidden state
    c_prev (Tensor): B x H previous cell state
    w_input (Tensor): F x 4H input weights
    w_hidden (Tensor): H x 4H recurrent weights
    bias (Tensor): 4H gate biases

    Returns:
    tuple: (h_t, c_t)
    """
    hidden = h_prev.shape[-1]
    if w_hidden.shape != (hidden, 4 * hidden) or w_input.shape[-1] != 4 * hidden:
        raise DataError(f"LSTM weights {w_input.shape}, {w_hidden.shape} do not fit hidden size {hidden}")
    gates = add(add(matmul(x_t, w_input), matmul(h_prev, w_hidden)), bias)
    i = sigmoid(gates[:, :hidden])
    f = sigmoid(gates[:, hidden:2 * hidden])
    g = tanh(gates[:, 2 * hidden:3 * hidden])
    o = sigmoid(gates[:, 3 * hidden:])
    c_t = add(mul(f, c_prev), mul(i, g))
    h_t = mul(o, tanh(c_t))
    return h_t, c_t


class LSTMCell(Module):
    def __init__(self, input_size, hidden_size, rng, dtype=np.float64):
        self.input_size = input_size
        self.hidden_size = hidden_size
        gates = 4 * hidden_size
        self.w_input = Parameter(glorot_uniform(rng, (input_size, gates), input_size, gates, dtype))
        self.w_hidden = Parameter(glorot_uniform(rng, (hidden_size, gates), hidden_size, gates, dtype))
        self.bias = Parameter(np.zeros(gates, dtype=dtype))

    def forward(self, x_t, h_prev, c_prev):
        return lstm_cell(x_t, h_prev, c_prev, self.w_input, self.w_hidden, self.bias)


class StackedLSTM(Module):
    """Layers of LSTM cells unrolled over every timestep; returns the top layer's last hidden state"""

    def __init__(self, input_size, hidden_size, layers, rng, dtype=np.float64):
        self.hidden_size = hidden_size
        self.cells = [
            LSTMCell(input_size if layer == 0 else hidden_size, hidden_size, rng, dtype)
            for layer in range(layers)
        ]

    def forward(self, x):
        """
        Parameters:
        x (Tensor | np.ndarray): B x T x F sequence

        Returns:
        Tensor: B x H hidden state after the last timestep
        """
        x = as_tensor(x, dtype=self.cells[0].w_input.dtype)
        if x.ndim != 3 or x.shape[-1] != self.cells[0].input_size:
            raise DataError(f"StackedLSTM expects B x T x {self.cells[0].input_size}, got {x.shape}")
        batch, steps = x.shape[0], x.shape[1]
        if x.requires_grad:
            inputs = [x[:, t] for t in range(steps)]
        else:
            inputs = [Tensor(x.data[:, t]) for t in range(steps)]
        for cell in self.cells:
            h = Tensor(np.zeros((batch, self.hidden_size), dtype=x.dtype))
            c = Tensor(np.zeros((batch, self.hidden_size), dtype=x.dtype))
            outputs = []
            for x_t in inputs:
                h, c = cell(x_t, h, c)
                outputs.append(h)
            inputs = outputs
        return inputs[-1]


@dataclass(frozen=True)
class AdjacencyMatrix:
    node_count: int
    matrix: np.ndarray  # V x V, D^-1/2 (A + I) D^-1/2
    edges: tuple

    def __post_init__(self):
        if self.matrix.shape != (self.node_count, self.node_count):
            raise DataError(f"adjacency shape {self.matrix.shape} does not match {self.node_count} nodes")


def normalized_adjacency(edges, node_count):
    """
    Symmetric-normalized adjacency with self-loops

    Parameters:
    edges (list[tuple]): Undirected (u, v) node pairs
    node_count (int): Number of nodes V

    Returns:
    AdjacencyMatrix: D^-1/2 (A + I) D^-1/2
    """
    a = np.eye(node_count)
    for u, v in edges:
        if not (0 <= u < node_count and 0 <= v < node_count) or u == v:
            raise DataError(f"edge ({u}, {v}) is not valid for {node_count} nodes")
        a[u, v] = a[v, u] = 1.0
    inv_sqrt = 1.0 / np.sqrt(a.sum(axis=1))
    matrix = a * inv_sqrt[:, None] * inv_sqrt[None, :]
    return AdjacencyMatrix(node_count, matrix, tuple(tuple(int(n) for n in e) for e in edges))


def stgcn_layer(x, adjacency, w_spatial, w_temporal, b_spatial=None, b_temporal=None, activation=True):
    """
    Spatial graph step Y[t] = A X[t] W followed by a per-node temporal convolution

    Parameters:
    x (Tensor): B x T x V x C_in
    adjacency (np.ndarray | AdjacencyMatrix): V x V normalized adjacency
    w_spatial (Tensor): C_in x C_out
    w_temporal (Tensor): k x C_out x C_out
    b_spatial (Tensor): C_out, optional
    b_temporal (Tensor): C_out, optional
    activation (bool): Apply ReLU to the output

    Returns:
    Tensor: B x T x V x C_out
    """
    matrix = adjacency.matrix if isinstance(adjacency, AdjacencyMatrix) else adjacency
    x = as_tensor(x)
    if x.ndim != 4 or x.shape[-1] != w_spatial.shape[0]:
        raise DataError(f"stgcn layer expects B x T x V x {w_spatial.shape[0]}, got {x.shape}")
    mixed = graph_propagate(x, matrix)
    lead = mixed.shape[:-1]
    y = matmul(reshape(mixed, (-1, x.shape[-1])), w_spatial)
    if b_spatial is not None:
        y = add(y, b_spatial)
    y = reshape(y, lead + (w_spatial.shape[1],))
    out = temporal_conv1d(y, w_temporal, b_temporal)
    return relu(out) if activation else out


class STGCNLayer(Module):
    def __init__(self, in_channels, out_channels, adjacency, kernel_size, rng, dtype=np.float64, activation=True):
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.adjacency = adjacency
        self.activation = activation
        self.w_spatial = Parameter(glorot_uniform(rng, (in_channels, out_channels), in_channels, out_channels, dtype))
        self.b_spatial = Parameter(np.zeros(out_channels, dtype=dtype))
        self.w_temporal = Parameter(glorot_uniform(
            rng, (kernel_size, out_channels, out_channels),
            kernel_size * out_channels, kernel_size * out_channels, dtype,
        ))
        self.b_temporal = Parameter(np.zeros(out_channels, dtype=dtype))

    def forward(self, x):
        return stgcn_layer(
            x, self.adjacency, self.w_spatial, self.w_temporal,
            self.b_spatial, self.b_temporal, self.activation,
        )


def softmax_dense(h, layer):
    """Dense projection followed by softmax: B x F -> B x classes probabilities"""
    return softmax(layer(h), axis=-1)


def _targets(targets, logits):
    targets = np.asarray(targets)
    if targets.ndim == 1 and logits.ndim == 2:
        onehot = np.zeros(logits.shape, dtype=logits.dtype)
        onehot[np.arange(len(targets)), targets.astype(np.int64)] = 1.0
        return onehot
    if targets.shape != logits.shape:
        raise DataError(f"targets {targets.shape} do not match logits {logits.shape}")
    return targets.astype(logits.dtype)


def categorical_crossentropy(logits, targets):
    """
    Mean over the batch of -log p[true class], computed from logits with log-sum-exp

    Parameters:
    logits (Tensor): B x classes unnormalized scores
    targets (np.ndarray): B x classes one-hot rows, or B class indices

    Returns:
    Tensor: Scalar loss
    """
    logits = as_tensor(logits)
    onehot = _targets(targets, logits)
    log_probs = log_softmax(logits, axis=-1)
    total = tensor_sum(mul(log_probs, Tensor(onehot)))
    return mul(total, -1.0 / logits.shape[0])


def kl_gaussian(mu, logvar):
    """
    KL(N(mu, exp(logvar)) || N(0, I)), summed over latent dims and averaged over the batch

    Parameters:
    mu (Tensor): B x d or d
    logvar (Tensor): Same shape as mu

    Returns:
    Tensor: Scalar, >= 0
    """
    mu, logvar = as_tensor(mu), as_tensor(logvar)
    if mu.shape != logvar.shape:
        raise DataError(f"mu {mu.shape} and logvar {logvar.shape} differ")
    terms = sub(sub(add(square(mu), exp(logvar)), 1.0), logvar)
    batch = mu.shape[0] if mu.ndim > 1 else 1
    return mul(tensor_sum(terms), 0.5 / batch)


@dataclass
class GaussianLatent:
    mu: Tensor
    logvar: Tensor
    noise: np.ndarray
    z: Tensor


def reparameterize(mu, logvar, noise):
    """
    z = mu + exp(logvar / 2) * noise; the noise is a constant, gradients reach mu and logvar

    Parameters:
    mu (Tensor): Posterior mean
    logvar (Tensor): Posterior log-variance
    noise (np.ndarray): Standard-normal draw of the same shape

    Returns:
    Tensor: Latent sample
    """
    mu, logvar = as_tensor(mu), as_tensor(logvar)
    noise = np.asarray(noise, dtype=mu.dtype)
    if noise.shape != mu.shape:
        raise DataError(f"noise {noise.shape} does not match mu {mu.shape}")
    return add(mu, mul(exp(mul(logvar, 0.5)), Tensor(noise)))


def sample_latent(mu, logvar, rng):
    noise = rng.standard_normal(mu.shape).astype(mu.dtype)
    return GaussianLatent(mu, logvar, noise, reparameterize(mu, logvar, noise))


def reconstruction_nll(x_recon, x):
    """
    Unit-variance Gaussian negative log-likelihood without constants, averaged over the batch

    Parameters:
    x_recon (Tensor): B x ... reconstruction means
    x (np.ndarray): B x ... inputs; the leading axis is always the batch, so a
        single datum must be passed with a batch axis of 1

    Returns:
    Tensor: Scalar 1/2 sum (x - x_recon)^2 divided by B
    """
    x_recon = as_tensor(x_recon)
    x = np.asarray(x.data if isinstance(x, Tensor) else x, dtype=x_recon.dtype)
    if x.shape != x_recon.shape:
        raise DataError(f"reconstruction {x_recon.shape} does not match input {x.shape}")
    if x.ndim < 2:
        raise DataError(f"reconstruction loss needs a leading batch axis, got shape {x.shape}")
    return mul(tensor_sum(square(sub(x_recon, Tensor(x)))), 0.5 / x.shape[0])


def elbo_loss(x_recon, x, mu, logvar):
    """
    Negative evidence lower bound: reconstruction NLL + KL to the standard-normal prior

    Parameters:
    x_recon (Tensor | list[Tensor]): Reconstruction mean, or one per posterior sample
    x (np.ndarray): B x ... inputs
    mu (Tensor): B x d posterior means
    logvar (Tensor): B x d posterior log-variances

    Returns:
    Tensor: Scalar loss to minimize
    """
    if isinstance(x_recon, (list, tuple)):
        recon = reconstruction_nll(x_recon[0], x)
        for extra in x_recon[1:]:
            recon = add(recon, reconstruction_nll(extra, x))
        recon = mul(recon, 1.0 / len(x_recon))
    else:
        recon = reconstruction_nll(x_recon, x)
    return add(recon, kl_gaussian(mu, logvar))


def flatten_frames(x):
    """B x T x V x C -> B x T x (V * C), the per-frame input layout of the LSTM classifier"""
    x = as_tensor(x)
    return reshape(x, x.shape[:2] + (-1,))
