"""
Minimal shaped tensors with reverse-mode differentiation on top of numpy.

Each op computes its forward value with numpy and records a closure mapping the
output gradient to gradients for its parents. Tensor.backward walks the graph
in reverse topological order and accumulates gradients on leaf tensors.
"""

import logging

import numpy as np

from utils.errors import DataError, NumericalError

logger = logging.getLogger(__name__)

DEFAULT_DTYPE = np.float64

# Registered differentiable ops, name -> function; the gradient tests walk this table
OPS = {}


def register(name):
    def decorator(fn):
        OPS[name] = fn
        return fn
    return decorator


class Tensor:
    def __init__(self, data, requires_grad=False, dtype=None, name=None):
        array = np.asarray(data, dtype=dtype)
        if not np.issubdtype(array.dtype, np.floating):
            array = array.astype(DEFAULT_DTYPE)
        self.data = array
        self.grad = None
        self.name = name
        self._requires_grad = requires_grad
        self._parents = ()
        self._backward = None
        self._op = None

    @property
    def requires_grad(self):
        return self._requires_grad

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def ndim(self):
        return self.data.ndim

    def numpy(self):
        return self.data

    def item(self):
        return float(self.data)

    def __repr__(self):
        label = f" {self.name}" if self.name else ""
        return f"<Tensor{label} shape={self.shape} op={self._op}>"

    def zero_grad(self):
        self.grad = None

    def __add__(self, other): return add(self, other)
    def __radd__(self, other): return add(other, self)
    def __sub__(self, other): return sub(self, other)
    def __rsub__(self, other): return sub(other, self)
    def __mul__(self, other): return mul(self, other)
    def __rmul__(self, other): return mul(other, self)
    def __neg__(self): return neg(self)
    def __matmul__(self, other): return matmul(self, other)
    def __getitem__(self, index): return getitem(self, index)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def sum(self, axis=None, keepdims=False):
        return tensor_sum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def backward(self, grad=None):
        """
        Accumulate d(self)/d(leaf) into every leaf tensor that requires grad

        Parameters:
        grad (np.ndarray): Seed gradient, ones when self is a scalar
        """
        if not self.requires_grad:
            raise NumericalError("backward called on a tensor that does not require grad")
        if grad is None:
            if self.data.size != 1:
                raise DataError(f"backward needs an explicit gradient for shape {self.shape}")
            grad = np.ones_like(self.data)

        grads = {id(self): np.asarray(grad, dtype=self.dtype)}
        for node in reversed(_toposort(self)):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                node.grad = g if node.grad is None else node.grad + g
                continue
            for parent, parent_grad in zip(node._parents, node._backward(g)):
                if parent_grad is None or not parent.requires_grad:
                    continue
                if not np.all(np.isfinite(parent_grad)):
                    raise NumericalError(f"non-finite gradient flowing out of {node._op}")
                key = id(parent)
                grads[key] = parent_grad if key not in grads else grads[key] + parent_grad


def _toposort(root):
    order, visited = [], set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if parent.requires_grad and id(parent) not in visited:
                stack.append((parent, False))
    return order


def as_tensor(value, dtype=None):
    if isinstance(value, Tensor):
        return value
    return Tensor(value, dtype=dtype)


def _result(data, op, parents, backward):
    if not np.all(np.isfinite(data)):
        logger.error(f"Op {op} produced non-finite values")
        raise NumericalError(f"{op} produced non-finite values")
    out = Tensor(data)
    if any(p.requires_grad for p in parents):
        out._requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    out._op = op
    return out


def _unbroadcast(grad, shape):
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _pair(a, b):
    a = as_tensor(a)
    b = as_tensor(b, dtype=a.dtype)
    return a, b


@register("add")
def add(a, b):
    a, b = _pair(a, b)
    try:
        data = a.data + b.data
    except ValueError as e:
        raise DataError(f"add: shape mismatch {a.shape} vs {b.shape}") from e
    return _result(data, "add", (a, b), lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


@register("sub")
def sub(a, b):
    a, b = _pair(a, b)
    try:
        data = a.data - b.data
    except ValueError as e:
        raise DataError(f"sub: shape mismatch {a.shape} vs {b.shape}") from e
    return _result(data, "sub", (a, b), lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


@register("mul")
def mul(a, b):
    a, b = _pair(a, b)
    try:
        data = a.data * b.data
    except ValueError as e:
        raise DataError(f"mul: shape mismatch {a.shape} vs {b.shape}") from e
    return _result(
        data, "mul", (a, b),
        lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)),
    )


@register("neg")
def neg(a):
    a = as_tensor(a)
    return _result(-a.data, "neg", (a,), lambda g: (-g,))


@register("matmul")
def matmul(a, b):
    a, b = _pair(a, b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise DataError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    data = np.matmul(a.data, b.data)

    def backward(g):
        grad_a = np.matmul(g, np.swapaxes(b.data, -1, -2)) if a.requires_grad else None
        grad_b = np.matmul(np.swapaxes(a.data, -1, -2), g) if b.requires_grad else None
        return (
            None if grad_a is None else _unbroadcast(grad_a, a.shape),
            None if grad_b is None else _unbroadcast(grad_b, b.shape),
        )

    return _result(data, "matmul", (a, b), backward)


@register("sigmoid")
def sigmoid(a):
    a = as_tensor(a)
    x = a.data
    data = np.empty_like(x)
    positive = x >= 0
    data[positive] = 1.0 / (1.0 + np.exp(-x[positive]))
    exp_x = np.exp(x[~positive])
    data[~positive] = exp_x / (1.0 + exp_x)
    return _result(data, "sigmoid", (a,), lambda g: (g * data * (1.0 - data),))


@register("tanh")
def tanh(a):
    a = as_tensor(a)
    data = np.tanh(a.data)
    return _result(data, "tanh", (a,), lambda g: (g * (1.0 - data * data),))


@register("relu")
def relu(a):
    a = as_tensor(a)
    mask = a.data > 0
    return _result(a.data * mask, "relu", (a,), lambda g: (g * mask,))


@register("exp")
def exp(a):
    a = as_tensor(a)
    data = np.exp(a.data)
    return _result(data, "exp", (a,), lambda g: (g * data,))


@register("log")
def log(a):
    a = as_tensor(a)
    if np.any(a.data <= 0):
        raise NumericalError("log of a non-positive value")
    return _result(np.log(a.data), "log", (a,), lambda g: (g / a.data,))


@register("square")
def square(a):
    a = as_tensor(a)
    return _result(a.data * a.data, "square", (a,), lambda g: (2.0 * a.data * g,))


@register("sum")
def tensor_sum(a, axis=None, keepdims=False):
    a = as_tensor(a)
    data = np.sum(a.data, axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return _result(np.asarray(data), "sum", (a,), backward)


@register("mean")
def mean(a, axis=None, keepdims=False):
    a = as_tensor(a)
    axes = tuple(range(a.ndim)) if axis is None else (axis if isinstance(axis, tuple) else (axis,))
    count = int(np.prod([a.shape[ax] for ax in axes]))
    data = np.mean(a.data, axis=axis, keepdims=keepdims)

    def backward(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g / count, a.shape).copy(),)

    return _result(np.asarray(data), "mean", (a,), backward)


@register("mean_pool")
def mean_pool(a, groups=1):
    """
    Average over frames and nodes: B x T x V x C -> B x (groups * C)

    With groups > 1 the nodes are split into that many equal consecutive blocks
    (one per person) and each block is averaged on its own, blocks in order.
    """
    a = as_tensor(a)
    if a.ndim != 4:
        raise DataError(f"mean_pool expects B x T x V x C, got {a.shape}")
    batch, frames, nodes, channels = a.shape
    if groups < 1 or nodes % groups:
        raise DataError(f"mean_pool cannot split {nodes} nodes into {groups} equal groups")
    if groups == 1:
        return mean(a, axis=(1, 2))
    blocks = reshape(a, (batch, frames, groups, nodes // groups, channels))
    return reshape(mean(blocks, axis=(1, 3)), (batch, groups * channels))


@register("reshape")
def reshape(a, shape):
    a = as_tensor(a)
    try:
        data = a.data.reshape(shape)
    except ValueError as e:
        raise DataError(f"reshape: cannot reshape {a.shape} into {shape}") from e
    return _result(data, "reshape", (a,), lambda g: (g.reshape(a.shape),))


@register("transpose")
def transpose(a, axes):
    a = as_tensor(a)
    inverse = np.argsort(axes)
    return _result(np.transpose(a.data, axes), "transpose", (a,), lambda g: (np.transpose(g, inverse),))


@register("getitem")
def getitem(a, index):
    a = as_tensor(a)
    data = a.data[index]

    parts = index if isinstance(index, tuple) else (index,)
    basic = all(isinstance(p, (slice, int, type(Ellipsis))) or p is None for p in parts)

    def backward(g):
        full = np.zeros_like(a.data)
        if basic:
            full[index] = g
        else:
            np.add.at(full, index, g)
        return (full,)

    return _result(np.array(data), "getitem", (a,), backward)


@register("concat")
def concat(tensors, axis=-1):
    tensors = [as_tensor(t) for t in tensors]
    try:
        data = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError as e:
        raise DataError(f"concat: incompatible shapes {[t.shape for t in tensors]}") from e
    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def backward(g):
        return tuple(np.split(g, bounds, axis=axis))

    return _result(data, "concat", tuple(tensors), backward)


@register("stack")
def stack(tensors, axis=0):
    tensors = [as_tensor(t) for t in tensors]
    try:
        data = np.stack([t.data for t in tensors], axis=axis)
    except ValueError as e:
        raise DataError(f"stack: incompatible shapes {[t.shape for t in tensors]}") from e

    def backward(g):
        return tuple(np.take(g, i, axis=axis) for i in range(len(tensors)))

    return _result(data, "stack", tuple(tensors), backward)


@register("log_softmax")
def log_softmax(a, axis=-1):
    a = as_tensor(a)
    shifted = a.data - np.max(a.data, axis=axis, keepdims=True)
    log_norm = np.log(np.sum(np.exp(shifted), axis=axis, keepdims=True))
    data = shifted - log_norm
    probs = np.exp(data)

    def backward(g):
        return (g - probs * np.sum(g, axis=axis, keepdims=True),)

    return _result(data, "log_softmax", (a,), backward)


@register("softmax")
def softmax(a, axis=-1):
    return exp(log_softmax(a, axis))


@register("graph_propagate")
def graph_propagate(x, adjacency):
    """
    Mix node features through a fixed adjacency: out[..., u, c] = sum_v A[u, v] x[..., v, c]

    Parameters:
    x (Tensor): ... x V x C features
    adjacency (np.ndarray): V x V matrix, not differentiated

    Returns:
    Tensor: ... x V x C
    """
    x = as_tensor(x)
    a = np.asarray(adjacency, dtype=x.dtype)
    if x.ndim < 2 or a.shape != (x.shape[-2], x.shape[-2]):
        raise DataError(f"graph_propagate: adjacency {a.shape} does not fit features {x.shape}")
    data = np.einsum("uv,...vc->...uc", a, x.data)
    return _result(data, "graph_propagate", (x,), lambda g: (np.einsum("uv,...uc->...vc", a, g),))


@register("temporal_conv1d")
def temporal_conv1d(x, weight, bias=None):
    """
    Per-node convolution over frames with zero same-padding

    out[b, t, v, :] = sum_j xpad[b, t + j, v, :] @ W[j] + bias

    Parameters:
    x (Tensor): B x T x V x C_in
    weight (Tensor): k x C_in x C_out, k odd
    bias (Tensor): C_out, optional

    Returns:
    Tensor: B x T x V x C_out
    """
    x = as_tensor(x)
    weight = as_tensor(weight, dtype=x.dtype)
    if x.ndim != 4 or weight.ndim != 3 or weight.shape[1] != x.shape[-1]:
        raise DataError(f"temporal_conv1d: input {x.shape} and kernel {weight.shape} do not fit")
    k = weight.shape[0]
    if k % 2 == 0:
        raise DataError(f"temporal_conv1d needs an odd kernel, got {k}")
    pad = k // 2
    frames = x.shape[1]
    padded = np.pad(x.data, ((0, 0), (pad, pad), (0, 0), (0, 0)))
    data = np.zeros(x.shape[:3] + (weight.shape[2],), dtype=x.dtype)
    for j in range(k):
        data += np.matmul(padded[:, j:j + frames], weight.data[j])
    parents = (x, weight)
    if bias is not None:
        bias = as_tensor(bias, dtype=x.dtype)
        data = data + bias.data
        parents = (x, weight, bias)

    def backward(g):
        grad_padded = np.zeros_like(padded) if x.requires_grad else None
        grad_weight = np.zeros_like(weight.data) if weight.requires_grad else None
        for j in range(k):
            if grad_padded is not None:
                grad_padded[:, j:j + frames] += np.matmul(g, weight.data[j].T)
            if grad_weight is not None:
                window = padded[:, j:j + frames].reshape(-1, x.shape[-1])
                grad_weight[j] = window.T @ g.reshape(-1, g.shape[-1])
        grads = (
            None if grad_padded is None else grad_padded[:, pad:pad + frames],
            grad_weight,
        )
        if bias is not None:
            grads += (g.reshape(-1, g.shape[-1]).sum(axis=0),)
        return grads

    return _result(data, "temporal_conv1d", parents, backward)


def numerical_gradient(fn, tensor, eps=1e-5):
    """
    Central finite differences of a scalar function w.r.t. one tensor

    Parameters:
    fn (callable): () -> scalar Tensor, reads tensor.data
    tensor (Tensor): Tensor to perturb in place
    eps (float): Step size

    Returns:
    np.ndarray: Estimated gradient, same shape as tensor
    """
    grad = np.zeros_like(tensor.data)
    flat = tensor.data.reshape(-1)
    grad_flat = grad.reshape(-1)
    for i in range(flat.size):
        original = flat[i]
        flat[i] = original + eps
        plus = fn().item()
        flat[i] = original - eps
        minus = fn().item()
        flat[i] = original
        grad_flat[i] = (plus - minus) / (2 * eps)
    return grad


def relative_error(analytic, numeric):
    analytic = np.asarray(analytic)
    numeric = np.asarray(numeric)
    scale = np.linalg.norm(analytic) + np.linalg.norm(numeric)
    if scale == 0:
        return 0.0
    return float(np.linalg.norm(analytic - numeric) / scale)


def gradient_check(fn, tensors, eps=1e-5):
    """
    Compare reverse-mode gradients against central finite differences

    Parameters:
    fn (callable): () -> scalar Tensor built from the given tensors
    tensors (list[Tensor] | dict): Leaves that require grad
    eps (float): Finite-difference step

    Returns:
    dict: name or position -> relative error
    """
    items = tensors.items() if isinstance(tensors, dict) else enumerate(tensors)
    items = list(items)
    for _, t in items:
        t.zero_grad()
    fn().backward()
    errors = {}
    for key, t in items:
        analytic = np.zeros_like(t.data) if t.grad is None else t.grad.copy()
        errors[key] = relative_error(analytic, numerical_gradient(fn, t, eps))
    return errors
