"""Minimal reverse-mode differentiation on numpy arrays.

Tensors record the operation that produced them; 'Tensor.backward' walks
the graph in reverse topological order and accumulates gradients into every
tensor that requires them. Layers are 'Module' subclasses holding
'Parameter' tensors, in float32 unless switched to float64 for gradient
checks.
"""
import logging
from contextlib import contextmanager

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .constants import (
    ADAM_BETAS,
    ADAM_EPSILON,
    LEARNING_RATE,
    BATCH_NORM_EPSILON,
    BATCH_NORM_MOMENTUM,
)
from .exceptions import ShapeError

log = logging.getLogger(__name__)

# Piecewise-linear decisions (rectifier masks, max-pool winners) recorded
#   while a gradient check evaluates perturbed losses.
_DECISION_RECORD = None


def _record_decision(value):
    if _DECISION_RECORD is not None:
        _DECISION_RECORD.append(value)


@contextmanager
def record_decisions():
    global _DECISION_RECORD
    previous = _DECISION_RECORD
    _DECISION_RECORD = []
    try:
        yield _DECISION_RECORD
    finally:
        _DECISION_RECORD = previous


class Tensor(object):
    """Array node of the computation graph.

    Args:
        data (np.ndarray): Values.
        parents (tuple[Tensor, ...]): Inputs of the producing operation.
        backward (Optional[Callable[[np.ndarray], None]]): Propagates the
            output gradient to the parents.
        requires_grad (bool): Gradient should be accumulated.

    """

    __array_priority__ = 1000

    def __init__(self, data, parents=(), backward=None, requires_grad=False):
        data = np.asarray(data)
        if data.dtype.kind != "f":
            data = data.astype(np.float32)
        self.data = data
        self.grad = None
        self.requires_grad = bool(
            requires_grad or any(parent.requires_grad for parent in parents)
        )
        self._parents = tuple(parents) if self.requires_grad else ()
        self._backward = backward if self.requires_grad else None

    def __repr__(self):
        return "Tensor(shape={}, dtype={})".format(
            self.data.shape, self.data.dtype
        )

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def numpy(self):
        return self.data

    def detach(self):
        return Tensor(self.data)

    def accumulate(self, grad):
        if not self.requires_grad:
            return
        if self.grad is None:
            self.grad = np.array(grad, dtype=self.data.dtype)
        else:
            self.grad = self.grad + grad

    def backward(self, grad=None):
        """Accumulate gradients of this tensor into the graph leaves."""
        if grad is None:
            if self.data.size != 1:
                raise ShapeError(
                    (1, ), self.data.shape, "Backward needs a scalar output"
                )
            grad = np.ones_like(self.data)
        order = []
        visited = set()
        stack = [(self, False)]
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
                if id(parent) not in visited:
                    stack.append((parent, False))
        self.accumulate(grad)
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    # operators
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, neg(as_tensor(other, self.dtype)))

    def __rsub__(self, other):
        return add(as_tensor(other, self.dtype), neg(self))

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def sum(self):
        return total(self)

    def mean(self):
        return mean(self)


class Parameter(Tensor):
    def __init__(self, data):
        super(Parameter, self).__init__(data, requires_grad=True)


def as_tensor(value, dtype=None):
    if isinstance(value, Tensor):
        return value
    value = np.asarray(value)
    if dtype is not None:
        value = value.astype(dtype)
    return Tensor(value)


def _unbroadcast(grad, shape):
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


# --- Elementwise ---
def add(a, b):
    a = as_tensor(a)
    b = as_tensor(b, a.dtype)

    def backward(grad):
        a.accumulate(_unbroadcast(grad, a.shape))
        b.accumulate(_unbroadcast(grad, b.shape))

    return Tensor(a.data + b.data, (a, b), backward)


def neg(a):
    def backward(grad):
        a.accumulate(-grad)

    return Tensor(-a.data, (a, ), backward)


def mul(a, b):
    a = as_tensor(a)
    b = as_tensor(b, a.dtype)

    def backward(grad):
        a.accumulate(_unbroadcast(grad * b.data, a.shape))
        b.accumulate(_unbroadcast(grad * a.data, b.shape))

    return Tensor(a.data * b.data, (a, b), backward)


def relu(a):
    mask = a.data > 0
    _record_decision(mask)

    def backward(grad):
        a.accumulate(grad * mask)

    return Tensor(a.data * mask, (a, ), backward)


def reshape(a, shape):
    def backward(grad):
        a.accumulate(grad.reshape(a.shape))

    return Tensor(a.data.reshape(shape), (a, ), backward)


def transpose(a):
    """Swap the axes of a 2D tensor."""
    def backward(grad):
        a.accumulate(grad.T)

    return Tensor(a.data.T, (a, ), backward)


def concat(tensors, axis=-1):
    tensors = [as_tensor(tensor) for tensor in tensors]
    sizes = [tensor.shape[axis] for tensor in tensors]
    bounds = np.cumsum([0] + sizes)

    def backward(grad):
        for tensor, start, stop in zip(tensors, bounds[:-1], bounds[1:]):
            index = [slice(None)] * grad.ndim
            index[axis] = slice(start, stop)
            tensor.accumulate(grad[tuple(index)])

    return Tensor(
        np.concatenate([tensor.data for tensor in tensors], axis=axis),
        tensors,
        backward,
    )


def take_rows(a, indices):
    """Rows of a 2D tensor by integer index, repeats allowed."""
    indices = np.asarray(indices, dtype=int)

    def backward(grad):
        full = np.zeros_like(a.data)
        np.add.at(full, indices, grad)
        a.accumulate(full)

    return Tensor(a.data[indices], (a, ), backward)


def columns(a, start, stop):
    """Slice of the last axis."""
    def backward(grad):
        full = np.zeros_like(a.data)
        full[..., start:stop] = grad
        a.accumulate(full)

    return Tensor(a.data[..., start:stop], (a, ), backward)


def sin(a):
    def backward(grad):
        a.accumulate(grad * np.cos(a.data))

    return Tensor(np.sin(a.data), (a, ), backward)


def cos(a):
    def backward(grad):
        a.accumulate(-grad * np.sin(a.data))

    return Tensor(np.cos(a.data), (a, ), backward)


def total(a):
    def backward(grad):
        a.accumulate(np.broadcast_to(grad, a.shape))

    return Tensor(np.sum(a.data).reshape(()), (a, ), backward)


def mean(a):
    count = a.data.size

    def backward(grad):
        a.accumulate(np.broadcast_to(grad / count, a.shape))

    return Tensor((np.sum(a.data) / count).reshape(()), (a, ), backward)


def mse(prediction, target):
    """Mean squared error against a constant or tensor target."""
    prediction = as_tensor(prediction)
    target = as_tensor(target, prediction.dtype)
    diff = prediction.data - target.data
    count = diff.size

    def backward(grad):
        scaled = grad * (2.0 / count) * diff
        prediction.accumulate(scaled)
        target.accumulate(-scaled)

    return Tensor(
        (np.sum(diff * diff) / count).reshape(()),
        (prediction, target),
        backward,
    )


# --- Linear algebra ---
def matmul(a, b):
    a = as_tensor(a)
    b = as_tensor(b, a.dtype)

    def backward(grad):
        a.accumulate(grad @ np.swapaxes(b.data, -1, -2))
        b.accumulate(_unbroadcast(
            np.swapaxes(a.data, -1, -2) @ grad, b.shape
        ))

    return Tensor(a.data @ b.data, (a, b), backward)


def rowwise_dense(x, weight, bias):
    """Dense layer evaluated independently per row.

    Each output row depends only on its input row with a fixed summation
    order, so reordering rows reorders outputs bit-exactly.
    """
    def backward(grad):
        x.accumulate(np.einsum("nk,dk->nd", grad, weight.data))
        weight.accumulate(np.einsum("nd,nk->dk", x.data, grad))
        bias.accumulate(grad.sum(axis=0))

    data = np.einsum("nd,dk->nk", x.data, weight.data) + bias.data
    return Tensor(data, (x, weight, bias), backward)


def max_over(a, axis):
    """Maximum along axis, gradient routed to the first maximal element."""
    winners = np.argmax(a.data, axis=axis)
    _record_decision(winners)
    expanded = np.expand_dims(winners, axis)

    def backward(grad):
        full = np.zeros_like(a.data)
        np.put_along_axis(full, expanded, np.expand_dims(grad, axis), axis)
        a.accumulate(full)

    return Tensor(
        np.take_along_axis(a.data, expanded, axis).squeeze(axis),
        (a, ),
        backward,
    )


def softmax_cross_entropy(logits, labels):
    """Mean cross entropy of integer class labels."""
    labels = np.asarray(labels, dtype=int)
    shifted = logits.data - logits.data.max(axis=1, keepdims=True)
    exp = np.exp(shifted)
    probs = exp / exp.sum(axis=1, keepdims=True)
    count = len(labels)
    rows = np.arange(count)
    loss = -np.mean(np.log(probs[rows, labels] + 1e-30))

    def backward(grad):
        delta = probs.copy()
        delta[rows, labels] -= 1.0
        logits.accumulate(grad * delta / count)

    return Tensor(
        np.asarray(loss, dtype=logits.dtype).reshape(()), (logits, ), backward
    )


# --- Convolutions ---
def _dilated_windows(values, kernel, dilation):
    span = dilation * (kernel - 1) + 1
    windows = sliding_window_view(values, (span, span), axis=(2, 3))
    return windows[..., ::dilation, ::dilation]


def conv2d(x, weight, bias, dilation=1):
    """Valid, stride one cross-correlation.

    Args:
        x (Tensor): (N, C, H, W) input.
        weight (Tensor): (O, C, k, k) kernels.
        bias (Tensor): (O, ) bias.
        dilation (int): Kernel dilation.

    Returns:
        Tensor: (N, O, H - span + 1, W - span + 1) output.

    """
    kernel = weight.shape[-1]
    span = dilation * (kernel - 1) + 1
    windows = _dilated_windows(x.data, kernel, dilation)
    data = np.einsum("nchwij,ocij->nohw", windows, weight.data)
    data = data + bias.data[None, :, None, None]

    def backward(grad):
        weight.accumulate(np.einsum("nchwij,nohw->ocij", windows, grad))
        bias.accumulate(grad.sum(axis=(0, 2, 3)))
        if x.requires_grad:
            pad = span - 1
            padded = np.pad(grad, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
            grad_windows = _dilated_windows(padded, kernel, dilation)
            x.accumulate(np.einsum(
                "nohwij,ocij->nchw",
                grad_windows,
                weight.data[:, :, ::-1, ::-1],
            ))

    return Tensor(data, (x, weight, bias), backward)


def conv_transpose2d(x, weight, bias, dilation=1):
    """Transposed convolution, the adjoint of 'conv2d'.

    Args:
        x (Tensor): (N, C, H, W) input.
        weight (Tensor): (C, O, k, k) kernels.
        bias (Tensor): (O, ) bias.
        dilation (int): Kernel dilation.

    Returns:
        Tensor: (N, O, H + span - 1, W + span - 1) output.

    """
    kernel = weight.shape[-1]
    span = dilation * (kernel - 1) + 1
    pad = span - 1
    padded = np.pad(x.data, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    windows = _dilated_windows(padded, kernel, dilation)
    data = np.einsum(
        "nchwij,coij->nohw", windows, weight.data[:, :, ::-1, ::-1]
    )
    data = data + bias.data[None, :, None, None]

    def backward(grad):
        grad_windows = _dilated_windows(grad, kernel, dilation)
        weight.accumulate(np.einsum("nchw,nohwij->coij", x.data, grad_windows))
        bias.accumulate(grad.sum(axis=(0, 2, 3)))
        x.accumulate(np.einsum("nohwij,coij->nchw", grad_windows, weight.data))

    return Tensor(data, (x, weight, bias), backward)


def batch_norm(x, gamma, beta, axes, eps=BATCH_NORM_EPSILON):
    """Normalize with batch statistics over 'axes'.

    Returns:
        tuple[Tensor, np.ndarray, np.ndarray]: Output, batch mean and
            biased batch variance.

    """
    mean_value = x.data.mean(axis=axes, keepdims=True)
    centered = x.data - mean_value
    var = (centered ** 2).mean(axis=axes, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    normalized = centered * inv_std
    shape = mean_value.shape
    count = x.data.size // int(np.prod(shape))
    data = normalized * gamma.data.reshape(shape) + beta.data.reshape(shape)

    def backward(grad):
        gamma.accumulate(
            (grad * normalized).sum(axis=axes).reshape(gamma.shape)
        )
        beta.accumulate(grad.sum(axis=axes).reshape(beta.shape))
        if x.requires_grad:
            grad_norm = grad * gamma.data.reshape(shape)
            x.accumulate(inv_std / count * (
                count * grad_norm
                - grad_norm.sum(axis=axes, keepdims=True)
                - normalized * (grad_norm * normalized).sum(
                    axis=axes, keepdims=True
                )
            ))

    out = Tensor(data.astype(x.dtype), (x, gamma, beta), backward)
    return out, mean_value.reshape(-1), var.reshape(-1)


# --- Modules ---
class Module(object):
    """Base of layers and networks.

    Parameters and child modules are discovered from instance attributes in
    assignment order; '_buffers' names non-trainable arrays stored with the
    weights.
    """

    _buffers = ()

    def __init__(self):
        self.training = True

    def children(self):
        return [
            (name, value)
            for name, value in vars(self).items()
            if isinstance(value, Module)
        ]

    def named_parameters(self, prefix=""):
        output = []
        for name, value in vars(self).items():
            if isinstance(value, Parameter):
                output.append((prefix + name, value))
            elif isinstance(value, Module):
                output.extend(value.named_parameters(prefix + name + "."))
        return output

    def parameters(self):
        return [param for _, param in self.named_parameters()]

    def named_buffers(self, prefix=""):
        output = [
            (prefix + name, getattr(self, name)) for name in self._buffers
        ]
        for name, child in self.children():
            output.extend(child.named_buffers(prefix + name + "."))
        return output

    def train(self, mode=True):
        self.training = mode
        for _, child in self.children():
            child.train(mode)
        return self

    def eval(self):
        return self.train(False)

    def zero_grad(self):
        for param in self.parameters():
            param.grad = None

    def set_trainable(self, trainable):
        for param in self.parameters():
            param.requires_grad = trainable

    def astype(self, dtype):
        """Cast parameters and buffers in place."""
        for param in self.parameters():
            param.data = param.data.astype(dtype)
            param.grad = None
        self._cast_buffers(dtype)
        return self

    def _cast_buffers(self, dtype):
        for name in self._buffers:
            setattr(self, name, getattr(self, name).astype(dtype))
        for _, child in self.children():
            child._cast_buffers(dtype)

    def state_dict(self):
        state = {}
        for name, param in self.named_parameters():
            state[name] = param.data.copy()
        for name, buffer in self.named_buffers():
            state[name] = np.array(buffer, copy=True)
        return state

    def load_state_dict(self, state):
        params = dict(self.named_parameters())
        for name, param in params.items():
            if name not in state:
                raise KeyError("Missing weight \"{}\"".format(name))
            value = np.asarray(state[name], dtype=param.data.dtype)
            if value.shape != param.data.shape:
                raise ShapeError(param.data.shape, value.shape)
            param.data = value.copy()
        for name, _ in self.named_buffers():
            if name not in state:
                raise KeyError("Missing buffer \"{}\"".format(name))
            self._set_buffer(name, np.asarray(state[name]))

    def _set_buffer(self, dotted, value):
        owner = self
        parts = dotted.split(".")
        for part in parts[:-1]:
            owner = getattr(owner, part)
        current = getattr(owner, parts[-1])
        setattr(owner, parts[-1], value.astype(current.dtype).copy())

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)

    def forward(self, *args, **kwargs):
        raise NotImplementedError


@contextmanager
def evaluating(module):
    """Run 'module' in evaluation mode, restoring its mode afterwards."""
    previous = module.training
    module.eval()
    try:
        yield module
    finally:
        module.train(previous)


def _glorot(rng, fan_in, fan_out, shape):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, shape).astype(np.float32)


class Linear(Module):
    """Fully connected layer with zero initialized bias.

    With 'rowwise' the evaluation mode output of a row does not depend on
    the other rows, bit for bit.
    """

    def __init__(self, n_in, n_out, rng, rowwise=False):
        super(Linear, self).__init__()
        self.weight = Parameter(_glorot(rng, n_in, n_out, (n_in, n_out)))
        self.bias = Parameter(np.zeros(n_out, dtype=np.float32))
        self.rowwise = rowwise

    def forward(self, x):
        x = as_tensor(x, self.weight.dtype)
        if self.rowwise and not self.training:
            return rowwise_dense(x, self.weight, self.bias)
        return matmul(x, self.weight) + self.bias


class Conv2d(Module):
    def __init__(self, n_in, n_out, kernel, rng, dilation=1):
        super(Conv2d, self).__init__()
        fan = kernel * kernel
        self.weight = Parameter(_glorot(
            rng, n_in * fan, n_out * fan, (n_out, n_in, kernel, kernel)
        ))
        self.bias = Parameter(np.zeros(n_out, dtype=np.float32))
        self.dilation = dilation

    def forward(self, x):
        return conv2d(
            as_tensor(x, self.weight.dtype), self.weight, self.bias,
            self.dilation
        )


class ConvTranspose2d(Module):
    def __init__(self, n_in, n_out, kernel, rng, dilation=1):
        super(ConvTranspose2d, self).__init__()
        fan = kernel * kernel
        self.weight = Parameter(_glorot(
            rng, n_in * fan, n_out * fan, (n_in, n_out, kernel, kernel)
        ))
        self.bias = Parameter(np.zeros(n_out, dtype=np.float32))
        self.dilation = dilation

    def forward(self, x):
        return conv_transpose2d(
            as_tensor(x, self.weight.dtype), self.weight, self.bias,
            self.dilation
        )


class BatchNorm(Module):
    """Batch normalization over all axes except the feature axis 1.

    Training mode normalizes with batch statistics and updates running
    statistics; evaluation mode is the affine map of the running ones.
    """

    _buffers = ("running_mean", "running_var")

    def __init__(
        self, n_features, eps=BATCH_NORM_EPSILON,
        momentum=BATCH_NORM_MOMENTUM
    ):
        super(BatchNorm, self).__init__()
        self.gamma = Parameter(np.ones(n_features, dtype=np.float32))
        self.beta = Parameter(np.zeros(n_features, dtype=np.float32))
        self.running_mean = np.zeros(n_features, dtype=np.float32)
        self.running_var = np.ones(n_features, dtype=np.float32)
        self.eps = eps
        self.momentum = momentum

    def forward(self, x):
        x = as_tensor(x, self.gamma.dtype)
        axes = (0, ) + tuple(range(2, x.data.ndim))
        shape = [1] * x.data.ndim
        shape[1] = -1
        if self.training:
            out, batch_mean, batch_var = batch_norm(
                x, self.gamma, self.beta, axes, self.eps
            )
            count = x.data.size // x.data.shape[1]
            unbiased = batch_var * count / max(count - 1, 1)
            m = self.momentum
            self.running_mean = (
                (1.0 - m) * self.running_mean + m * batch_mean
            ).astype(self.running_mean.dtype)
            self.running_var = (
                (1.0 - m) * self.running_var + m * unbiased
            ).astype(self.running_var.dtype)
            return out
        inv_std = 1.0 / np.sqrt(self.running_var + self.eps)
        scale = reshape(self.gamma, shape) * inv_std.reshape(shape)
        shift = reshape(self.beta, shape) - scale * self.running_mean.reshape(
            shape
        )
        return x * scale + shift


class ReLU(Module):
    def forward(self, x):
        return relu(x)


class Flatten(Module):
    def forward(self, x):
        return reshape(x, (x.shape[0], -1))


class Unflatten(Module):
    def __init__(self, shape):
        super(Unflatten, self).__init__()
        self.shape = tuple(shape)

    def forward(self, x):
        return reshape(x, (x.shape[0], ) + self.shape)


class Sequential(Module):
    def __init__(self, *layers):
        super(Sequential, self).__init__()
        self.length = len(layers)
        for index, layer in enumerate(layers):
            setattr(self, "layer{}".format(index), layer)

    def layers(self):
        return [getattr(self, "layer{}".format(i)) for i in range(self.length)]

    def forward(self, x):
        for layer in self.layers():
            x = layer(x)
        return x


class Adam(object):
    """Adaptive moment estimation.

    Args:
        params (list[Parameter]): Parameters to update.
        lr (float): Learning rate.
        betas (tuple[float, float]): Moment decay rates.
        eps (float): Denominator term.

    """

    def __init__(self, params, lr=LEARNING_RATE, betas=ADAM_BETAS,
                 eps=ADAM_EPSILON):
        self._params = list(params)
        self._lr = lr
        self._betas = betas
        self._eps = eps
        self._step = 0
        self._m = [np.zeros_like(param.data) for param in self._params]
        self._v = [np.zeros_like(param.data) for param in self._params]

    @property
    def step_count(self):
        return self._step

    def zero_grad(self):
        for param in self._params:
            param.grad = None

    def step(self):
        self._step += 1
        beta1, beta2 = self._betas
        correction1 = 1.0 - beta1 ** self._step
        correction2 = 1.0 - beta2 ** self._step
        for index, param in enumerate(self._params):
            if param.grad is None:
                continue
            grad = param.grad
            self._m[index] = beta1 * self._m[index] + (1.0 - beta1) * grad
            self._v[index] = (
                beta2 * self._v[index] + (1.0 - beta2) * grad * grad
            )
            m_hat = self._m[index] / correction1
            v_hat = self._v[index] / correction2
            update = self._lr * m_hat / (np.sqrt(v_hat) + self._eps)
            param.data = (param.data - update).astype(param.data.dtype)


def gradient_check(
    module,
    forward,
    h=1e-3,
    max_elements=200,
    seed=0,
    atol=1e-5,
):
    """Compare analytic parameter gradients with central differences.

    The module is switched to float64 evaluation mode. The scalar checked is
    a fixed random projection of the output. Perturbations that flip a
    rectified-linear mask or a max-pool winner are skipped because the
    finite difference straddles a kink there.

    Args:
        module (Module): Module to check, modified in place.
        forward (Callable[[], Tensor]): Evaluates the module output.
        h (float): Finite difference step.
        max_elements (int): Elements sampled per parameter.
        seed (int): Seed for projection and element sampling.
        atol (float): Gradient magnitude below which errors are absolute.

    Returns:
        float: Maximum relative error.

    """
    module.astype(np.float64)
    module.eval()
    rng = np.random.default_rng(seed)
    params = module.parameters()
    for param in params:
        param.requires_grad = True

    with record_decisions() as base_decisions:
        output = forward()
    projection = rng.normal(size=output.shape) / np.sqrt(output.data.size)

    def loss_value():
        with record_decisions() as decisions:
            value = float(np.sum(forward().data * projection))
        return value, decisions

    module.zero_grad()
    total(forward() * projection).backward()

    worst = 0.0
    skipped = 0
    for param in params:
        analytic = (
            np.zeros_like(param.data) if param.grad is None
            else param.grad.copy()
        )
        flat = param.data.reshape(-1)
        count = flat.size
        if count > max_elements:
            indices = rng.choice(count, max_elements, replace=False)
        else:
            indices = np.arange(count)
        for index in indices:
            original = flat[index]
            flat[index] = original + h
            plus, plus_decisions = loss_value()
            flat[index] = original - h
            minus, minus_decisions = loss_value()
            flat[index] = original
            if not (
                _same_decisions(base_decisions, plus_decisions)
                and _same_decisions(base_decisions, minus_decisions)
            ):
                skipped += 1
                continue
            numeric = (plus - minus) / (2.0 * h)
            exact = analytic.reshape(-1)[index]
            scale = max(abs(numeric), abs(exact), atol)
            worst = max(worst, abs(numeric - exact) / scale)
    log.debug("Gradient check skipped {} kink elements".format(skipped))
    return worst


def _same_decisions(first, second):
    if len(first) != len(second):
        return False
    return all(np.array_equal(a, b) for a, b in zip(first, second))
