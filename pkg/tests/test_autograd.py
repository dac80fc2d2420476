import numpy as np
import pytest

from bubbledyn.autograd import (
    Tensor,
    Parameter,
    Linear,
    Conv2d,
    ConvTranspose2d,
    BatchNorm,
    Sequential,
    ReLU,
    Adam,
    batch_norm,
    concat,
    conv2d,
    conv_transpose2d,
    max_over,
    mse,
    softmax_cross_entropy,
    total,
    gradient_check,
)
from bubbledyn.exceptions import ShapeError
from bubbledyn.models import MembraneDynamicsNet, TactileAutoencoder


def numeric_gradient(function, values, h=1e-6):
    grad = np.zeros_like(values)
    flat = values.reshape(-1)
    for index in range(flat.size):
        original = flat[index]
        flat[index] = original + h
        plus = function()
        flat[index] = original - h
        minus = function()
        flat[index] = original
        grad.reshape(-1)[index] = (plus - minus) / (2.0 * h)
    return grad


def test_shared_input_accumulates():
    x = Parameter(np.array([1.5, -2.0]))
    (x * x + x).sum().backward()
    np.testing.assert_allclose(x.grad, [4.0, -3.0])


def test_backward_needs_scalar():
    x = Parameter(np.ones(3))
    with pytest.raises(ShapeError):
        (x * 2.0).backward()


def test_max_routes_to_first_winner():
    x = Parameter(np.array([[1.0, 3.0, 3.0], [5.0, 0.0, 1.0]]))
    out = max_over(x, 1)
    np.testing.assert_array_equal(out.data, [3.0, 5.0])
    out.sum().backward()
    np.testing.assert_array_equal(x.grad, [[0, 1, 0], [1, 0, 0]])


def test_mse_gradient(rng):
    prediction = Parameter(rng.normal(size=(4, 3)))
    target = rng.normal(size=(4, 3))
    mse(prediction, target).backward()
    np.testing.assert_allclose(
        prediction.grad, 2.0 * (prediction.data - target) / 12.0
    )


def test_cross_entropy_gradient(rng):
    logits = Parameter(rng.normal(size=(5, 4)))
    labels = np.array([0, 3, 1, 1, 2])
    softmax_cross_entropy(logits, labels).backward()
    numeric = numeric_gradient(
        lambda: float(softmax_cross_entropy(logits, labels).data),
        logits.data,
    )
    np.testing.assert_allclose(logits.grad, numeric, atol=1e-8)


def test_batch_norm_input_gradient(rng):
    x = Parameter(rng.normal(size=(6, 3, 2, 2)))
    gamma = Parameter(rng.normal(size=3))
    beta = Parameter(rng.normal(size=3))
    projection = rng.normal(size=x.shape)
    axes = (0, 2, 3)

    def loss():
        out, _, _ = batch_norm(x, gamma, beta, axes)
        return float(np.sum(out.data * projection))

    out, _, _ = batch_norm(x, gamma, beta, axes)
    total(out * projection).backward()
    for param in (x, gamma, beta):
        np.testing.assert_allclose(
            param.grad, numeric_gradient(loss, param.data), atol=1e-7
        )


def test_conv_input_gradient(rng):
    x = Parameter(rng.normal(size=(2, 2, 9, 8)))
    weight = Parameter(rng.normal(size=(3, 2, 3, 3)))
    bias = Parameter(rng.normal(size=3))
    projection = rng.normal(size=(2, 3, 5, 4))

    def loss():
        return float(np.sum(conv2d(x, weight, bias, 2).data * projection))

    total(conv2d(x, weight, bias, 2) * projection).backward()
    np.testing.assert_allclose(
        x.grad, numeric_gradient(loss, x.data), atol=1e-7
    )


def test_transposed_conv_is_adjoint(rng):
    x = rng.normal(size=(1, 3, 6, 5))
    y = rng.normal(size=(1, 2, 10, 9))
    weight = rng.normal(size=(3, 2, 3, 3))
    zero_2 = Tensor(np.zeros(2))
    zero_3 = Tensor(np.zeros(3))
    forward = conv2d(Tensor(y), Tensor(weight), zero_3, 2).data
    backward = conv_transpose2d(Tensor(x), Tensor(weight), zero_2, 2).data
    assert backward.shape == y.shape
    assert np.sum(forward * x) == pytest.approx(np.sum(backward * y))


def test_linear_gradient_check(rng):
    layer = Linear(4, 3, rng)
    x = rng.normal(size=(5, 4))
    assert gradient_check(layer, lambda: layer(x)) <= 1e-7


@pytest.mark.parametrize("layer_cls", [Conv2d, ConvTranspose2d])
def test_convolution_gradient_check(rng, layer_cls):
    layer = layer_cls(2, 3, 5, rng, dilation=2)
    x = rng.normal(size=(2, 2, 11, 10))
    assert gradient_check(layer, lambda: layer(x)) <= 1e-5


def test_batch_norm_gradient_check(rng):
    net = Sequential(Linear(3, 4, rng), BatchNorm(4), ReLU())
    x = rng.normal(size=(8, 3))
    net(x)
    assert gradient_check(net, lambda: net(x)) <= 1e-5


def test_dynamics_net_gradient_check(rng):
    net = MembraneDynamicsNet(seed=3)
    inputs = [
        rng.normal(size=(3, size)) for size in (15, 6, 6, 10, 4)
    ]

    def forward():
        return concat(net(*inputs), axis=1)

    assert gradient_check(net, forward, max_elements=50) <= 1e-4


def test_autoencoder_gradient_check(rng):
    autoencoder = TactileAutoencoder(seed=1)
    maps = rng.normal(size=(2, 2, 25, 20))
    assert gradient_check(
        autoencoder, lambda: autoencoder(maps), max_elements=10
    ) <= 1e-4


def test_batch_norm_running_statistics(rng):
    layer = BatchNorm(2, momentum=0.5)
    x = rng.normal(2.0, 3.0, size=(50, 2))
    layer(x)
    np.testing.assert_allclose(
        layer.running_mean, 0.5 * x.mean(axis=0), rtol=1e-5
    )
    layer.eval()
    first = layer(x).data
    second = layer(x).data
    np.testing.assert_array_equal(first, second)


def test_adam_minimizes_quadratic():
    param = Parameter(np.array([0.0, 10.0]))
    optimizer = Adam([param], lr=0.1)
    for _ in range(1000):
        optimizer.zero_grad()
        mse(param, np.array([3.0, -1.0])).backward()
        optimizer.step()
    np.testing.assert_allclose(param.data, [3.0, -1.0], atol=0.05)
    assert optimizer.step_count == 1000


def test_state_dict_roundtrip(rng):
    source = Sequential(Linear(3, 4, rng), BatchNorm(4))
    source(rng.normal(size=(5, 3)))
    target = Sequential(Linear(3, 4, rng), BatchNorm(4))
    target.load_state_dict(source.state_dict())
    for key, value in source.state_dict().items():
        np.testing.assert_array_equal(target.state_dict()[key], value)


def test_state_dict_shape_mismatch(rng):
    source = Linear(3, 4, rng)
    target = Linear(4, 4, rng)
    with pytest.raises(ShapeError):
        target.load_state_dict(source.state_dict())
